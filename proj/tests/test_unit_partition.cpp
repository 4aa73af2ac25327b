#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <random>

#include "fixtures.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/unit_partition.hpp"

namespace unitlo {
namespace {

// Mean and (n-1) scatter of the given points, recomputed from scratch.
std::pair<Eigen::Vector3d, Eigen::Matrix3d> raw_moments(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) s += (p - mean) * (p - mean).transpose();
  if (pts.size() > 1) s /= static_cast<double>(pts.size() - 1);
  return {mean, s};
}

TEST(Partition, SinglePoint) {
  PointCloud c;
  c.points = {{0.5, 0.5, 0.5}};
  const UnitGrid g = partition(c, {1, 1, 1});
  ASSERT_EQ(g.size(), 1u);
  const GeometricUnit& u = g.units.begin()->second;
  EXPECT_EQ(u.offset.v, Eigen::Vector3d(0.5, 0.5, 0.5));
  EXPECT_EQ(u.scatter, Eigen::Matrix3d::Zero());
  EXPECT_EQ(u.point_count, 1u);
}

TEST(Partition, TwoCells) {
  PointCloud c;
  c.points = {{0.1, 0, 0}, {3.0, 0, 0}};
  EXPECT_EQ(partition(c, {1, 1, 1}).size(), 2u);
}

TEST(Partition, MatchesFloorAssignment) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  PointCloud c;
  for (int i = 0; i < 100; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  const UnitGrid g = partition(c, {1, 1, 1});
  EXPECT_LE(g.size(), 8u);
  std::size_t total = 0;
  for (const auto& [key, unit] : g.units) {
    total += unit.point_count;
    EXPECT_EQ(unit.point_indices.size(), unit.point_count);
    for (const std::uint32_t i : unit.point_indices) {
      const Eigen::Vector3d& p = c.points[i];
      EXPECT_EQ(key, (GridKey{static_cast<int>(std::floor(p.x())), static_cast<int>(std::floor(p.y())),
                              static_cast<int>(std::floor(p.z()))}));
    }
  }
  EXPECT_EQ(total, c.size());
}

TEST(Partition, StatisticsInvariants) {
  const PointCloud c = test::structured_scene(3);
  const Eigen::Vector3d size(1.6, 1.6, 3.2);
  const UnitGrid g = partition(c, size);
  for (const auto& [key, unit] : g.units) {
    ASSERT_GE(unit.point_count, 1u);
    EXPECT_LT((unit.scatter - unit.scatter.transpose()).norm(), 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(unit.scatter);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    const Eigen::Vector3d lo = cell_min_corner(key, size);
    for (const std::uint32_t i : unit.point_indices) {
      EXPECT_TRUE(((c.points[i] - lo).array() >= 0.0).all());
      EXPECT_TRUE(((c.points[i] - lo).array() < size.array()).all());
    }
    std::vector<Eigen::Vector3d> pts;
    for (const std::uint32_t i : unit.point_indices) pts.push_back(c.points[i]);
    const auto [mean, scatter] = raw_moments(pts);
    EXPECT_LT((unit.centroid - mean).norm(), 1e-10);
    EXPECT_LT((unit.scatter - scatter).norm(), 1e-10);
  }
}

TEST(Partition, PermutationInvariant) {
  PointCloud c = test::structured_scene(4);
  const UnitGrid a = partition(c, {1.6, 1.6, 3.2});
  std::vector<std::uint32_t> perm(c.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::mt19937_64 rng(2);
  std::shuffle(perm.begin(), perm.end(), rng);
  PointCloud shuffled;
  for (const std::uint32_t i : perm) shuffled.points.push_back(c.points[i]);
  const UnitGrid b = partition(shuffled, {1.6, 1.6, 3.2});
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [key, ua] : a.units) {
    const GeometricUnit& ub = b.units.at(key);
    EXPECT_EQ(ua.point_count, ub.point_count);
    EXPECT_LT((ua.centroid - ub.centroid).norm(), 1e-10);
    EXPECT_LT((ua.scatter - ub.scatter).norm(), 1e-10);
    std::vector<Eigen::Vector3d> pa, pb;
    for (auto i : ua.point_indices) pa.push_back(c.points[i]);
    for (auto i : ub.point_indices) pb.push_back(shuffled.points[i]);
    const auto less = [](const Eigen::Vector3d& x, const Eigen::Vector3d& y) {
      return std::lexicographical_compare(x.data(), x.data() + 3, y.data(), y.data() + 3);
    };
    std::sort(pa.begin(), pa.end(), less);
    std::sort(pb.begin(), pb.end(), less);
    EXPECT_EQ(pa, pb);
  }
}

TEST(Partition, InvalidSize) {
  EXPECT_THROW((void)partition(PointCloud{}, {1, 0, 1}), InvalidSizeError);
}

TEST(Coarsen, SingleUnit) {
  PointCloud c;
  c.points = {{0.2, 0.2, 0.2}, {0.4, 0.3, 0.1}, {0.9, 0.1, 0.5}};
  const UnitGrid g = partition(c, {1, 1, 1});
  const UnitGrid p = coarsen(g);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.level, 2);
  const GeometricUnit& child = g.units.begin()->second;
  const GeometricUnit& parent = p.units.begin()->second;
  EXPECT_EQ(parent.point_count, child.point_count);
  EXPECT_LT((parent.centroid - child.centroid).norm(), 1e-12);
  EXPECT_LT((parent.scatter - child.scatter).norm(), 1e-12);
  EXPECT_EQ(p.unit_size, Eigen::Vector3d(2, 2, 2));
}

TEST(Coarsen, SiblingMidpoint) {
  PointCloud c;
  c.points = {{0.5, 0.5, 0.5}, {1.5, 0.5, 0.5}};
  const UnitGrid p = coarsen(partition(c, {1, 1, 1}));
  ASSERT_EQ(p.size(), 1u);
  EXPECT_LT((p.units.begin()->second.centroid - Eigen::Vector3d(1.0, 0.5, 0.5)).norm(), 1e-12);
}

TEST(Coarsen, PooledMomentsMatchRecompute) {
  const PointCloud c = test::structured_scene(5);
  UnitGrid g = partition(c, {0.8, 0.8, 1.6});
  for (int level = 2; level <= kMaxUnitLevel; ++level) {
    g = coarsen(g);
    EXPECT_EQ(g.level, level);
    std::size_t total = 0;
    for (const auto& [key, unit] : g.units) {
      std::vector<Eigen::Vector3d> pts;
      for (auto i : unit.point_indices) pts.push_back(c.points[i]);
      const auto [mean, scatter] = raw_moments(pts);
      EXPECT_LT((unit.centroid - mean).norm(), 1e-10);
      EXPECT_LT((unit.scatter - scatter).norm(), 1e-10);
      EXPECT_EQ(key, grid_key(unit.centroid, g.unit_size));
      total += unit.point_count;
    }
    EXPECT_EQ(total, c.size());
  }
  EXPECT_THROW((void)coarsen(g), MaxLevelError);
}

}  // namespace
}  // namespace unitlo
