#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "fixtures.hpp"
#include "unitlo/covariance.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/scan2map.hpp"

namespace unitlo {
namespace {

const Eigen::Vector3d kUnitSize(1.6, 1.6, 3.2);

std::vector<UnitTransform> keyed_units(std::size_t n) {
  std::vector<UnitTransform> units(n);
  for (std::size_t i = 0; i < n; ++i) units[i].key = {static_cast<int>(i), 0, 0};
  return units;
}

VotingWeights product_weights(const std::vector<double>& products) {
  // w_rot = 1 / n normalized, w_tr carries the product profile
  VotingWeights w;
  w.rot.assign(products.size(), 1.0 / products.size());
  double s = 0.0;
  for (double p : products) s += p;
  for (double p : products) w.tr.push_back(p / s);
  return w;
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile_linear({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 60.0), 6.4);
  EXPECT_DOUBLE_EQ(percentile_linear({3, 1, 2}, 50.0), 2.0);
  EXPECT_DOUBLE_EQ(percentile_linear({5}, 60.0), 5.0);
  EXPECT_DOUBLE_EQ(percentile_linear({0, 10}, 100.0), 10.0);
}

TEST(SelectRepresentative, TopFourOfTen) {
  std::vector<double> p;
  for (int i = 1; i <= 10; ++i) p.push_back(i / 55.0);
  const auto units = keyed_units(10);
  const auto keys = select_representative_units(product_weights(p), units);
  ASSERT_EQ(keys.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(keys[i].x, 6 + i);
}

TEST(SelectRepresentative, AllTiedIsEmpty) {
  const auto units = keyed_units(6);
  EXPECT_TRUE(select_representative_units(product_weights(std::vector<double>(6, 1.0)), units).empty());
}

TEST(SelectRepresentative, DominantUnitSelected) {
  std::vector<double> p(8, 1e-9);
  p[3] = 1.0;
  const auto units = keyed_units(8);
  const auto keys = select_representative_units(product_weights(p), units);
  EXPECT_NE(std::find(keys.begin(), keys.end(), units[3].key), keys.end());
  EXPECT_THROW((void)select_representative_units(VotingWeights{}, std::vector<UnitTransform>{}), EmptyListError);
}

TEST(SelectRepresentative, SizeBoundAndMonotone) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + trial % 20;
    std::vector<double> p(n);
    for (auto& x : p) x = u(rng);
    const auto units = keyed_units(n);
    const auto keys = select_representative_units(product_weights(p), units);
    EXPECT_LE(keys.size(), static_cast<std::size_t>(std::ceil(0.4 * n)));
    // raising a selected unit's product keeps it selected
    if (keys.empty()) continue;
    const std::size_t i = static_cast<std::size_t>(keys.front().x);
    p[i] *= 1.5;
    const auto again = select_representative_units(product_weights(p), units);
    EXPECT_NE(std::find(again.begin(), again.end(), units[i].key), again.end());
  }
}

struct Prepared {
  PointCloud cloud;
  KdTree index;
  UnitGrid grid;
  CovarianceField cov;
};

Prepared prepare(PointCloud c) {
  Prepared p;
  p.cloud = std::move(c);
  p.index = KdTree(p.cloud.points);
  p.grid = partition(p.cloud, kUnitSize);
  p.cov = estimate_covariances(p.cloud, p.index, CovarianceParams{});
  return p;
}

PointCloud flat_plane(std::mt19937_64& rng, double half, double spacing, double z = -1.5) {
  PointCloud c;
  test::add_patch(c, rng, {-half, -half, z}, Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), 2 * half, 2 * half,
                  spacing);
  return c;
}

TEST(ExtractKeypoints, SinglePlaneIsAllPlanar) {
  std::mt19937_64 rng(2);
  const Prepared p = prepare(flat_plane(rng, 6.0, 0.15));
  const KeypointSet k = extract_keypoints(p.cloud, p.index, p.grid, {});
  EXPECT_GT(k.planar.size(), 20u);
  EXPECT_TRUE(k.edge.empty());
  for (const auto& kp : k.planar) {
    EXPECT_GT(std::abs(kp.normal.z()), 1.0 - 1e-9);
    EXPECT_NEAR(kp.normal.norm(), 1.0, 1e-12);
  }
}

TEST(ExtractKeypoints, DihedralEdgesNearIntersection) {
  std::mt19937_64 rng(3);
  PointCloud c;
  // Floor z = -1.5 and wall x = 2 meet along the line (2, y, -1.5).
  test::add_patch(c, rng, {-4, -4, -1.5}, Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY(), 6.0, 8.0, 0.1);
  test::add_patch(c, rng, {2, -4, -1.5}, Eigen::Vector3d::UnitY(), Eigen::Vector3d::UnitZ(), 8.0, 3.0, 0.1);
  const Prepared p = prepare(c);
  const KeypointSet k = extract_keypoints(p.cloud, p.index, p.grid, {});
  ASSERT_FALSE(k.edge.empty());
  for (const auto& e : k.edge) {
    const Eigen::Vector3d& x = p.cloud.points[e.index];
    const double d = std::hypot(x.x() - 2.0, x.z() + 1.5);
    EXPECT_LE(d, 0.4) << x.transpose();  // two input voxels of the coarsest leaf axis
  }
}

TEST(ExtractKeypoints, CapsAndSelection) {
  const Prepared p = prepare(test::structured_scene(4, 8.0));
  KeypointParams kp;
  const KeypointSet all = extract_keypoints(p.cloud, p.index, p.grid, {}, kp);
  EXPECT_TRUE(all.used_fallback);
  std::map<UnitKey, std::size_t> planar, edge;
  for (const auto& k : all.planar) ++planar[k.unit];
  for (const auto& k : all.edge) ++edge[k.unit];
  for (const auto& [u, n] : planar) EXPECT_LE(n, kp.planar_per_unit);
  for (const auto& [u, n] : edge) EXPECT_LE(n, kp.edge_per_unit);

  std::vector<UnitKey> chosen;
  for (const auto& [key, unit] : p.grid.units)
    if (chosen.size() < 5 && unit.point_count > 30) chosen.push_back(key);
  const KeypointSet some = extract_keypoints(p.cloud, p.index, p.grid, chosen, kp);
  EXPECT_FALSE(some.used_fallback);
  for (const auto& k : some.planar) EXPECT_NE(std::find(chosen.begin(), chosen.end(), k.unit), chosen.end());
  for (const auto& k : some.edge) EXPECT_NE(std::find(chosen.begin(), chosen.end(), k.unit), chosen.end());
  for (const auto& k : some.planar) EXPECT_EQ(grid_key(p.cloud.points[k.index], kUnitSize), k.unit);
}

TEST(LocalCurvature, ZeroOnInteriorOfPlane) {
  PointCloud c;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) c.points.emplace_back(3.0 + 0.1 * i, 0.1 * j, -1.0);
  const KdTree index(c.points);
  // center point: symmetric neighborhood, the sum cancels
  const auto center = static_cast<std::uint32_t>(5 * 11 + 5);
  EXPECT_LT(local_curvature(c, index, center, 8), 1e-12);
}

// Map built from a cloud at the identity; the scan is the same cloud.
struct MapFixture {
  Prepared scan;
  VoxelMap map;
  KeypointSet keypoints;
};

MapFixture make_map(const PointCloud& cloud, bool planar_only) {
  MapFixture f;
  f.scan = prepare(cloud);
  f.map.integrate_scan(f.scan.cloud.points, f.scan.cov, Pose::Identity());
  f.keypoints = extract_keypoints(f.scan.cloud, f.scan.index, f.scan.grid, {});
  if (planar_only) f.keypoints.edge.clear();
  return f;
}

// Floor and two walls placed at 0.8 m voxel centers and cut short of each
// other, so no map voxel mixes surfaces and every voxel mean lies exactly on
// its plane.
PointCloud separated_surfaces(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  PointCloud c;
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
  test::add_patch(c, rng, {-5.5, -5.5, -1.2}, ex, ey, 10.9, 10.9, 0.15);
  test::add_patch(c, rng, {6.0, -5.5, -0.7}, ey, ez, 10.9, 3.0, 0.15);
  test::add_patch(c, rng, {-5.5, 6.0, -0.7}, ex, ez, 10.9, 3.0, 0.15);
  return c;
}

TEST(RefineScanToMap, FixedPointAtTruth) {
  const MapFixture f = make_map(separated_surfaces(5), true);
  const RefinementResult r = refine_scan_to_map(Pose::Identity(), f.scan.cloud, f.keypoints, *f.map.snapshot());
  EXPECT_LT(pose_delta(r.pose, Pose::Identity()).translation, 1e-8);
  EXPECT_LT(pose_delta(r.pose, Pose::Identity()).rotation, 1e-8);
  EXPECT_LE(r.final_cost, r.initial_cost);
  EXPECT_GT(r.inlier_fraction, 0.5);
}

TEST(RefineScanToMap, RecoversPerturbation) {
  const MapFixture f = make_map(test::structured_scene(6, 8.0), true);
  const Pose start(test::axis_angle(test::kPi / 180.0, Eigen::Vector3d(0.3, -0.2, 1.0)),
                   Eigen::Vector3d(0.06, -0.05, 0.055));
  ASSERT_NEAR(start.translation().norm(), 0.1, 0.005);
  const RefinementResult r = refine_scan_to_map(start, f.scan.cloud, f.keypoints, *f.map.snapshot());
  EXPECT_FALSE(r.degenerate);
  EXPECT_LT(pose_delta(r.pose, Pose::Identity()).translation, 1e-3);
  EXPECT_LT(pose_delta(r.pose, Pose::Identity()).rotation, 0.01 * test::kPi / 180.0);
  EXPECT_LT(r.final_cost, r.initial_cost);
}

TEST(RefineScanToMap, SinglePlaneIsDegenerate) {
  std::mt19937_64 rng(7);
  const MapFixture f = make_map(flat_plane(rng, 8.0, 0.15), false);
  const Pose start = test::translate({0.05, -0.04, 0.08});
  const RefinementResult r = refine_scan_to_map(start, f.scan.cloud, f.keypoints, *f.map.snapshot());
  EXPECT_TRUE(r.degenerate);
  EXPECT_LT(std::abs(r.pose.translation().z()), 1e-3);
  EXPECT_NEAR(r.pose.translation().x(), 0.05, 1e-9);
  EXPECT_NEAR(r.pose.translation().y(), -0.04, 1e-9);
}

TEST(RefineScanToMap, CostNeverIncreases) {
  std::mt19937_64 rng(8);
  const MapFixture f = make_map(test::structured_scene(9, 8.0), false);
  for (int trial = 0; trial < 10; ++trial) {
    const Pose start = test::random_pose(rng, 0.03, 0.15);
    const RefinementResult r = refine_scan_to_map(start, f.scan.cloud, f.keypoints, *f.map.snapshot());
    EXPECT_TRUE(r.final_cost <= r.initial_cost || r.degenerate);
  }
}

TEST(RefineScanToMap, NoCorrespondenceReturnsInit) {
  const MapFixture f = make_map(test::structured_scene(10, 8.0), false);
  const Pose far = test::translate({500, 0, 0});
  const RefinementResult r = refine_scan_to_map(far, f.scan.cloud, f.keypoints, *f.map.snapshot());
  EXPECT_TRUE(r.no_correspondence);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.pose.translation(), far.translation());
}

TEST(FitMapPlane, TrimsOffPlaneVoxel) {
  VoxelMapState map;
  std::vector<MapVoxel> store;
  for (int i = 0; i < 6; ++i)
    store.push_back(make_voxel(Eigen::Vector3d(0.8 * (i % 3), 0.8 * (i / 3), 0.0), 0.01 * Eigen::Matrix3d::Identity(), 0));
  store.push_back(make_voxel(Eigen::Vector3d(0.4, 0.4, 0.6), 0.01 * Eigen::Matrix3d::Identity(), 0));
  std::vector<VoxelHit> hits;
  for (std::size_t i = 0; i < store.size(); ++i) hits.push_back({{static_cast<int>(i), 0, 0}, &store[i], 0.0});
  const auto plane = fit_map_plane(hits, Scan2MapParams{});
  ASSERT_TRUE(plane.has_value());
  EXPECT_GT(std::abs(plane->normal.z()), 1.0 - 1e-9);
  EXPECT_NEAR(plane->offset, 0.0, 1e-9);
  hits.resize(4);
  EXPECT_FALSE(fit_map_plane(hits, Scan2MapParams{}).has_value());
}

TEST(FitMapLine, CollinearVoxels) {
  std::vector<MapVoxel> store;
  for (int i = 0; i < 4; ++i)
    store.push_back(make_voxel(Eigen::Vector3d(1.0, 0.8 * i, 2.0), 0.01 * Eigen::Matrix3d::Identity(), 0));
  std::vector<VoxelHit> hits;
  for (std::size_t i = 0; i < store.size(); ++i) hits.push_back({{static_cast<int>(i), 0, 0}, &store[i], 0.0});
  const auto line = fit_map_line(hits, Scan2MapParams{});
  ASSERT_TRUE(line.has_value());
  EXPECT_GT(std::abs(line->direction.y()), 1.0 - 1e-9);
  EXPECT_LT(std::hypot(line->point.x() - 1.0, line->point.z() - 2.0), 1e-9);
}

}  // namespace
}  // namespace unitlo
