#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <fstream>
#include <random>

#include "fixtures.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/voxel_map.hpp"

namespace unitlo {
namespace {

Eigen::Matrix3d random_spd(std::mt19937_64& rng, double lo = 0.01, double hi = 0.5) {
  std::uniform_real_distribution<double> ev(lo, hi);
  const Eigen::Matrix3d q = test::random_pose(rng).rotation_matrix();
  return q * Eigen::Vector3d(ev(rng), ev(rng), ev(rng)).asDiagonal() * q.transpose();
}

MapVoxel fuse_all(const std::vector<std::pair<Eigen::Vector3d, Eigen::Matrix3d>>& obs, bool fusion = true) {
  MapVoxel v = make_voxel(obs[0].first, obs[0].second, 0);
  for (std::size_t i = 1; i < obs.size(); ++i) fuse_observation(v, obs[i].first, obs[i].second, fusion);
  return v;
}

TEST(Fusion, TwoUnitObservations) {
  const MapVoxel v = fuse_all({{Eigen::Vector3d(0, 0, 0), Eigen::Matrix3d::Identity()},
                               {Eigen::Vector3d(0.4, 0.2, 0.6), Eigen::Matrix3d::Identity()}});
  EXPECT_LT((v.covariance - 0.5 * Eigen::Matrix3d::Identity()).norm(), 1e-12);
  EXPECT_LT((v.mean - Eigen::Vector3d(0.2, 0.1, 0.3)).norm(), 1e-12);
  EXPECT_EQ(v.hit_count, 2u);
}

TEST(Fusion, RepeatedObservation) {
  std::mt19937_64 rng(1);
  const Eigen::Matrix3d c = random_spd(rng);
  const Eigen::Vector3d x(0.3, 0.1, 0.7);
  for (const int n : {2, 5, 40}) {
    const MapVoxel v = fuse_all(std::vector<std::pair<Eigen::Vector3d, Eigen::Matrix3d>>(n, {x, c}));
    EXPECT_LT((v.mean - x).norm(), 1e-9);
    EXPECT_LT((v.covariance - c / n).norm(), 1e-9);
  }
}

TEST(Fusion, DiagonalInformationOracle) {
  const MapVoxel v = fuse_all({{Eigen::Vector3d(0, 0, 0), Eigen::Vector3d(1, 1, 0.01).asDiagonal()},
                               {Eigen::Vector3d(1, 0, 1), Eigen::Vector3d(0.01, 1, 1).asDiagonal()}});
  EXPECT_LT((v.mean - Eigen::Vector3d(100.0 / 101.0, 0, 1.0 / 101.0)).norm(), 1e-12);
  EXPECT_NEAR(v.mean.x(), 0.9901, 1e-4);
  EXPECT_NEAR(v.mean.z(), 0.0099, 1e-4);
  const Eigen::Matrix3d want = Eigen::Vector3d(1.0 / 101.0, 0.5, 1.0 / 101.0).asDiagonal();
  EXPECT_LT((v.covariance - want).norm(), 1e-12);
}

TEST(Fusion, InformationMonotone) {
  std::mt19937_64 rng(2);
  MapVoxel v = make_voxel(test::random_vector(rng, 1.0), random_spd(rng), 0);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix3d before = v.covariance;
    fuse_observation(v, test::random_vector(rng, 1.0), random_spd(rng, 1e-4, 1.0), true);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(before - v.covariance);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
  }
}

TEST(Fusion, Commutative) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d x0 = test::random_vector(rng, 1.0), a = test::random_vector(rng, 1.0),
                          b = test::random_vector(rng, 1.0);
    const Eigen::Matrix3d c0 = random_spd(rng), ca = random_spd(rng), cb = random_spd(rng);
    const MapVoxel ab = fuse_all({{x0, c0}, {a, ca}, {b, cb}});
    const MapVoxel ba = fuse_all({{x0, c0}, {b, cb}, {a, ca}});
    EXPECT_LT((ab.mean - ba.mean).norm(), 1e-9);
    EXPECT_LT((ab.covariance - ba.covariance).norm(), 1e-9);
  }
}

TEST(Fusion, IsotropicMeanInConvexHull) {
  // With isotropic covariances the fused mean is a convex combination with
  // weights 1/σᵢ², so it must be expressible with those weights exactly.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> s(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<Eigen::Vector3d, Eigen::Matrix3d>> obs;
    Eigen::Vector3d num = Eigen::Vector3d::Zero();
    double den = 0.0;
    for (int i = 0; i < 6; ++i) {
      const double var = s(rng);
      obs.push_back({test::random_vector(rng, 1.0), var * Eigen::Matrix3d::Identity()});
      num += obs.back().first / var;
      den += 1.0 / var;
    }
    EXPECT_LT((fuse_all(obs).mean - num / den).norm(), 1e-10);
  }
}

TEST(Fusion, DiagonalMeanInsideBoundingBox) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> s(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<Eigen::Vector3d, Eigen::Matrix3d>> obs;
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e9), hi = -lo;
    for (int i = 0; i < 6; ++i) {
      obs.push_back({test::random_vector(rng, 1.0), Eigen::Vector3d(s(rng), s(rng), s(rng)).asDiagonal()});
      lo = lo.cwiseMin(obs.back().first);
      hi = hi.cwiseMax(obs.back().first);
    }
    const Eigen::Vector3d m = fuse_all(obs).mean;
    EXPECT_TRUE(((m - lo).array() >= -1e-12).all() && ((hi - m).array() >= -1e-12).all());
  }
}

TEST(Fusion, AverageFilterWhenFusionOff) {
  std::mt19937_64 rng(6);
  std::vector<std::pair<Eigen::Vector3d, Eigen::Matrix3d>> obs;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d csum = Eigen::Matrix3d::Zero();
  for (int i = 0; i < 7; ++i) {
    obs.push_back({test::random_vector(rng, 1.0), random_spd(rng)});
    mean += obs.back().first;
    csum += obs.back().second;
  }
  const MapVoxel v = fuse_all(obs, false);
  EXPECT_LT((v.mean - mean / 7.0).norm(), 1e-12);
  EXPECT_LT((v.covariance - csum / 49.0).norm(), 1e-12);
}

TEST(VoxelMap, IntegrateTransformsAndCounts) {
  VoxelMap map({.leaf = 1.0});
  const Pose t(test::axis_angle(test::kPi / 2, Eigen::Vector3d::UnitZ()), Eigen::Vector3d(10, 0, 0));
  const std::vector<Eigen::Vector3d> pts{{0.5, 0.1, 0.5}, {0.5, 0.1, 0.5}, {3.5, 0.5, 0.5}};
  const CovarianceField cov(3, PointCovariance::from_matrix(Eigen::Vector3d(0.01, 0.02, 0.03).asDiagonal()));
  const IntegrationSummary s = map.integrate_scan(pts, cov, t);
  EXPECT_EQ(s.created, 2u);
  EXPECT_EQ(s.fused, 1u);
  const auto snap = map.snapshot();
  EXPECT_EQ(snap->frame_counter, 1);
  const MapVoxel& v = snap->voxels.at(grid_key(t * pts[0], 1.0));
  EXPECT_LT((v.mean - Eigen::Vector3d(9.9, 0.5, 0.5)).norm(), 1e-12);
  EXPECT_LT((v.covariance - Eigen::Matrix3d(Eigen::Vector3d(0.01, 0.005, 0.015).asDiagonal())).norm(), 1e-12);
  EXPECT_EQ(v.hit_count, 2u);
}

TEST(VoxelMap, EigenvalueBounds) {
  std::mt19937_64 rng(7);
  const double lmin = 1e-4, lmax = 1.0;
  VoxelMap map({.leaf = 0.8});
  for (int frame = 0; frame < 5; ++frame) {
    std::vector<Eigen::Vector3d> pts;
    CovarianceField cov;
    for (int i = 0; i < 300; ++i) {
      pts.push_back(test::random_vector(rng, 2.0));
      PointCovariance c = PointCovariance::from_matrix(random_spd(rng, 0.0, 2.0));
      c.eigenvalues = c.eigenvalues.cwiseMax(lmin).cwiseMin(lmax);
      cov.push_back(c);
    }
    map.integrate_scan(pts, cov, Pose::Identity());
  }
  for (const auto& [k, v] : map.snapshot()->voxels) {
    const Eigen::Vector3d ev = v.eigen_covariance().eigenvalues;
    EXPECT_GE(ev.minCoeff(), lmin / v.hit_count * (1 - 1e-8));
    EXPECT_LE(ev.maxCoeff(), lmax * (1 + 1e-8));
  }
}

TEST(VoxelMap, Eviction) {
  VoxelMap map({.leaf = 1.0, .covariance_fusion = true, .eviction_window = 2});
  const CovarianceField cov{PointCovariance::isotropic(0.01)};
  const std::vector<Eigen::Vector3d> a{{0.5, 0.5, 0.5}}, b{{5.5, 0.5, 0.5}};
  map.integrate_scan(a, cov, Pose::Identity());  // frame 0
  map.integrate_scan(b, cov, Pose::Identity());  // frame 1
  EXPECT_EQ(map.size(), 2u);
  const IntegrationSummary s = map.integrate_scan(b, cov, Pose::Identity());  // frame 2: a unseen for 2
  EXPECT_EQ(s.evicted, 1u);
  EXPECT_EQ(map.size(), 1u);
}

TEST(VoxelMap, InvalidLeaf) {
  EXPECT_THROW(VoxelMap({.leaf = 0.0}), InvalidLeafError);
}

TEST(QueryNeighbors, EmptyMap) {
  const VoxelMap map;
  EXPECT_TRUE(query_neighbors(*map.snapshot(), Eigen::Vector3d::Zero(), 1.0).empty());
}

TEST(QueryNeighbors, RadiusBoundary) {
  VoxelMap map({.leaf = 0.8});
  const std::vector<Eigen::Vector3d> p{{1.0, 0.0, 0.0}};
  map.integrate_scan(p, CovarianceField{PointCovariance::isotropic(0.01)}, Pose::Identity());
  const double eps = 1e-9;
  EXPECT_EQ(query_neighbors(*map.snapshot(), Eigen::Vector3d::Zero(), 1.0 + eps).size(), 1u);
  EXPECT_TRUE(query_neighbors(*map.snapshot(), Eigen::Vector3d::Zero(), 1.0 - eps).empty());
}

TEST(QueryNeighbors, MatchesBruteForce) {
  std::mt19937_64 rng(8);
  VoxelMap map({.leaf = 0.8});
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 1000; ++i) pts.push_back(test::random_vector(rng, 8.0));
  map.integrate_scan(pts, CovarianceField(pts.size(), PointCovariance::isotropic(0.01)), Pose::Identity());
  const auto snap = map.snapshot();
  for (int q = 0; q < 200; ++q) {
    const Eigen::Vector3d x = test::random_vector(rng, 9.0);
    const double r = 0.3 + 0.02 * q;
    std::vector<GridKey> want;
    for (const auto& [k, v] : snap->voxels)
      if ((v.mean - x).norm() <= r) want.push_back(k);
    std::sort(want.begin(), want.end());
    std::vector<GridKey> got;
    for (const auto& h : query_neighbors(*snap, x, r)) got.push_back(h.key);
    std::vector<GridKey> sorted = got;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(got, sorted);  // key order
    EXPECT_EQ(got, want);
  }
}

TEST(Snapshot, UnaffectedByLaterIntegration) {
  std::mt19937_64 rng(9);
  VoxelMap map({.leaf = 0.8});
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 100; ++i) pts.push_back(test::random_vector(rng, 5.0));
  const CovarianceField cov(pts.size(), PointCovariance::isotropic(0.01));
  map.integrate_scan(pts, cov, Pose::Identity());
  const auto a = map.snapshot();
  const auto b = map.snapshot();
  EXPECT_EQ(a->voxels.size(), b->voxels.size());
  const std::size_t count = a->voxels.size();
  const VoxelMapState copy = *a;
  map.integrate_scan(pts, cov, test::translate({20, 0, 0}));
  map.integrate_scan(pts, cov, Pose::Identity());
  EXPECT_EQ(a->voxels.size(), count);
  EXPECT_EQ(a->frame_counter, copy.frame_counter);
  for (const auto& [k, v] : copy.voxels) {
    EXPECT_EQ(a->voxels.at(k).mean, v.mean);
    EXPECT_EQ(a->voxels.at(k).hit_count, v.hit_count);
  }
  EXPECT_GT(map.size(), count);
}

TEST(Snapshot, MatchesCopyOracleOnRandomUpdates) {
  std::mt19937_64 rng(10);
  VoxelMap map({.leaf = 0.5});
  std::vector<std::pair<std::shared_ptr<const VoxelMapState>, VoxelMapState>> taken;
  for (int step = 0; step < 30; ++step) {
    std::vector<Eigen::Vector3d> pts;
    for (int i = 0; i < 50; ++i) pts.push_back(test::random_vector(rng, 3.0));
    CovarianceField cov;
    for (std::size_t i = 0; i < pts.size(); ++i) cov.push_back(PointCovariance::from_matrix(random_spd(rng)));
    map.integrate_scan(pts, cov, test::random_pose(rng, 0.5, 1.0));
    if (step % 3 == 0) taken.emplace_back(map.snapshot(), *map.snapshot());
  }
  for (const auto& [snap, copy] : taken) {
    ASSERT_EQ(snap->voxels.size(), copy.voxels.size());
    EXPECT_EQ(snap->frame_counter, copy.frame_counter);
    for (const auto& [k, v] : copy.voxels) {
      const MapVoxel& s = snap->voxels.at(k);
      EXPECT_EQ(s.mean, v.mean);
      EXPECT_EQ(s.covariance, v.covariance);
      EXPECT_EQ(s.hit_count, v.hit_count);
    }
  }
}

TEST(MapExport, BinaryRoundTripAndCsv) {
  std::mt19937_64 rng(11);
  VoxelMap map({.leaf = 0.8});
  std::vector<Eigen::Vector3d> pts;
  for (int i = 0; i < 200; ++i) pts.push_back(test::random_vector(rng, 4.0));
  map.integrate_scan(pts, CovarianceField(pts.size(), PointCovariance::isotropic(0.02)), Pose::Identity());
  test::TempDir dir("map");
  write_map_binary(*map.snapshot(), dir.path() / "m.bin");
  const VoxelMapState back = read_map_binary(dir.path() / "m.bin");
  EXPECT_EQ(back.leaf, 0.8);
  ASSERT_EQ(back.voxels.size(), map.size());
  for (const auto& [k, v] : map.snapshot()->voxels) {
    EXPECT_EQ(back.voxels.at(k).mean, v.mean);
    EXPECT_EQ(back.voxels.at(k).covariance, v.covariance);
    EXPECT_EQ(back.voxels.at(k).hit_count, v.hit_count);
  }
  write_map_csv(*map.snapshot(), dir.path() / "m.csv");
  std::ifstream in(dir.path() / "m.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "kx,ky,kz,x,y,z,l1,l2,l3,qw,qx,qy,qz,hits");
  std::ofstream(dir.path() / "bad.bin") << "NOTAMAP";
  EXPECT_THROW((void)read_map_binary(dir.path() / "bad.bin"), FormatError);
}

}  // namespace
}  // namespace unitlo
