#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "unitlo/cloud_io.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/grid_key.hpp"

namespace unitlo {
namespace {

namespace fs = std::filesystem;

void write_floats(const fs::path& p, const std::vector<float>& v) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(LoadScanKitti, TwoRecords) {
  test::TempDir dir("scan");
  write_floats(dir.path() / "a.bin", {1, 2, 3, 0.5f, 4, 5, 6, 0.1f});
  const LoadedScan s = load_scan_kitti(dir.path() / "a.bin");
  ASSERT_EQ(s.cloud.size(), 2u);
  EXPECT_EQ(s.cloud.points[1], Eigen::Vector3d(4, 5, 6));
  EXPECT_NEAR(s.cloud.intensities[0], 0.5, 1e-7);
  EXPECT_EQ(s.dropped_non_finite, 0u);
}

TEST(LoadScanKitti, EmptyFile) {
  test::TempDir dir("scan");
  write_floats(dir.path() / "e.bin", {});
  EXPECT_EQ(load_scan_kitti(dir.path() / "e.bin").cloud.size(), 0u);
}

TEST(LoadScanKitti, NonFiniteDropped) {
  test::TempDir dir("scan");
  write_floats(dir.path() / "n.bin", {std::numeric_limits<float>::quiet_NaN(), 0, 0, 0, 1, 1, 1, 0});
  const LoadedScan s = load_scan_kitti(dir.path() / "n.bin");
  EXPECT_EQ(s.cloud.size(), 1u);
  EXPECT_EQ(s.dropped_non_finite, 1u);
}

TEST(LoadScanKitti, Errors) {
  test::TempDir dir("scan");
  write_floats(dir.path() / "bad.bin", {1, 2, 3});
  EXPECT_THROW(load_scan_kitti(dir.path() / "bad.bin"), FormatError);
  EXPECT_THROW(load_scan_kitti(dir.path() / "missing.bin"), IoError);
}

TEST(LoadScanKitti, WriteRoundTrip) {
  test::TempDir dir("scan");
  PointCloud c;
  c.points = {{1.5, -2.25, 3.0}, {0.0, 0.125, -8.0}};
  write_scan_kitti(c, dir.path() / "w.bin");
  const LoadedScan s = load_scan_kitti(dir.path() / "w.bin");
  ASSERT_EQ(s.cloud.size(), 2u);
  EXPECT_EQ(s.cloud.points[0], c.points[0]);
  EXPECT_EQ(s.cloud.points[1], c.points[1]);
}

TEST(LoadPosesKitti, IdentityLines) {
  test::TempDir dir("poses");
  std::ofstream(dir.path() / "p.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1 0\n";
  const Trajectory t = load_poses_kitti(dir.path() / "p.txt");
  ASSERT_EQ(t.size(), 3u);
  EXPECT_LT(pose_delta(t.poses[0], Pose::Identity()).rotation, 1e-15);
}

TEST(LoadPosesKitti, QuarterTurnWithTranslation) {
  test::TempDir dir("poses");
  std::ofstream(dir.path() / "p.txt") << "0 -1 0 1 1 0 0 0 0 0 1 0\n";
  const Trajectory t = load_poses_kitti(dir.path() / "p.txt");
  const Pose expected(test::axis_angle(test::kPi / 2, Eigen::Vector3d::UnitZ()), Eigen::Vector3d(1, 0, 0));
  const PoseDelta<double> d = pose_delta(t.poses[0], expected);
  EXPECT_LT(d.rotation, 1e-9);
  EXPECT_LT(d.translation, 1e-9);
}

TEST(LoadPosesKitti, BadLineReportsLineNumber) {
  test::TempDir dir("poses");
  std::ofstream(dir.path() / "p.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0\n";
  try {
    (void)load_poses_kitti(dir.path() / "p.txt");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(WriteTrajectoryKitti, RoundTrip) {
  test::TempDir dir("traj");
  std::mt19937_64 rng(4);
  Trajectory t;
  for (int i = 0; i < 50; ++i) t.poses.push_back(test::random_pose(rng, test::kPi, 100.0));
  write_trajectory_kitti(t, dir.path() / "t.txt");
  const Trajectory back = load_poses_kitti(dir.path() / "t.txt");
  ASSERT_EQ(back.size(), t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const PoseDelta<double> d = pose_delta(back.poses[i], t.poses[i]);
    EXPECT_LT(d.rotation, 1e-9);
    EXPECT_LT(d.translation, 1e-9);
  }
}

TEST(WriteTrajectoryKitti, IdentityAndEmpty) {
  test::TempDir dir("traj");
  Trajectory t;
  t.poses = {Pose::Identity(), Pose::Identity()};
  write_trajectory_kitti(t, dir.path() / "id.txt");
  std::ifstream in(dir.path() / "id.txt");
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    ASSERT_EQ(v.size(), 12u);
    EXPECT_EQ(v, (std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0}));
    ++rows;
  }
  EXPECT_EQ(rows, 2);

  write_trajectory_kitti(Trajectory{}, dir.path() / "empty.txt");
  EXPECT_EQ(fs::file_size(dir.path() / "empty.txt"), 0u);
}

TEST(WriteTrajectory, Deterministic) {
  test::TempDir dir("traj");
  std::mt19937_64 rng(9);
  Trajectory t;
  for (int i = 0; i < 20; ++i) t.poses.push_back(test::random_pose(rng));
  write_trajectory_kitti(t, dir.path() / "a.txt");
  write_trajectory_kitti(t, dir.path() / "b.txt");
  write_trajectory_csv(t, dir.path() / "a.csv");
  write_trajectory_csv(t, dir.path() / "b.csv");
  EXPECT_EQ(slurp(dir.path() / "a.txt"), slurp(dir.path() / "b.txt"));
  EXPECT_EQ(slurp(dir.path() / "a.csv"), slurp(dir.path() / "b.csv"));
  std::ifstream csv(dir.path() / "a.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "frame,tx,ty,tz,qw,qx,qy,qz");
}

TEST(VoxelDownsample, SameVoxelMerges) {
  PointCloud c;
  c.points = {{0.01, 0.02, 0.05}, {0.05, 0.08, 0.15}};
  const PointCloud d = voxel_downsample(c, {0.1, 0.1, 0.2});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_LT((d.points[0] - Eigen::Vector3d(0.03, 0.05, 0.10)).norm(), 1e-12);
}

TEST(VoxelDownsample, SeparatedPointsKept) {
  PointCloud c;
  c.points = {{0.35, 0.05, 0.1}, {0.05, 0.05, 0.1}, {0.05, 0.25, 0.5}};
  const PointCloud d = voxel_downsample(c, {0.1, 0.1, 0.2});
  ASSERT_EQ(d.size(), 3u);
  for (const auto& p : c.points)
    EXPECT_TRUE(std::any_of(d.points.begin(), d.points.end(), [&](const Eigen::Vector3d& q) { return (q - p).norm() < 1e-12; }));
}

TEST(VoxelDownsample, CubeCornersToCenter) {
  PointCloud c;
  for (int i = 0; i < 8; ++i) c.points.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  const PointCloud d = voxel_downsample(c, {2, 2, 2});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_LT((d.points[0] - Eigen::Vector3d(0.5, 0.5, 0.5)).norm(), 1e-12);
}

TEST(VoxelDownsample, OutputInsideVoxelsAndOrdered) {
  std::mt19937_64 rng(12);
  PointCloud c;
  for (int i = 0; i < 5000; ++i) c.points.push_back(test::random_vector(rng, 3.0));
  const Eigen::Vector3d leaf(0.1, 0.1, 0.2);
  const PointCloud d = voxel_downsample(c, leaf);
  EXPECT_LE(d.size(), c.size());
  // Every output point is the centroid of one voxel, so it stays inside it,
  // and keys come out strictly ascending.
  std::vector<GridKey> keys;
  for (const auto& p : d.points) keys.push_back(grid_key(p, leaf));
  EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end()));
  EXPECT_EQ(std::adjacent_find(keys.begin(), keys.end()), keys.end());
  std::set<GridKey> in;
  for (const auto& p : c.points) in.insert(grid_key(p, leaf));
  EXPECT_EQ(in.size(), d.size());
}

TEST(VoxelDownsample, IntensityIsMemberMean) {
  PointCloud c;
  c.points = {{0.01, 0.01, 0.01}, {0.02, 0.02, 0.02}};
  c.intensities = {0.2, 0.6};
  const PointCloud d = voxel_downsample(c, {0.1, 0.1, 0.2});
  ASSERT_EQ(d.intensities.size(), 1u);
  EXPECT_NEAR(d.intensities[0], 0.4, 1e-12);
}

TEST(VoxelDownsample, InvalidLeaf) {
  EXPECT_THROW((void)voxel_downsample(PointCloud{}, {0.1, 0.0, 0.2}), InvalidLeafError);
  EXPECT_THROW((void)voxel_downsample(PointCloud{}, {-1, 1, 1}), InvalidLeafError);
}

TEST(CropRange, KeepsNearPoints) {
  PointCloud c;
  c.points = {{1, 0, 0}, {0, 5, 0}, {30, 40, 0}};
  EXPECT_EQ(crop_range(c, 10.0).size(), 2u);
}

TEST(ListScans, SortedBinFiles) {
  test::TempDir dir("seq");
  fs::create_directories(dir.path() / "velodyne");
  for (const char* n : {"000002.bin", "000000.bin", "000001.bin", "notes.txt"})
    std::ofstream(dir.path() / "velodyne" / n).put('\0');
  const auto scans = list_scans(dir.path());
  ASSERT_EQ(scans.size(), 3u);
  EXPECT_EQ(scans[0].filename(), "000000.bin");
  EXPECT_EQ(scans[2].filename(), "000002.bin");
}

}  // namespace
}  // namespace unitlo
