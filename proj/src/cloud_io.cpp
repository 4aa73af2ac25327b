#include "unitlo/cloud_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "unitlo/errors.hpp"
#include "unitlo/grid_key.hpp"
#include "unitlo/log.hpp"

namespace unitlo {
namespace {

static_assert(std::endian::native == std::endian::little,
              "KITTI scans are little-endian; add byte swapping for this platform");

std::string describe(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

LoadedScan load_scan_kitti(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scan " + describe(path));
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (bytes % 16 != 0)
    throw FormatError("scan " + describe(path) + " has " + std::to_string(bytes) +
                      " bytes, not a multiple of 16");

  std::vector<float> raw(bytes / sizeof(float));
  if (bytes > 0 && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes)))
    throw IoError("short read on " + describe(path));

  LoadedScan out;
  const std::size_t n = bytes / 16;
  out.cloud.points.reserve(n);
  out.cloud.intensities.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* r = &raw[4 * i];
    if (!std::isfinite(r[0]) || !std::isfinite(r[1]) || !std::isfinite(r[2]) ||
        !std::isfinite(r[3])) {
      ++out.dropped_non_finite;
      continue;
    }
    out.cloud.points.emplace_back(r[0], r[1], r[2]);
    out.cloud.intensities.push_back(r[3]);
  }
  if (out.dropped_non_finite > 0)
    log::warn("dropped " + std::to_string(out.dropped_non_finite) + " non-finite points from " +
              describe(path));
  return out;
}

void write_scan_kitti(const PointCloud& cloud, const std::filesystem::path& path) {
  std::vector<float> raw(cloud.size() * 4);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    raw[4 * i + 0] = static_cast<float>(cloud.points[i].x());
    raw[4 * i + 1] = static_cast<float>(cloud.points[i].y());
    raw[4 * i + 2] = static_cast<float>(cloud.points[i].z());
    raw[4 * i + 3] = cloud.has_intensity() ? static_cast<float>(cloud.intensities[i]) : 0.0F;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write scan " + describe(path));
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!out) throw IoError("write failed on " + describe(path));
}

Trajectory load_poses_kitti(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open poses " + describe(path));
  Trajectory traj;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    Eigen::Matrix<double, 3, 4> m;
    for (int k = 0; k < 12; ++k) {
      if (!(ss >> m(k / 4, k % 4)))
        throw FormatError(describe(path) + " line " + std::to_string(line_no) +
                          ": expected 12 reals");
    }
    std::string extra;
    if (ss >> extra)
      throw FormatError(describe(path) + " line " + std::to_string(line_no) +
                        ": more than 12 values");
    if (!m.allFinite())
      throw FormatError(describe(path) + " line " + std::to_string(line_no) + ": non-finite value");
    traj.poses.push_back(Pose::FromMatrix(m));
  }
  return traj;
}

void write_trajectory_kitti(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + describe(path));
  char buf[32];
  for (const Pose& p : traj.poses) {
    const Eigen::Matrix<double, 3, 4> m = p.matrix3x4();
    for (int k = 0; k < 12; ++k) {
      std::snprintf(buf, sizeof(buf), "%.12e", m(k / 4, k % 4));
      out << buf << (k == 11 ? '\n' : ' ');
    }
  }
  if (!out) throw IoError("write failed on " + describe(path));
}

void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + describe(path));
  out << "frame,tx,ty,tz,qw,qx,qy,qz\n";
  char buf[256];
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose& p = traj.poses[i];
    const auto& t = p.translation();
    const auto& q = p.rotation();
    std::snprintf(buf, sizeof(buf), "%zu,%.12e,%.12e,%.12e,%.15e,%.15e,%.15e,%.15e\n", i, t.x(),
                  t.y(), t.z(), q.w(), q.x(), q.y(), q.z());
    out << buf;
  }
  if (!out) throw IoError("write failed on " + describe(path));
}

PointCloud voxel_downsample(const PointCloud& cloud, const Eigen::Vector3d& leaf) {
  if (!(leaf.array() > 0.0).all() || !leaf.allFinite())
    throw InvalidLeafError("voxel leaf must be positive per axis");

  const std::size_t n = cloud.size();
  std::vector<GridKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = grid_key(cloud.points[i], leaf);
  std::vector<std::uint32_t> order(n);
  std::iota(order.begin(), order.end(), 0U);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });

  PointCloud out;
  out.frame = cloud.frame;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    double isum = 0.0;
    while (j < n && keys[order[j]] == keys[order[i]]) {
      sum += cloud.points[order[j]];
      if (cloud.has_intensity()) isum += cloud.intensities[order[j]];
      ++j;
    }
    const double count = static_cast<double>(j - i);
    out.points.push_back(sum / count);
    if (cloud.has_intensity()) out.intensities.push_back(isum / count);
    i = j;
  }
  return out;
}

PointCloud crop_range(const PointCloud& cloud, double max_range) {
  PointCloud out;
  out.frame = cloud.frame;
  const double r2 = max_range * max_range;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.points[i].squaredNorm() > r2) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.has_intensity()) out.intensities.push_back(cloud.intensities[i]);
  }
  return out;
}

std::vector<std::filesystem::path> list_scans(const std::filesystem::path& sequence) {
  std::filesystem::path dir = sequence / "velodyne";
  if (!std::filesystem::is_directory(dir)) dir = sequence;
  if (!std::filesystem::is_directory(dir)) throw IoError("no sequence directory " + describe(sequence));
  std::vector<std::filesystem::path> scans;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".bin") scans.push_back(entry.path());
  std::sort(scans.begin(), scans.end());
  return scans;
}

}  // namespace unitlo
