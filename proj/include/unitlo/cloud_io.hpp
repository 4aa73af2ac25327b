#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "unitlo/point_cloud.hpp"

namespace unitlo {

struct LoadedScan {
  PointCloud cloud;
  std::size_t dropped_non_finite = 0;
};

/// Reads a KITTI velodyne .bin file: little-endian float32 records of
/// (x, y, z, reflectance). Non-finite points are dropped and counted.
LoadedScan load_scan_kitti(const std::filesystem::path& path);

/// Writes a cloud in the same binary layout (reflectance 0 when absent).
void write_scan_kitti(const PointCloud& cloud, const std::filesystem::path& path);

/// Reads KITTI pose text: one row-major 3x4 matrix (12 reals) per line.
Trajectory load_poses_kitti(const std::filesystem::path& path);

void write_trajectory_kitti(const Trajectory& traj, const std::filesystem::path& path);

/// CSV export with header `frame,tx,ty,tz,qw,qx,qy,qz`.
void write_trajectory_csv(const Trajectory& traj, const std::filesystem::path& path);

/// One centroid per occupied origin-anchored voxel; output ordered by
/// ascending voxel key. Intensities are carried as member means.
PointCloud voxel_downsample(const PointCloud& cloud, const Eigen::Vector3d& leaf);

/// Keeps points with range <= max_range.
PointCloud crop_range(const PointCloud& cloud, double max_range);

/// Sorted list of `*.bin` scans under `<sequence>/velodyne` (or `<sequence>`
/// itself when it has no velodyne subdirectory).
std::vector<std::filesystem::path> list_scans(const std::filesystem::path& sequence);

}  // namespace unitlo
