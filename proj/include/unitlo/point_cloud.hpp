#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "unitlo/se3.hpp"

namespace unitlo {

/// A LiDAR scan in its sensor frame (meters). `intensities` is either empty
/// or aligned with `points`.
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<double> intensities;
  std::int64_t frame = 0;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] bool empty() const { return points.empty(); }
  [[nodiscard]] bool has_intensity() const { return !intensities.empty(); }
};

/// One pose per frame, expressed in the coordinate system of frame 0.
struct Trajectory {
  std::vector<Pose> poses;

  [[nodiscard]] std::size_t size() const { return poses.size(); }
  [[nodiscard]] bool empty() const { return poses.empty(); }
};

/// Chains relative motions into a trajectory starting at identity:
/// pose[k] = pose[k-1] * relative[k-1].
[[nodiscard]] inline Trajectory compose_relative(const std::vector<Pose>& relative) {
  Trajectory traj;
  traj.poses.reserve(relative.size() + 1);
  traj.poses.push_back(Pose::Identity());
  for (const Pose& r : relative) traj.poses.push_back(traj.poses.back() * r);
  return traj;
}

}  // namespace unitlo
