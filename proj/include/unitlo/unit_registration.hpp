#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "unitlo/kdtree.hpp"
#include "unitlo/point_cloud.hpp"
#include "unitlo/se3.hpp"
#include "unitlo/unit_partition.hpp"

namespace unitlo {

/// Rigid transform of one geometric unit between consecutive scans,
/// expressed in the unit's self-centered frame, plus the statistics the voter
/// scores it by.
struct UnitTransform {
  UnitKey key;
  Pose transform;  // in the unit frame
  double mean_residual = 0.0;
  std::size_t inlier_count = 0;
  double hessian_cond = 1.0;
  bool converged = false;
  int iterations = 0;
  std::vector<double> residual_trace;  // gated mean residual per association pass
};

struct Correspondence {
  std::uint32_t source = 0;
  std::uint32_t target = 0;
  double squared_distance = 0.0;
};

using CorrespondenceSet = std::vector<Correspondence>;

struct RegistrationParams {
  std::size_t min_points = 10;
  std::size_t min_inliers = 6;
  double gate = 1.0;
  int max_iterations = 8;
  double translation_tol = 1e-4;
  double rotation_tol = 1e-4;
  int threads = 1;
};

enum class RigidSolveStatus { kOk, kDegenerate, kReflection };

struct RigidSolve {
  Pose transform;
  RigidSolveStatus status = RigidSolveStatus::kOk;
};

/// Weighted least-squares rigid transform mapping `source` onto `target`
/// (cross-covariance SVD). Empty `weights` means uniform.
RigidSolve solve_rigid(std::span<const Eigen::Vector3d> source,
                       std::span<const Eigen::Vector3d> target,
                       std::span<const double> weights = {});

/// Nearest neighbor of every source point within `gate`; sources without one
/// are left out.
CorrespondenceSet associate(std::span<const Eigen::Vector3d> source, const KdTree& target_index,
                            double gate);

/// Condition number of the 6x6 point-to-point Gauss-Newton normal matrix for
/// the given (already transformed) points, rotation taken about the origin
/// of their frame.
double point_to_point_condition(std::span<const Eigen::Vector3d> points);

/// Local point-to-point ICP of one unit against the whole previous scan.
/// `init` is a LiDAR-frame pose; the result is expressed in the unit frame.
UnitTransform estimate_unit_transform(const GeometricUnit& unit, const PointCloud& source,
                                      const KdTree& target_index, const Pose& init,
                                      const RegistrationParams& params);

/// One transform per unit holding at least `min_points` points, in key order.
std::vector<UnitTransform> estimate_all_units(const UnitGrid& grid, const PointCloud& source,
                                              const KdTree& target_index, const Pose& init,
                                              const RegistrationParams& params);

}  // namespace unitlo
