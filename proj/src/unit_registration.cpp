#include "unitlo/unit_registration.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <limits>

#include "unitlo/errors.hpp"
#include "unitlo/parallel.hpp"

namespace unitlo {

RigidSolve solve_rigid(std::span<const Eigen::Vector3d> source,
                       std::span<const Eigen::Vector3d> target, std::span<const double> weights) {
  if (source.size() != target.size()) throw std::invalid_argument("solve_rigid: size mismatch");
  const bool weighted = !weights.empty();
  if (weighted && weights.size() != source.size())
    throw std::invalid_argument("solve_rigid: weights not aligned");

  double wsum = 0.0;
  Eigen::Vector3d cs = Eigen::Vector3d::Zero();
  Eigen::Vector3d ct = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const double w = weighted ? weights[i] : 1.0;
    wsum += w;
    cs += w * source[i];
    ct += w * target[i];
  }
  if (!(wsum > 0.0)) return {Pose::Identity(), RigidSolveStatus::kDegenerate};
  cs /= wsum;
  ct /= wsum;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const double w = weighted ? weights[i] : 1.0;
    h.noalias() += w * (source[i] - cs) * (target[i] - ct).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  RigidSolveStatus status = RigidSolveStatus::kOk;
  if (!(s[0] > 0.0) || s[1] <= 1e-12 * s[0]) status = RigidSolveStatus::kDegenerate;

  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
    // Flipping is the correct fix for (near-)planar data; with full-rank
    // structure the best fit really is a reflection.
    if (s[2] > 1e-6 * s[0] && status == RigidSolveStatus::kOk) status = RigidSolveStatus::kReflection;
  }
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  return {Pose(r, ct - r * cs), status};
}

CorrespondenceSet associate(std::span<const Eigen::Vector3d> source, const KdTree& target_index,
                            double gate) {
  CorrespondenceSet out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (auto nb = target_index.nearest(source[i], gate))
      out.push_back({static_cast<std::uint32_t>(i), nb->index, nb->squared_distance});
  }
  return out;
}

double point_to_point_condition(std::span<const Eigen::Vector3d> points) {
  Eigen::Matrix<double, 6, 6> h = Eigen::Matrix<double, 6, 6>::Zero();
  for (const auto& p : points) {
    Eigen::Matrix<double, 3, 6> j;
    j.leftCols<3>().setIdentity();
    j.rightCols<3>() = -skew<double>(p);
    h.noalias() += j.transpose() * j;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(h, Eigen::EigenvaluesOnly);
  const double lmax = es.eigenvalues()[5];
  if (!(lmax > 0.0)) return std::numeric_limits<double>::infinity();
  const double lmin = std::max(es.eigenvalues()[0], lmax * 1e-16);
  return std::max(1.0, lmax / lmin);
}

UnitTransform estimate_unit_transform(const GeometricUnit& unit, const PointCloud& source,
                                      const KdTree& target_index, const Pose& init,
                                      const RegistrationParams& params) {
  if (target_index.empty()) throw EmptyTargetError("unit registration against an empty scan");
  if (unit.point_count < params.min_points)
    throw TooFewPointsError("unit has " + std::to_string(unit.point_count) + " points, needs " +
                            std::to_string(params.min_points));

  // Work in the unit's self-centered frame: points relative to the cell
  // center, target queried back in the LiDAR frame.
  const Eigen::Vector3d& v = unit.offset.v;
  std::vector<Eigen::Vector3d> local(unit.point_count);
  for (std::size_t i = 0; i < unit.point_count; ++i) local[i] = source.points[unit.point_indices[i]] - v;

  UnitTransform result;
  result.key = unit.key;
  Pose current = to_unit_frame(init, unit.offset);
  RigidSolveStatus last_status = RigidSolveStatus::kOk;

  std::vector<Eigen::Vector3d> moved(local.size());
  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> dst;
  CorrespondenceSet pairs;
  bool settled = false;
  for (int it = 0;; ++it) {
    for (std::size_t i = 0; i < local.size(); ++i) moved[i] = current * local[i] + v;
    pairs = associate(moved, target_index, params.gate);
    double sum = 0.0;
    for (const auto& c : pairs) sum += std::sqrt(c.squared_distance);
    result.residual_trace.push_back(pairs.empty() ? 0.0 : sum / static_cast<double>(pairs.size()));

    if (settled || it >= params.max_iterations || pairs.size() < params.min_inliers) break;

    src.clear();
    dst.clear();
    for (const auto& c : pairs) {
      src.push_back(local[c.source]);
      dst.push_back(target_index.point(c.target) - v);
    }
    const RigidSolve solve = solve_rigid(src, dst);
    last_status = solve.status;
    if (solve.status == RigidSolveStatus::kDegenerate) break;
    const PoseDelta<double> step = pose_delta(current, solve.transform);
    current = solve.transform;
    ++result.iterations;
    if (step.translation < params.translation_tol && step.rotation < params.rotation_tol) settled = true;
  }

  result.transform = current;
  result.inlier_count = pairs.size();
  result.mean_residual = result.residual_trace.back();
  std::vector<Eigen::Vector3d> inliers;
  inliers.reserve(pairs.size());
  for (const auto& c : pairs) inliers.push_back(current * local[c.source]);
  result.hessian_cond = inliers.empty() ? std::numeric_limits<double>::infinity()
                                        : point_to_point_condition(inliers);
  result.converged = pairs.size() >= params.min_inliers && last_status == RigidSolveStatus::kOk;
  return result;
}

std::vector<UnitTransform> estimate_all_units(const UnitGrid& grid, const PointCloud& source,
                                              const KdTree& target_index, const Pose& init,
                                              const RegistrationParams& params) {
  if (target_index.empty()) throw EmptyTargetError("unit registration against an empty scan");
  std::vector<const GeometricUnit*> eligible;
  for (const auto& [key, unit] : grid.units)
    if (unit.point_count >= params.min_points) eligible.push_back(&unit);

  std::vector<UnitTransform> out(eligible.size());
  parallel_for(eligible.size(), params.threads, [&](std::size_t i) {
    out[i] = estimate_unit_transform(*eligible[i], source, target_index, init, params);
  });
  return out;
}

}  // namespace unitlo
