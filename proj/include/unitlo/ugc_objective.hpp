#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "unitlo/covariance.hpp"
#include "unitlo/kdtree.hpp"
#include "unitlo/se3.hpp"

namespace unitlo {

/// Points of one scan with their covariances and (optionally) a spatial
/// index. Non-owning.
struct ScanView {
  std::span<const Eigen::Vector3d> points;
  std::span<const PointCovariance> covariances;
  const KdTree* index = nullptr;
};

/// kFull uses Σ = C_prev + R C_cur Rᵀ. kScalar replaces Σ by σI with σ the
/// mean eigenvalue of the full Σ.
enum class CovarianceMode { kFull, kScalar };

struct AlignmentEvaluation {
  double total_loss = 0.0;
  std::vector<std::uint32_t> source_indices;  // matched points of the current scan
  std::vector<double> per_point_loss;         // aligned with source_indices
  std::size_t correspondence_count = 0;
  std::size_t skipped_count = 0;  // current points without a gated neighbor
  double mean_mahalanobis = 0.0;  // mean of eᵀΣ⁻¹e over matched points
};

struct UgcPair {
  std::uint32_t current = 0;
  std::uint32_t previous = 0;
};

/// Negative log-likelihood of the alignment errors e = x_prev − T x_cur:
/// Σ_p ½ eᵀΣ⁻¹e + ½ log det Σ over current points whose nearest previous
/// point (under T) lies within `gate`. `sample` restricts the evaluated
/// current points; empty means all.
AlignmentEvaluation ugc_loss(const ScanView& current, const ScanView& previous, const Pose& t,
                             double gate, CovarianceMode mode = CovarianceMode::kFull,
                             std::span<const std::uint32_t> sample = {});

/// Nearest-neighbor pairs under `t`, for frozen-correspondence evaluation.
std::vector<UgcPair> ugc_associate(const ScanView& current, const ScanView& previous, const Pose& t,
                                   double gate, std::span<const std::uint32_t> sample = {});

/// Loss with correspondences held fixed.
double ugc_loss_frozen(std::span<const UgcPair> pairs, const ScanView& current,
                       const ScanView& previous, const Pose& t,
                       CovarianceMode mode = CovarianceMode::kFull);

/// Analytic gradient of the frozen-correspondence loss with respect to the
/// left perturbation xi = (rho, phi) used by `retract`.
Vector6T<double> ugc_gradient(std::span<const UgcPair> pairs, const ScanView& current,
                              const ScanView& previous, const Pose& t,
                              CovarianceMode mode = CovarianceMode::kFull);

struct GradientCheckReport {
  Vector6T<double> analytic = Vector6T<double>::Zero();
  Vector6T<double> numeric = Vector6T<double>::Zero();
  double max_relative_error = 0.0;
};

/// Analytic gradient against central differences (step h) along each twist
/// axis, correspondences frozen at `t`. Relative error per axis is
/// |a − n| / max(|a|, |n|, floor).
GradientCheckReport ugc_gradient_check(std::span<const UgcPair> pairs, const ScanView& current,
                                       const ScanView& previous, const Pose& t,
                                       CovarianceMode mode = CovarianceMode::kFull,
                                       double h = 1e-6, double floor = 1e-8);

}  // namespace unitlo
