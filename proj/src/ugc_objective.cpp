#include "unitlo/ugc_objective.hpp"

#include <Eigen/Cholesky>

#include <cmath>

#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

constexpr double kMinSigmaDet = 1e-18;

struct TermValue {
  double loss = 0.0;
  double mahalanobis = 0.0;
};

Eigen::Matrix3d sigma_of(const Eigen::Matrix3d& c_prev, const Eigen::Matrix3d& rotated_cur,
                         CovarianceMode mode) {
  Eigen::Matrix3d sigma = c_prev + rotated_cur;
  if (mode == CovarianceMode::kScalar) sigma = Eigen::Matrix3d::Identity() * (sigma.trace() / 3.0);
  return sigma;
}

TermValue term(const Eigen::Vector3d& e, const Eigen::Matrix3d& sigma) {
  const double det = sigma.determinant();
  if (!(det >= kMinSigmaDet))
    throw SingularSigmaError("alignment covariance is singular (det " + std::to_string(det) + ")");
  const Eigen::LLT<Eigen::Matrix3d> llt(sigma);
  const double m = e.dot(llt.solve(e));
  return {0.5 * m + 0.5 * std::log(det), m};
}

std::size_t sample_size(const ScanView& current, std::span<const std::uint32_t> sample) {
  return sample.empty() ? current.points.size() : sample.size();
}

std::uint32_t sample_at(std::span<const std::uint32_t> sample, std::size_t i) {
  return sample.empty() ? static_cast<std::uint32_t>(i) : sample[i];
}

void check_views(const ScanView& current, const ScanView& previous) {
  if (current.covariances.size() != current.points.size() ||
      previous.covariances.size() != previous.points.size())
    throw std::invalid_argument("ugc: covariance field not aligned with its cloud");
}

}  // namespace

std::vector<UgcPair> ugc_associate(const ScanView& current, const ScanView& previous, const Pose& t,
                                   double gate, std::span<const std::uint32_t> sample) {
  if (previous.index == nullptr) throw std::invalid_argument("ugc: previous scan needs an index");
  if (!(gate > 0.0)) throw std::invalid_argument("ugc: gate must be positive");
  std::vector<UgcPair> pairs;
  const std::size_t n = sample_size(current, sample);
  pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t idx = sample_at(sample, i);
    if (auto nb = previous.index->nearest(t * current.points[idx], gate))
      pairs.push_back({idx, nb->index});
  }
  return pairs;
}

AlignmentEvaluation ugc_loss(const ScanView& current, const ScanView& previous, const Pose& t,
                             double gate, CovarianceMode mode, std::span<const std::uint32_t> sample) {
  check_views(current, previous);
  const std::vector<UgcPair> pairs = ugc_associate(current, previous, t, gate, sample);
  const Eigen::Matrix3d r = t.rotation_matrix();

  AlignmentEvaluation eval;
  eval.source_indices.reserve(pairs.size());
  eval.per_point_loss.reserve(pairs.size());
  double msum = 0.0;
  for (const UgcPair& p : pairs) {
    const Eigen::Vector3d e = previous.points[p.previous] - t * current.points[p.current];
    const Eigen::Matrix3d sigma =
        sigma_of(previous.covariances[p.previous].matrix(),
                 r * current.covariances[p.current].matrix() * r.transpose(), mode);
    const TermValue v = term(e, sigma);
    eval.source_indices.push_back(p.current);
    eval.per_point_loss.push_back(v.loss);
    eval.total_loss += v.loss;
    msum += v.mahalanobis;
  }
  eval.correspondence_count = pairs.size();
  eval.skipped_count = sample_size(current, sample) - pairs.size();
  eval.mean_mahalanobis = pairs.empty() ? 0.0 : msum / static_cast<double>(pairs.size());
  return eval;
}

double ugc_loss_frozen(std::span<const UgcPair> pairs, const ScanView& current,
                       const ScanView& previous, const Pose& t, CovarianceMode mode) {
  check_views(current, previous);
  const Eigen::Matrix3d r = t.rotation_matrix();
  double total = 0.0;
  for (const UgcPair& p : pairs) {
    const Eigen::Vector3d e = previous.points[p.previous] - t * current.points[p.current];
    const Eigen::Matrix3d sigma =
        sigma_of(previous.covariances[p.previous].matrix(),
                 r * current.covariances[p.current].matrix() * r.transpose(), mode);
    total += term(e, sigma).loss;
  }
  return total;
}

Vector6T<double> ugc_gradient(std::span<const UgcPair> pairs, const ScanView& current,
                              const ScanView& previous, const Pose& t, CovarianceMode mode) {
  check_views(current, previous);
  const Eigen::Matrix3d r = t.rotation_matrix();
  Vector6T<double> grad = Vector6T<double>::Zero();
  for (const UgcPair& p : pairs) {
    const Eigen::Vector3d y = t * current.points[p.current];
    const Eigen::Vector3d e = previous.points[p.previous] - y;
    const Eigen::Matrix3d s = r * current.covariances[p.current].matrix() * r.transpose();
    const Eigen::Matrix3d sigma = sigma_of(previous.covariances[p.previous].matrix(), s, mode);
    const Eigen::Matrix3d sigma_inv = sigma.inverse();
    const Eigen::Vector3d a = sigma_inv * e;

    // de/drho = -I, de/dphi = [y]x.
    grad.head<3>() += -a;
    grad.tail<3>() += skew<double>(y).transpose() * a;

    if (mode == CovarianceMode::kFull) {
      // dΣ/dphi_k = [e_k]x S − S [e_k]x.
      for (int k = 0; k < 3; ++k) {
        const Eigen::Matrix3d g = skew<double>(Eigen::Vector3d::Unit(k));
        const Eigen::Matrix3d ds = g * s - s * g;
        grad[3 + k] += -0.5 * a.dot(ds * a) + 0.5 * (sigma_inv * ds).trace();
      }
    }
  }
  return grad;
}

GradientCheckReport ugc_gradient_check(std::span<const UgcPair> pairs, const ScanView& current,
                                       const ScanView& previous, const Pose& t, CovarianceMode mode,
                                       double h, double floor) {
  GradientCheckReport report;
  report.analytic = ugc_gradient(pairs, current, previous, t, mode);
  for (int k = 0; k < 6; ++k) {
    Vector6T<double> xi = Vector6T<double>::Zero();
    xi[k] = h;
    const double fp = ugc_loss_frozen(pairs, current, previous, retract(t, xi), mode);
    const double fm = ugc_loss_frozen(pairs, current, previous, retract(t, Vector6T<double>(-xi)), mode);
    report.numeric[k] = (fp - fm) / (2.0 * h);
    const double denom =
        std::max({std::abs(report.analytic[k]), std::abs(report.numeric[k]), floor});
    report.max_relative_error =
        std::max(report.max_relative_error, std::abs(report.analytic[k] - report.numeric[k]) / denom);
  }
  return report;
}

}  // namespace unitlo
