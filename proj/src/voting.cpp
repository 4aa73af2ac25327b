#include "unitlo/voting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

using Vector12 = Eigen::Matrix<double, 12, 1>;
using Matrix12 = Eigen::Matrix<double, 12, 12>;

std::vector<Pose> lidar_frame_transforms(std::span<const UnitTransform> units,
                                         std::span<const UnitFrameOffset> offsets) {
  if (units.size() != offsets.size()) throw std::invalid_argument("vote: offsets not aligned with units");
  std::vector<Pose> out;
  out.reserve(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) out.push_back(from_unit_frame(units[i].transform, offsets[i]));
  return out;
}

Vector12 pose_params(const Pose& p) {
  Vector12 theta;
  const Eigen::Matrix3d r = p.rotation_matrix();
  theta.head<9>() = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(r.data());
  theta.tail<3>() = p.translation();
  return theta;
}

// Mahalanobis part of the alignment loss as an exact quadratic in
// θ = (vec R, t), with correspondences and Σ frozen at a base pose:
//   M(θ0 + Δ) = M0 + g·Δ + ½ Δᵀ H Δ.
class FrozenQuadratic {
 public:
  FrozenQuadratic(std::span<const UgcPair> pairs, const ScanView& current, const ScanView& previous,
                  const Pose& base, CovarianceMode mode)
      : base_(pose_params(base)) {
    h_.setZero();
    g_.setZero();
    const Eigen::Matrix3d r = base.rotation_matrix();
    for (const UgcPair& p : pairs) {
      const Eigen::Vector3d& y = current.points[p.current];
      const Eigen::Vector3d e = previous.points[p.previous] - base * y;
      Eigen::Matrix3d sigma = previous.covariances[p.previous].matrix() +
                              r * current.covariances[p.current].matrix() * r.transpose();
      if (mode == CovarianceMode::kScalar) sigma = Eigen::Matrix3d::Identity() * (sigma.trace() / 3.0);
      const Eigen::Matrix3d w = sigma.inverse();
      const Eigen::Vector3d we = w * e;
      const double u[4] = {y.x(), y.y(), y.z(), 1.0};
      for (int i = 0; i < 4; ++i) {
        g_.segment<3>(3 * i) -= u[i] * we;
        for (int j = i; j < 4; ++j) h_.block<3, 3>(3 * i, 3 * j) += (u[i] * u[j]) * w;
      }
      m0_ += 0.5 * e.dot(we);
    }
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < i; ++j) h_.block<3, 3>(3 * i, 3 * j) = h_.block<3, 3>(3 * j, 3 * i).transpose();
  }

  // Loss change relative to the base pose.
  [[nodiscard]] double change(const Pose& p) const {
    const Vector12 d = pose_params(p) - base_;
    return g_.dot(d) + 0.5 * d.dot(h_ * d);
  }

 private:
  Vector12 base_;
  Matrix12 h_;
  Vector12 g_;
  double m0_ = 0.0;
};

// Unnormalized softmax sums for the two votes, updated in O(1) when a single
// score moves.
class IncrementalVote {
 public:
  IncrementalVote(const SelectionScores& scores, const std::vector<Pose>& lidar, double temperature)
      : lidar_(lidar), temperature_(temperature) {
    const std::size_t n = lidar.size();
    rot_shift_ = *std::max_element(scores.rot.begin(), scores.rot.end());
    tr_shift_ = *std::max_element(scores.tr.begin(), scores.tr.end());
    rot_mass_.resize(n);
    tr_mass_.resize(n);
    sign_.assign(n, 1.0);
    std::size_t ref = n;
    for (std::size_t i = 0; i < n; ++i) {
      rot_mass_[i] = mass(scores.rot[i], rot_shift_);
      tr_mass_[i] = mass(scores.tr[i], tr_shift_);
      if (ref == n && rot_mass_[i] > 0.0) ref = i;
    }
    if (ref == n) throw EmptyListError("refine_weights: no unit carries rotation weight");
    const Eigen::Vector4d reference = lidar[ref].rotation().coeffs();
    for (std::size_t i = 0; i < n; ++i)
      sign_[i] = lidar[i].rotation().coeffs().dot(reference) < 0.0 ? -1.0 : 1.0;
    q_sum_.setZero();
    t_sum_.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      q_sum_ += rot_mass_[i] * sign_[i] * lidar[i].rotation().coeffs();
      t_sum_ += tr_mass_[i] * lidar[i].translation();
      tr_total_ += tr_mass_[i];
    }
  }

  [[nodiscard]] Pose pose() const { return make_pose(q_sum_, t_sum_, tr_total_); }

  // Pose after adding `step` to score i of the given channel.
  [[nodiscard]] Pose candidate(std::size_t i, bool rotation, double step) const {
    if (rotation) {
      const double dm = rot_mass_[i] * std::expm1(step / temperature_);
      return make_pose(q_sum_ + dm * sign_[i] * lidar_[i].rotation().coeffs(), t_sum_, tr_total_);
    }
    const double dm = tr_mass_[i] * std::expm1(step / temperature_);
    return make_pose(q_sum_, t_sum_ + dm * lidar_[i].translation(), tr_total_ + dm);
  }

  void apply(std::size_t i, bool rotation, double step) {
    if (rotation) {
      const double dm = rot_mass_[i] * std::expm1(step / temperature_);
      q_sum_ += dm * sign_[i] * lidar_[i].rotation().coeffs();
      rot_mass_[i] += dm;
    } else {
      const double dm = tr_mass_[i] * std::expm1(step / temperature_);
      t_sum_ += dm * lidar_[i].translation();
      tr_total_ += dm;
      tr_mass_[i] += dm;
    }
  }

 private:
  double mass(double score, double shift) const {
    return std::isinf(score) && score < 0 ? 0.0 : std::exp((score - shift) / temperature_);
  }

  static Pose make_pose(const Eigen::Vector4d& q_sum, const Eigen::Vector3d& t_sum, double t_total) {
    Eigen::Quaterniond q;
    const double n = q_sum.norm();
    if (n < 1e-300) throw ZeroNormError("refine_weights: rotation vote cancelled out");
    q.coeffs() = q_sum / n;
    return Pose::FromUnitQuaternion(q, t_sum / t_total);
  }

  const std::vector<Pose>& lidar_;
  double temperature_;
  double rot_shift_ = 0.0;
  double tr_shift_ = 0.0;
  std::vector<double> rot_mass_;
  std::vector<double> tr_mass_;
  std::vector<double> sign_;
  Eigen::Vector4d q_sum_;
  Eigen::Vector3d t_sum_;
  double tr_total_ = 0.0;
};

}  // namespace

SelectionScores initial_scores(std::span<const UnitTransform> units, const ScoringParams& params) {
  if (units.empty()) throw EmptyListError("initial_scores: no unit transforms");
  SelectionScores s;
  s.rot.resize(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) {
    const UnitTransform& u = units[i];
    s.rot[i] = u.converged ? -params.residual_weight * u.mean_residual -
                                 params.condition_weight * std::log10(u.hessian_cond) +
                                 params.inlier_weight * std::log1p(static_cast<double>(u.inlier_count))
                           : kNegInf;
    if (std::isnan(s.rot[i])) s.rot[i] = kNegInf;
  }
  s.tr = s.rot;
  return s;
}

SelectionScores equal_scores(std::span<const UnitTransform> units) {
  if (units.empty()) throw EmptyListError("equal_scores: no unit transforms");
  SelectionScores s;
  for (const UnitTransform& u : units) s.rot.push_back(u.converged ? 0.0 : kNegInf);
  s.tr = s.rot;
  return s;
}

std::vector<double> softmax(std::span<const double> scores, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax temperature must be positive");
  if (scores.empty()) throw EmptyListError("softmax of an empty score list");
  const double shift = *std::max_element(scores.begin(), scores.end());
  if (std::isinf(shift) && shift < 0) throw EmptyListError("softmax: every score is -inf");
  std::vector<double> w(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    w[i] = std::isinf(scores[i]) && scores[i] < 0 ? 0.0 : std::exp((scores[i] - shift) / temperature);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

VotingWeights normalize_scores(const SelectionScores& scores, double temperature) {
  return {softmax(scores.rot, temperature), softmax(scores.tr, temperature)};
}

Pose vote_ego_motion(std::span<const UnitTransform> units, std::span<const UnitFrameOffset> offsets,
                     const VotingWeights& weights) {
  if (units.empty()) throw EmptyListError("vote_ego_motion: no unit transforms");
  if (weights.rot.size() != units.size() || weights.tr.size() != units.size())
    throw std::invalid_argument("vote_ego_motion: weights not aligned with units");
  const std::vector<Pose> lidar = lidar_frame_transforms(units, offsets);
  std::vector<Eigen::Quaterniond> quats;
  quats.reserve(lidar.size());
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < lidar.size(); ++i) {
    quats.push_back(lidar[i].rotation());
    if (weights.tr[i] != 0.0) t += weights.tr[i] * lidar[i].translation();
  }
  const Eigen::Quaterniond q = average_rotations<double>(quats, weights.rot);
  return Pose::FromUnitQuaternion(q, t);
}

std::vector<std::uint32_t> stride_sample(std::size_t n, std::size_t max_points) {
  std::vector<std::uint32_t> out;
  if (max_points == 0 || n <= max_points) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint32_t>(i);
    return out;
  }
  out.reserve(max_points);
  for (std::size_t i = 0; i < max_points; ++i)
    out.push_back(static_cast<std::uint32_t>((i * n) / max_points));
  return out;
}

WeightRefinement refine_weights(const SelectionScores& scores, std::span<const UnitTransform> units,
                                std::span<const UnitFrameOffset> offsets, const ScanView& current,
                                const ScanView& previous, const RefineWeightsParams& params) {
  if (params.steps < 0) throw std::invalid_argument("refine_weights: negative step count");
  if (scores.rot.size() != units.size() || scores.tr.size() != units.size())
    throw std::invalid_argument("refine_weights: scores not aligned with units");

  WeightRefinement out;
  out.scores = scores;
  out.pose = vote_ego_motion(units, offsets, normalize_scores(scores, params.temperature));
  if (params.steps == 0) return out;

  const std::vector<Pose> lidar = lidar_frame_transforms(units, offsets);
  const std::vector<std::uint32_t> sample = stride_sample(current.points.size(), params.max_points);
  double loss = ugc_loss(current, previous, out.pose, params.gate, params.mode, sample).total_loss;
  out.loss_trace.push_back(loss);

  for (int round = 0; round < params.steps; ++round) {
    const std::vector<UgcPair> pairs = ugc_associate(current, previous, out.pose, params.gate, sample);
    const FrozenQuadratic model(pairs, current, previous, out.pose, params.mode);
    IncrementalVote vote(out.scores, lidar, params.temperature);
    SelectionScores trial = out.scores;
    double level = model.change(vote.pose());
    std::size_t accepted = 0;

    for (std::size_t i = 0; i < units.size(); ++i) {
      for (const bool rotation : {true, false}) {
        double& score = rotation ? trial.rot[i] : trial.tr[i];
        if (std::isinf(score)) continue;
        for (const double step : {params.delta, -params.delta}) {
          const double value = model.change(vote.candidate(i, rotation, step));
          if (value < level - 1e-12) {
            vote.apply(i, rotation, step);
            score += step;
            level = value;
            ++accepted;
            break;
          }
        }
      }
    }
    if (accepted == 0) break;

    const Pose pose = vote_ego_motion(units, offsets, normalize_scores(trial, params.temperature));
    const double next = ugc_loss(current, previous, pose, params.gate, params.mode, sample).total_loss;
    if (next > loss) break;
    out.scores = std::move(trial);
    out.pose = pose;
    loss = next;
    out.loss_trace.push_back(loss);
    out.accepted_moves += accepted;
    ++out.rounds_kept;
  }
  return out;
}

Pose refine_pose_icp(const Pose& t, std::span<const Eigen::Vector3d> current,
                     const KdTree& previous_index, int iterations, double gate,
                     std::span<const double> weights) {
  if (iterations < 1) throw std::invalid_argument("refine_pose_icp: need at least one iteration");
  if (previous_index.empty()) throw EmptyTargetError("refine_pose_icp: empty previous scan");
  if (!weights.empty() && weights.size() != current.size())
    throw std::invalid_argument("refine_pose_icp: weights not aligned with points");

  Pose pose = t;
  std::vector<Eigen::Vector3d> src;
  std::vector<Eigen::Vector3d> dst;
  std::vector<double> w;
  for (int it = 0; it < iterations; ++it) {
    src.clear();
    dst.clear();
    w.clear();
    for (std::size_t i = 0; i < current.size(); ++i) {
      if (!weights.empty() && weights[i] <= 0.0) continue;
      if (auto nb = previous_index.nearest(pose * current[i], gate)) {
        src.push_back(current[i]);
        dst.push_back(previous_index.point(nb->index));
        w.push_back(weights.empty() ? 1.0 : weights[i]);
      }
    }
    if (src.size() < 3) break;
    const RigidSolve solve = solve_rigid(src, dst, w);
    if (solve.status == RigidSolveStatus::kDegenerate) break;
    pose = solve.transform;
  }
  return pose;
}

}  // namespace unitlo
