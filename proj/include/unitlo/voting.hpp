#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

#include "unitlo/kdtree.hpp"
#include "unitlo/se3.hpp"
#include "unitlo/ugc_objective.hpp"
#include "unitlo/unit_registration.hpp"

namespace unitlo {

/// Per-unit selection scores for the rotation and translation votes. −∞ marks
/// a unit excluded from voting.
struct SelectionScores {
  std::vector<double> rot;
  std::vector<double> tr;
};

/// Softmax-normalized voting weights; each array sums to one.
struct VotingWeights {
  std::vector<double> rot;
  std::vector<double> tr;
};

struct ScoringParams {
  double residual_weight = 4.0;   // a
  double condition_weight = 0.5;  // b
  double inlier_weight = 0.25;    // c
};

/// l = −a·mean_residual − b·log10(hessian_cond) + c·log(1 + inliers), the same
/// for rotation and translation; non-converged units score −∞.
SelectionScores initial_scores(std::span<const UnitTransform> units,
                               const ScoringParams& params = {});

/// Uniform scores over converged units (the equal-weight voting ablation).
SelectionScores equal_scores(std::span<const UnitTransform> units);

/// exp(l_i/γ) / Σ_j exp(l_j/γ) with max-subtraction. All −∞ is an error.
std::vector<double> softmax(std::span<const double> scores, double temperature = 1.0);

VotingWeights normalize_scores(const SelectionScores& scores, double temperature = 1.0);

/// Converts every unit transform back to the LiDAR frame and averages:
/// rotation by chordal quaternion mean under w_rot, translation by the
/// w_tr-weighted sum.
Pose vote_ego_motion(std::span<const UnitTransform> units, std::span<const UnitFrameOffset> offsets,
                     const VotingWeights& weights);

struct RefineWeightsParams {
  double temperature = 1.0;
  int steps = 2;
  double delta = 0.5;
  double gate = 1.0;
  CovarianceMode mode = CovarianceMode::kFull;
  std::size_t max_points = 4096;  // stride sample of the current scan; 0 = all
};

struct WeightRefinement {
  SelectionScores scores;
  Pose pose;
  std::vector<double> loss_trace;  // ugc loss at the voted pose, start + after each kept round
  std::size_t accepted_moves = 0;
  int rounds_kept = 0;
};

/// Coordinate descent of the voted pose's alignment loss over the selection
/// scores. Each round re-associates the current scan at the voted pose,
/// then visits units in key order (rotation score before translation
/// score), trying +δ then −δ and keeping a move when it lowers the loss with
/// correspondences and Σ held at the round's base pose. A round whose
/// re-associated loss ends higher than it started is rolled back and ends
/// the search.
WeightRefinement refine_weights(const SelectionScores& scores, std::span<const UnitTransform> units,
                                std::span<const UnitFrameOffset> offsets, const ScanView& current,
                                const ScanView& previous, const RefineWeightsParams& params);

/// `iterations` rounds of whole-scan point-to-point ICP starting at `t`.
/// `weights` (optional, aligned with `current`) scale each point's pull.
Pose refine_pose_icp(const Pose& t, std::span<const Eigen::Vector3d> current,
                     const KdTree& previous_index, int iterations = 2, double gate = 1.0,
                     std::span<const double> weights = {});

/// Deterministic stride sample of [0, n) with at most `max_points` entries.
std::vector<std::uint32_t> stride_sample(std::size_t n, std::size_t max_points);

}  // namespace unitlo
