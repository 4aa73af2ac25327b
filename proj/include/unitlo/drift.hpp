#pragma once

#include <array>
#include <string>
#include <vector>

#include "unitlo/point_cloud.hpp"

namespace unitlo {

inline constexpr std::array<double, 8> kDriftLengths = {100, 200, 300, 400, 500, 600, 700, 800};

struct LengthError {
  double length = 0.0;
  double translation_percent = 0.0;  // mean over this length's subsequences
  double rotation_deg_per_100m = 0.0;
  std::size_t count = 0;
};

struct DriftReport {
  std::vector<LengthError> per_length;  // lengths with at least one subsequence
  double t_rel = 0.0;  // %, mean over every evaluated subsequence
  double r_rel = 0.0;  // deg/100m
  std::size_t subsequences = 0;

  [[nodiscard]] bool empty() const { return subsequences == 0; }
};

/// Relative-pose drift over 100..800 m subsequences. Every frame starts a
/// subsequence; it ends at the first frame whose ground-truth arc length is
/// at least L further along. A ground truth shorter than 100 m yields an
/// empty report.
DriftReport evaluate_drift(const Trajectory& estimate, const Trajectory& ground_truth);

struct SequenceDrift {
  std::string name;
  DriftReport report;
};

struct MultiSequenceDrift {
  std::vector<SequenceDrift> sequences;
  DriftReport overall;  // pooled over all sequences' subsequences
};

MultiSequenceDrift evaluate_drift(const std::vector<std::string>& names,
                                  const std::vector<Trajectory>& estimates,
                                  const std::vector<Trajectory>& ground_truths);

/// Cumulative ground-truth path length per frame.
std::vector<double> path_distances(const Trajectory& traj);

}  // namespace unitlo
