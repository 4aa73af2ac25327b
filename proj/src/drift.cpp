#include "unitlo/drift.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

struct Accumulator {
  std::array<double, kDriftLengths.size()> t{};
  std::array<double, kDriftLengths.size()> r{};
  std::array<std::size_t, kDriftLengths.size()> n{};

  void add(const Trajectory& est, const Trajectory& gt) {
    if (est.size() != gt.size()) throw std::invalid_argument("evaluate_drift: trajectory lengths differ");
    const std::vector<double> dist = path_distances(gt);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      for (std::size_t l = 0; l < kDriftLengths.size(); ++l) {
        const double target = dist[i] + kDriftLengths[l] - 1e-9;
        const auto it = std::lower_bound(dist.begin() + static_cast<std::ptrdiff_t>(i), dist.end(), target);
        if (it == dist.end()) break;  // longer lengths cannot fit either
        const auto j = static_cast<std::size_t>(it - dist.begin());
        const Pose gt_rel = gt.poses[i].inverse() * gt.poses[j];
        const Pose est_rel = est.poses[i].inverse() * est.poses[j];
        const Pose err = gt_rel.inverse() * est_rel;
        t[l] += err.translation().norm() / kDriftLengths[l];
        r[l] += rotation_angle(err.rotation()) / kDriftLengths[l];
        ++n[l];
      }
    }
  }

  DriftReport report() const {
    DriftReport rep;
    double t_sum = 0.0;
    double r_sum = 0.0;
    for (std::size_t l = 0; l < kDriftLengths.size(); ++l) {
      if (n[l] == 0) continue;
      const double c = static_cast<double>(n[l]);
      rep.per_length.push_back({kDriftLengths[l], 100.0 * t[l] / c,
                                100.0 * r[l] / c * 180.0 / std::numbers::pi, n[l]});
      t_sum += t[l];
      r_sum += r[l];
      rep.subsequences += n[l];
    }
    if (rep.subsequences > 0) {
      const double c = static_cast<double>(rep.subsequences);
      rep.t_rel = 100.0 * t_sum / c;
      rep.r_rel = 100.0 * r_sum / c * 180.0 / std::numbers::pi;
    }
    return rep;
  }
};

}  // namespace

std::vector<double> path_distances(const Trajectory& traj) {
  std::vector<double> d(traj.size(), 0.0);
  for (std::size_t i = 1; i < traj.size(); ++i)
    d[i] = d[i - 1] + (traj.poses[i].translation() - traj.poses[i - 1].translation()).norm();
  return d;
}

DriftReport evaluate_drift(const Trajectory& estimate, const Trajectory& ground_truth) {
  Accumulator acc;
  acc.add(estimate, ground_truth);
  return acc.report();
}

MultiSequenceDrift evaluate_drift(const std::vector<std::string>& names,
                                  const std::vector<Trajectory>& estimates,
                                  const std::vector<Trajectory>& ground_truths) {
  if (names.size() != estimates.size() || names.size() != ground_truths.size())
    throw std::invalid_argument("evaluate_drift: sequence lists not aligned");
  MultiSequenceDrift out;
  Accumulator pooled;
  for (std::size_t s = 0; s < names.size(); ++s) {
    Accumulator one;
    one.add(estimates[s], ground_truths[s]);
    pooled.add(estimates[s], ground_truths[s]);
    out.sequences.push_back({names[s], one.report()});
  }
  out.overall = pooled.report();
  return out;
}

}  // namespace unitlo
