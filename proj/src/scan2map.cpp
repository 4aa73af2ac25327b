#include "unitlo/scan2map.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "unitlo/errors.hpp"
#include "unitlo/log.hpp"
#include "unitlo/parallel.hpp"

namespace unitlo {
namespace {

using Vector6 = Eigen::Matrix<double, 6, 1>;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

double huber(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

struct Moments {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
};

Moments weighted_moments(std::span<const VoxelHit> voxels, std::span<const double> w) {
  Moments m;
  double total = 0.0;
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    m.mean += w[i] * voxels[i].voxel->mean;
    total += w[i];
  }
  m.mean /= total;
  for (std::size_t i = 0; i < voxels.size(); ++i) {
    const Eigen::Vector3d d = voxels[i].voxel->mean - m.mean;
    m.scatter += w[i] * d * d.transpose();
  }
  m.scatter /= total;
  return m;
}

// Rotation about the sensor position rather than the map origin keeps the
// rotation and translation blocks of the normal matrix apart.
Pose retract_about_sensor(const Pose& t, const Vector6& xi) {
  const Eigen::Quaterniond dq = exp_so3<double>(xi.tail<3>());
  return Pose((dq * t.rotation()).normalized(), t.translation() + xi.head<3>());
}

// A keypoint paired with the map geometry it is pulled toward.
struct Factor {
  bool planar = true;
  Eigen::Vector3d x = Eigen::Vector3d::Zero();  // keypoint in the scan frame
  Eigen::Vector3d axis = Eigen::Vector3d::Zero();  // plane normal or line direction
  Eigen::Vector3d anchor = Eigen::Vector3d::Zero();  // point on the plane or line
};

// Signed plane distance, or perpendicular offset from the line.
Eigen::Vector3d factor_residual(const Factor& f, const Eigen::Vector3d& p) {
  if (f.planar) return Eigen::Vector3d(f.axis.dot(p - f.anchor), 0.0, 0.0);
  const Eigen::Vector3d d = p - f.anchor;
  return d - f.axis * f.axis.dot(d);
}

class Associator {
 public:
  Associator(const PointCloud& cloud, const KeypointSet& keypoints, const VoxelMapState& map,
             const Scan2MapParams& params)
      : cloud_(cloud), keypoints_(keypoints), map_(map), params_(params) {}

  [[nodiscard]] std::size_t keypoint_count() const { return keypoints_.size(); }

  [[nodiscard]] std::vector<Factor> associate(const Pose& t) const {
    const std::size_t n = keypoints_.size();
    std::vector<std::optional<Factor>> slots(n);
    parallel_for(n, params_.threads, [&](std::size_t k) {
      std::vector<VoxelHit> hits;
      const bool planar = k < keypoints_.planar.size();
      const std::uint32_t idx =
          planar ? keypoints_.planar[k].index : keypoints_.edge[k - keypoints_.planar.size()].index;
      const Eigen::Vector3d local_axis =
          planar ? keypoints_.planar[k].normal : keypoints_.edge[k - keypoints_.planar.size()].direction;
      const Eigen::Vector3d x = cloud_.points[idx];
      const Eigen::Vector3d p = t * x;
      query_neighbors(map_, p, params_.search_radius, hits);
      std::stable_sort(hits.begin(), hits.end(), [](const VoxelHit& a, const VoxelHit& b) {
        return a.squared_distance < b.squared_distance;
      });
      if (hits.size() > params_.max_neighbors) hits.resize(params_.max_neighbors);
      Factor f;
      f.planar = planar;
      f.x = x;
      if (planar) {
        if (hits.size() < params_.min_plane_voxels) return;
        const auto plane = fit_map_plane(hits, params_);
        if (!plane || std::abs(plane->normal.dot(t.rotation() * local_axis)) < params_.min_axis_agreement) return;
        f.axis = plane->normal;
        f.anchor = -plane->offset * plane->normal;
      } else {
        if (hits.size() < params_.min_line_voxels) return;
        const auto line = fit_map_line(hits, params_);
        if (!line || std::abs(line->direction.dot(t.rotation() * local_axis)) < params_.min_axis_agreement) return;
        f.axis = line->direction;
        f.anchor = line->point;
      }
      slots[k] = f;
    });
    std::vector<Factor> out;
    for (auto& s : slots)
      if (s) out.push_back(*s);
    return out;
  }

  [[nodiscard]] double cost(const Pose& t, std::span<const Factor> factors) const {
    double c = static_cast<double>(keypoints_.size() - factors.size()) *
               huber(params_.search_radius, params_.huber_delta);
    for (const Factor& f : factors) c += huber(factor_residual(f, t * f.x).norm(), params_.huber_delta);
    return c;
  }

 private:
  const PointCloud& cloud_;
  const KeypointSet& keypoints_;
  const VoxelMapState& map_;
  const Scan2MapParams& params_;
};

}  // namespace

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw EmptyListError("percentile of an empty list");
  if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

std::vector<UnitKey> select_representative_units(const VotingWeights& weights,
                                                 std::span<const UnitTransform> units,
                                                 double percentile) {
  if (units.empty()) throw EmptyListError("select_representative_units: no units");
  if (weights.rot.size() != units.size() || weights.tr.size() != units.size())
    throw std::invalid_argument("select_representative_units: weights not aligned with units");
  std::vector<double> products(units.size());
  for (std::size_t i = 0; i < units.size(); ++i) products[i] = weights.rot[i] * weights.tr[i];
  const double tau = percentile_linear(products, percentile);
  std::vector<UnitKey> out;
  for (std::size_t i = 0; i < units.size(); ++i)
    if (products[i] > tau) out.push_back(units[i].key);
  return out;
}

double local_curvature(const PointCloud& cloud, const KdTree& index, std::uint32_t i, int k) {
  const auto nbrs = index.knn(cloud.points[i], static_cast<std::size_t>(k) + 1);
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  int used = 0;
  for (const auto& nb : nbrs) {
    if (nb.index == i) continue;
    if (used == k) break;
    sum += cloud.points[nb.index] - cloud.points[i];
    ++used;
  }
  const double range = cloud.points[i].norm();
  if (used == 0 || range <= 0.0) return 0.0;
  return sum.norm() / (used * range);
}

KeypointSet extract_keypoints(const PointCloud& cloud, const KdTree& index, const UnitGrid& grid,
                              std::span<const UnitKey> selected, const KeypointParams& params) {
  KeypointSet out;
  std::vector<UnitKey> keys(selected.begin(), selected.end());
  if (keys.empty()) {
    out.used_fallback = true;
    log::warn("no representative unit selected; drawing keypoints from all units");
    for (const auto& [k, u] : grid.units) keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());

  struct Candidate {
    std::uint32_t index;
    double curvature;
    Eigen::Vector3d centroid;
    Eigen::Vector3d normal;
    Eigen::Vector3d direction;
  };

  const std::size_t k = static_cast<std::size_t>(params.neighbors);
  std::vector<KdTree::Neighbor> nbrs;
  for (const UnitKey& key : keys) {
    const auto it = grid.units.find(key);
    if (it == grid.units.end()) continue;
    std::vector<Candidate> planar;
    std::vector<Candidate> edge;
    for (const std::uint32_t i : it->second.point_indices) {
      const Eigen::Vector3d& x = cloud.points[i];
      index.knn(x, k + 1, nbrs);
      if (nbrs.size() < 4) continue;
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      std::size_t used = 0;
      for (const auto& nb : nbrs) {
        mean += cloud.points[nb.index];
        if (nb.index == i || used == k) continue;
        sum += cloud.points[nb.index] - x;
        ++used;
      }
      mean /= static_cast<double>(nbrs.size());
      const double range = x.norm();
      if (used == 0 || range <= 0.0) continue;
      const double c = sum.norm() / (static_cast<double>(used) * range);

      Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
      for (const auto& nb : nbrs) {
        const Eigen::Vector3d d = cloud.points[nb.index] - mean;
        scatter += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
      es.computeDirect(scatter);
      const Eigen::Vector3d lambda = es.eigenvalues().cwiseMax(0.0);
      const double total = lambda.sum();
      if (!(total > 0.0)) continue;
      const bool flat = lambda[0] / total < params.flatness;
      const Candidate cand{i, c, mean, es.eigenvectors().col(0), es.eigenvectors().col(2)};
      if (flat && c < params.planar_curvature) planar.push_back(cand);
      else if (!flat && c > params.edge_curvature) edge.push_back(cand);
    }

    const auto spread_pick = [&](std::vector<Candidate>& cands, std::size_t cap, bool ascending) {
      std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
        if (a.curvature != b.curvature) return ascending ? a.curvature < b.curvature : a.curvature > b.curvature;
        return a.index < b.index;
      });
      std::vector<Candidate> picked;
      const double sep2 = params.min_separation * params.min_separation;
      for (const Candidate& c : cands) {
        if (picked.size() == cap) break;
        const bool crowded = std::any_of(picked.begin(), picked.end(), [&](const Candidate& p) {
          return (cloud.points[p.index] - cloud.points[c.index]).squaredNorm() < sep2;
        });
        if (!crowded) picked.push_back(c);
      }
      return picked;
    };

    for (const Candidate& c : spread_pick(planar, params.planar_per_unit, true))
      out.planar.push_back({c.index, key, c.normal, -c.normal.dot(c.centroid), c.curvature});
    for (const Candidate& c : spread_pick(edge, params.edge_per_unit, false))
      out.edge.push_back({c.index, key, c.direction, c.centroid, c.curvature});
  }
  return out;
}

namespace {

std::optional<MapPlane> plane_once(std::span<const VoxelHit> voxels, const Scan2MapParams& params) {
  std::vector<double> w(voxels.size(), 1.0);
  Eigen::Vector3d normal;
  Moments m;
  const int passes = params.covariance_weighting ? 2 : 1;
  for (int pass = 0; pass < passes; ++pass) {
    if (pass > 0)
      for (std::size_t i = 0; i < voxels.size(); ++i)
        w[i] = 1.0 / std::max(normal.dot(voxels[i].voxel->covariance * normal), 1e-12);
    m = weighted_moments(voxels, w);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(m.scatter);
    const Eigen::Vector3d lambda = es.eigenvalues();
    if (!(lambda[1] > 1e-4 * lambda[2])) return std::nullopt;  // collinear support
    normal = es.eigenvectors().col(0).normalized();
  }
  return MapPlane{normal, -normal.dot(m.mean)};
}

std::optional<MapLine> line_once(std::span<const VoxelHit> voxels, const Scan2MapParams& params) {
  std::vector<double> w(voxels.size(), 1.0);
  Eigen::Vector3d dir;
  Moments m;
  const int passes = params.covariance_weighting ? 2 : 1;
  for (int pass = 0; pass < passes; ++pass) {
    if (pass > 0) {
      const Eigen::Matrix3d p = Eigen::Matrix3d::Identity() - dir * dir.transpose();
      for (std::size_t i = 0; i < voxels.size(); ++i)
        w[i] = 1.0 / std::max((p * voxels[i].voxel->covariance * p).trace(), 1e-12);
    }
    m = weighted_moments(voxels, w);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es;
    es.computeDirect(m.scatter);
    const Eigen::Vector3d lambda = es.eigenvalues();
    if (!(lambda[2] > 9.0 * lambda[1])) return std::nullopt;
    dir = es.eigenvectors().col(2).normalized();
  }
  return MapLine{dir, m.mean};
}

// Refits after dropping the farthest voxel until every voxel is within
// max_fit_deviation, giving up below `min_count`.
template <typename Fit, typename Deviation>
auto trimmed_fit(std::span<const VoxelHit> voxels, std::size_t min_count, const Scan2MapParams& params,
                 Fit fit, Deviation deviation) -> decltype(fit(voxels, params)) {
  std::vector<VoxelHit> kept(voxels.begin(), voxels.end());
  while (kept.size() >= min_count) {
    const auto model = fit(std::span<const VoxelHit>(kept), params);
    if (!model) return std::nullopt;
    std::size_t worst = 0;
    double worst_dev = -1.0;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      const double d = deviation(*model, kept[i].voxel->mean);
      if (d > worst_dev) {
        worst_dev = d;
        worst = i;
      }
    }
    if (worst_dev <= params.max_fit_deviation) return model;
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(worst));
  }
  return std::nullopt;
}

}  // namespace

std::optional<MapPlane> fit_map_plane(std::span<const VoxelHit> voxels, const Scan2MapParams& params) {
  return trimmed_fit(voxels, std::max<std::size_t>(params.min_plane_voxels, 3), params, plane_once,
                     [](const MapPlane& pl, const Eigen::Vector3d& x) { return std::abs(pl.normal.dot(x) + pl.offset); });
}

std::optional<MapLine> fit_map_line(std::span<const VoxelHit> voxels, const Scan2MapParams& params) {
  return trimmed_fit(voxels, std::max<std::size_t>(params.min_line_voxels, 2), params, line_once,
                     [](const MapLine& ln, const Eigen::Vector3d& x) {
                       const Eigen::Vector3d d = x - ln.point;
                       return (d - ln.direction * ln.direction.dot(d)).norm();
                     });
}

RefinementResult refine_scan_to_map(const Pose& t_init, const PointCloud& cloud,
                                    const KeypointSet& keypoints, const VoxelMapState& map,
                                    const Scan2MapParams& params) {
  RefinementResult res;
  res.pose = t_init;
  const Associator assoc(cloud, keypoints, map, params);
  if (keypoints.size() == 0 || map.voxels.empty()) {
    res.no_correspondence = true;
    res.degenerate = true;
    return res;
  }

  std::vector<Factor> factors = assoc.associate(t_init);
  res.initial_cost = assoc.cost(t_init, factors);
  res.final_cost = res.initial_cost;
  res.inlier_fraction = static_cast<double>(factors.size()) / static_cast<double>(keypoints.size());
  if (factors.empty()) {
    res.no_correspondence = true;
    res.degenerate = true;
    return res;
  }

  Pose pose = t_init;
  for (int it = 0; it < params.max_iterations; ++it) {
    Matrix6 h = Matrix6::Zero();
    Vector6 g = Vector6::Zero();
    for (const Factor& f : factors) {
      const Eigen::Vector3d p = pose * f.x;
      Eigen::Matrix<double, 3, 6> dp;
      dp << Eigen::Matrix3d::Identity(), -skew<double>(p - pose.translation());
      if (f.planar) {
        const double r = f.axis.dot(p - f.anchor);
        const Eigen::Matrix<double, 1, 6> j = f.axis.transpose() * dp;
        const double w = huber_weight(r, params.huber_delta);
        h += w * j.transpose() * j;
        g += w * j.transpose() * r;
      } else {
        const Eigen::Matrix3d proj = Eigen::Matrix3d::Identity() - f.axis * f.axis.transpose();
        const Eigen::Vector3d r = factor_residual(f, p);
        const Eigen::Matrix<double, 3, 6> j = proj * dp;
        const double w = huber_weight(r.norm(), params.huber_delta);
        h += w * j.transpose() * j;
        g += w * j.transpose() * r;
      }
    }

    Eigen::SelfAdjointEigenSolver<Matrix6> es(h);
    const Vector6 lambda = es.eigenvalues();
    const Matrix6 v = es.eigenvectors();
    const Vector6 g_eig = v.transpose() * g;
    for (int i = 0; i < 6; ++i)
      if (lambda[i] < params.degeneracy_threshold) res.degenerate = true;

    const double current = assoc.cost(pose, factors);
    double mu = 0.0;
    bool accepted = false;
    Vector6 dx = Vector6::Zero();
    Pose candidate;
    for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
      Vector6 step_eig = Vector6::Zero();
      for (int i = 0; i < 6; ++i)
        if (lambda[i] >= params.degeneracy_threshold) step_eig[i] = -g_eig[i] / (lambda[i] + mu);
      dx = v * step_eig;
      candidate = retract_about_sensor(pose, dx);
      if (assoc.cost(candidate, factors) < current) accepted = true;
      else mu = mu == 0.0 ? 1e-3 * lambda[5] : mu * 10.0;
    }
    if (!accepted) break;

    pose = candidate;
    res.iterations = it + 1;
    const bool small = dx.head<3>().norm() < params.translation_tol && dx.tail<3>().norm() < params.rotation_tol;
    std::vector<Factor> next = assoc.associate(pose);
    if (next.empty()) break;
    factors = std::move(next);
    if (small) break;
  }

  // Judge the result against the start under one set of correspondences.
  res.initial_cost = assoc.cost(t_init, factors);
  res.final_cost = assoc.cost(pose, factors);
  if (res.final_cost > res.initial_cost) {
    pose = t_init;
    res.final_cost = res.initial_cost;
  }
  res.pose = pose;
  res.inlier_fraction = static_cast<double>(factors.size()) / static_cast<double>(keypoints.size());
  return res;
}

}  // namespace unitlo
