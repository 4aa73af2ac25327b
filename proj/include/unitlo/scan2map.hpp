#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "unitlo/kdtree.hpp"
#include "unitlo/point_cloud.hpp"
#include "unitlo/se3.hpp"
#include "unitlo/unit_partition.hpp"
#include "unitlo/unit_registration.hpp"
#include "unitlo/voting.hpp"
#include "unitlo/voxel_map.hpp"

namespace unitlo {

/// q-th percentile (0..100) with linear interpolation between order
/// statistics (numpy's default rule).
double percentile_linear(std::vector<double> values, double q);

/// Keys of units whose weight product w_rot·w_tr strictly exceeds the
/// `percentile`-th percentile of all products. Empty when every product
/// ties.
std::vector<UnitKey> select_representative_units(const VotingWeights& weights,
                                                 std::span<const UnitTransform> units,
                                                 double percentile = 60.0);

struct PlanarKeypoint {
  std::uint32_t index = 0;
  UnitKey unit;
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // local scan plane
  double offset = 0.0;                                // nᵀx + offset = 0
  double curvature = 0.0;
};

struct EdgeKeypoint {
  std::uint32_t index = 0;
  UnitKey unit;
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();  // local scan line
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  double curvature = 0.0;
};

struct KeypointSet {
  std::vector<PlanarKeypoint> planar;
  std::vector<EdgeKeypoint> edge;
  bool used_fallback = false;  // no representative unit: drew from all units

  [[nodiscard]] std::size_t size() const { return planar.size() + edge.size(); }
};

struct KeypointParams {
  int neighbors = 10;
  std::size_t planar_per_unit = 4;
  std::size_t edge_per_unit = 2;
  double planar_curvature = 0.004;  // c below this may be planar
  double edge_curvature = 0.01;     // c above this may be an edge
  // Smallest-eigenvalue share of the neighborhood scatter separating flat
  // patches (and plane borders) from creases.
  double flatness = 0.01;
  double min_separation = 0.4;  // meters between keypoints of one unit
};

/// Local curvature c = ‖Σ_j (x_j − x_p)‖ / (k·‖x_p‖) over the k nearest
/// neighbors (excluding the point itself).
double local_curvature(const PointCloud& cloud, const KdTree& index, std::uint32_t i, int k);

/// Planar and edge keypoints from the selected units (all units when
/// `selected` is empty), ranked by curvature and capped per unit.
KeypointSet extract_keypoints(const PointCloud& cloud, const KdTree& index, const UnitGrid& grid,
                              std::span<const UnitKey> selected, const KeypointParams& params = {});

struct Scan2MapParams {
  double search_radius = 1.2;
  std::size_t max_neighbors = 8;
  std::size_t min_plane_voxels = 5;
  std::size_t min_line_voxels = 3;
  double max_fit_deviation = 0.05;
  // |cos| between the keypoint's own normal (or direction) and the map fit
  // below which the pairing is dropped.
  double min_axis_agreement = 0.9;
  double huber_delta = 0.1;
  int max_iterations = 10;
  double translation_tol = 1e-4;
  double rotation_tol = 1e-4;
  double degeneracy_threshold = 10.0;
  bool covariance_weighting = true;
  int threads = 1;
};

struct RefinementResult {
  Pose pose;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double inlier_fraction = 0.0;
  bool degenerate = false;
  bool no_correspondence = false;
};

struct MapPlane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 0.0;
};

struct MapLine {
  Eigen::Vector3d direction = Eigen::Vector3d::UnitX();
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
};

/// Plane through the given voxels, each weighted by 1/(nᵀC̄n) when
/// `covariance_weighting` is on. The farthest voxel is dropped and the fit
/// redone until all lie within `max_fit_deviation`; empty when fewer than
/// `min_plane_voxels` survive or the support is not a plane.
std::optional<MapPlane> fit_map_plane(std::span<const VoxelHit> voxels, const Scan2MapParams& params);
/// Same scheme for lines (weights 1/tr(P C̄ P), `min_line_voxels`), which
/// also need λ2 > 9·λ1 of the scatter.
std::optional<MapLine> fit_map_line(std::span<const VoxelHit> voxels, const Scan2MapParams& params);

/// Huber-robust Gauss-Newton of the keypoints' point-to-plane and
/// point-to-line distances against the map, starting from `t_init`.
/// Keypoints without a valid map fit cost ρ(search_radius). The result is
/// compared with `t_init` under the final correspondences and falls back to
/// `t_init` when it is not cheaper.
RefinementResult refine_scan_to_map(const Pose& t_init, const PointCloud& cloud,
                                    const KeypointSet& keypoints, const VoxelMapState& map,
                                    const Scan2MapParams& params = {});

}  // namespace unitlo
