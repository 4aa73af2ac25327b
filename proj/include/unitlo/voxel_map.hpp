#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "unitlo/covariance.hpp"
#include "unitlo/grid_key.hpp"
#include "unitlo/se3.hpp"

namespace unitlo {

/// Fused position and covariance of one map voxel, in the map frame.
///
/// With covariance fusion on, the voxel keeps the information-form sums
/// Λ = Σ Cᵢ⁻¹ and η = Σ Cᵢ⁻¹ xᵢ, so C̄ = Λ⁻¹ and x̄ = Λ⁻¹η. With it off
/// (average filter), x̄ is the running mean and C̄ = Σ Cᵢ / n².
struct MapVoxel {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d information = Eigen::Matrix3d::Identity();
  Eigen::Vector3d information_vector = Eigen::Vector3d::Zero();
  std::uint32_t hit_count = 0;
  std::int64_t last_update = 0;

  [[nodiscard]] PointCovariance eigen_covariance() const {
    return PointCovariance::from_matrix(covariance);
  }
};

using VoxelTable = std::unordered_map<GridKey, MapVoxel, GridKeyHash>;

struct VoxelMapState {
  double leaf = 0.8;
  VoxelTable voxels;
  std::int64_t frame_counter = 0;  // number of integrated scans
};

struct VoxelMapParams {
  double leaf = 0.8;
  bool covariance_fusion = true;
  std::int64_t eviction_window = 0;  // frames; 0 keeps every voxel forever
};

struct IntegrationSummary {
  std::size_t created = 0;
  std::size_t fused = 0;
  std::size_t evicted = 0;
};

/// Fuses observation (x, C) into a voxel. Exposed for tests.
void fuse_observation(MapVoxel& voxel, const Eigen::Vector3d& x, const Eigen::Matrix3d& c,
                      bool covariance_fusion);

/// Starts a voxel from its first observation.
MapVoxel make_voxel(const Eigen::Vector3d& x, const Eigen::Matrix3d& c, std::int64_t frame);

/// Global voxel map. Single writer; readers take snapshots, which the writer
/// never mutates (the table is copied on write while a snapshot is alive).
class VoxelMap {
 public:
  explicit VoxelMap(const VoxelMapParams& params = {});

  /// Transforms every point (and covariance) by `t` and fuses it into the
  /// voxel it falls in, in point order.
  IntegrationSummary integrate_scan(std::span<const Eigen::Vector3d> points,
                                    std::span<const PointCovariance> covariances, const Pose& t);

  [[nodiscard]] std::shared_ptr<const VoxelMapState> snapshot() const { return state_; }
  [[nodiscard]] std::size_t size() const { return state_->voxels.size(); }
  [[nodiscard]] bool empty() const { return state_->voxels.empty(); }
  [[nodiscard]] const VoxelMapParams& params() const { return params_; }

 private:
  VoxelMapParams params_;
  std::shared_ptr<VoxelMapState> state_;
};

struct VoxelHit {
  GridKey key;
  const MapVoxel* voxel = nullptr;
  double squared_distance = 0.0;
};

/// Voxels whose mean lies within `radius` of `point`, found by scanning the
/// ⌈radius/leaf⌉ key neighborhood; ordered by key.
std::vector<VoxelHit> query_neighbors(const VoxelMapState& map, const Eigen::Vector3d& point,
                                      double radius);
void query_neighbors(const VoxelMapState& map, const Eigen::Vector3d& point, double radius,
                     std::vector<VoxelHit>& out);

/// `kx,ky,kz,x,y,z,l1,l2,l3,qw,qx,qy,qz,hits`, rows in key order.
void write_map_csv(const VoxelMapState& map, const std::filesystem::path& path);

/// Little-endian binary dump: magic "UNLOMAP1", leaf (f64), frame counter
/// (i64), voxel count (u64), then per voxel key (3×i32), mean (3×f64),
/// covariance (9×f64, row-major), hit count (u32), last update (i64).
void write_map_binary(const VoxelMapState& map, const std::filesystem::path& path);
VoxelMapState read_map_binary(const std::filesystem::path& path);

}  // namespace unitlo
