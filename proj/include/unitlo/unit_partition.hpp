#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <vector>

#include "unitlo/grid_key.hpp"
#include "unitlo/point_cloud.hpp"
#include "unitlo/se3.hpp"

namespace unitlo {

using UnitKey = GridKey;

/// A rectangular block of a scan treated as an independent rigid-body
/// candidate. `scatter` is the empirical covariance of the member points
/// (denominator n - 1; zero for a single point).
struct GeometricUnit {
  UnitKey key;
  UnitFrameOffset offset;  // cell center in the LiDAR frame
  std::vector<std::uint32_t> point_indices;
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  std::size_t point_count = 0;
};

struct UnitGrid {
  std::map<UnitKey, GeometricUnit> units;
  Eigen::Vector3d unit_size = Eigen::Vector3d::Ones();
  int level = 1;

  [[nodiscard]] std::size_t size() const { return units.size(); }
};

inline constexpr int kMaxUnitLevel = 3;

/// Assigns every point to its origin-anchored cell of size `unit_size`.
UnitGrid partition(const PointCloud& cloud, const Eigen::Vector3d& unit_size);

/// Merges 2x2x2 blocks of child cells into parent cells, pooling counts,
/// centroids, and scatters exactly.
UnitGrid coarsen(const UnitGrid& grid);

/// Unit key of each point in `cloud` under `grid` (same cell rule as
/// `partition`).
std::vector<UnitKey> point_unit_keys(const PointCloud& cloud, const Eigen::Vector3d& unit_size);

}  // namespace unitlo
