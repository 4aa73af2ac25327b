#include "unitlo/unit_partition.hpp"

#include <algorithm>
#include <cmath>

#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

std::int32_t floor_div2(std::int32_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

void compute_moments(const PointCloud& cloud, GeometricUnit& unit) {
  const std::size_t n = unit.point_indices.size();
  unit.point_count = n;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto i : unit.point_indices) mean += cloud.points[i];
  mean /= static_cast<double>(n);
  Eigen::Matrix3d m2 = Eigen::Matrix3d::Zero();
  for (const auto i : unit.point_indices) {
    const Eigen::Vector3d d = cloud.points[i] - mean;
    m2.noalias() += d * d.transpose();
  }
  unit.centroid = mean;
  unit.scatter = n > 1 ? Eigen::Matrix3d(m2 / static_cast<double>(n - 1)) : Eigen::Matrix3d::Zero();
}

}  // namespace

std::vector<UnitKey> point_unit_keys(const PointCloud& cloud, const Eigen::Vector3d& unit_size) {
  std::vector<UnitKey> keys(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) keys[i] = grid_key(cloud.points[i], unit_size);
  return keys;
}

UnitGrid partition(const PointCloud& cloud, const Eigen::Vector3d& unit_size) {
  if (!(unit_size.array() > 0.0).all() || !unit_size.allFinite())
    throw InvalidSizeError("unit size must be positive per axis");

  UnitGrid grid;
  grid.unit_size = unit_size;
  grid.level = 1;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const UnitKey key = grid_key(cloud.points[i], unit_size);
    auto [it, inserted] = grid.units.try_emplace(key);
    if (inserted) {
      it->second.key = key;
      it->second.offset.v = cell_center(key, unit_size);
    }
    it->second.point_indices.push_back(static_cast<std::uint32_t>(i));
  }
  for (auto& [key, unit] : grid.units) compute_moments(cloud, unit);
  return grid;
}

UnitGrid coarsen(const UnitGrid& grid) {
  if (grid.level >= kMaxUnitLevel)
    throw MaxLevelError("cannot coarsen past level " + std::to_string(kMaxUnitLevel));

  UnitGrid out;
  out.unit_size = grid.unit_size * 2.0;
  out.level = grid.level + 1;
  // Children arrive in key order, so the pooling order per parent is fixed.
  for (const auto& [key, child] : grid.units) {
    const UnitKey pkey{floor_div2(key.x), floor_div2(key.y), floor_div2(key.z)};
    auto [it, inserted] = out.units.try_emplace(pkey);
    GeometricUnit& parent = it->second;
    if (inserted) {
      parent.key = pkey;
      parent.offset.v = cell_center(pkey, out.unit_size);
      parent.point_indices = child.point_indices;
      parent.centroid = child.centroid;
      parent.scatter = child.scatter;
      parent.point_count = child.point_count;
      continue;
    }
    // Pooled second moments (parallel-axis rule) on sums of squared deviations.
    const double na = static_cast<double>(parent.point_count);
    const double nb = static_cast<double>(child.point_count);
    const double n = na + nb;
    const Eigen::Matrix3d m2a = parent.scatter * (na - 1.0);
    const Eigen::Matrix3d m2b = child.scatter * (nb - 1.0);
    const Eigen::Vector3d delta = child.centroid - parent.centroid;
    const Eigen::Matrix3d m2 = m2a + m2b + (na * nb / n) * delta * delta.transpose();
    parent.centroid = (na * parent.centroid + nb * child.centroid) / n;
    parent.scatter = m2 / (n - 1.0);
    parent.point_count += child.point_count;
    parent.point_indices.insert(parent.point_indices.end(), child.point_indices.begin(),
                                child.point_indices.end());
  }
  for (auto& [key, unit] : out.units) std::sort(unit.point_indices.begin(), unit.point_indices.end());
  return out;
}

}  // namespace unitlo
