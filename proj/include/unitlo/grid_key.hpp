#pragma once

#include <Eigen/Core>

#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>

namespace unitlo {

/// Integer cell index of an origin-anchored axis-aligned grid. Ordered
/// lexicographically on (x, y, z).
struct GridKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;

  auto operator<=>(const GridKey&) const = default;
};

struct GridKeyHash {
  std::size_t operator()(const GridKey& k) const noexcept {
    // Teschner et al. spatial hash primes.
    const auto ux = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.x));
    const auto uy = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.y));
    const auto uz = static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.z));
    return static_cast<std::size_t>((ux * 73856093ULL) ^ (uy * 19349663ULL) ^ (uz * 83492791ULL));
  }
};

/// floor(p / cell) per axis.
[[nodiscard]] inline GridKey grid_key(const Eigen::Vector3d& p, const Eigen::Vector3d& cell) {
  return {static_cast<std::int32_t>(std::floor(p.x() / cell.x())),
          static_cast<std::int32_t>(std::floor(p.y() / cell.y())),
          static_cast<std::int32_t>(std::floor(p.z() / cell.z()))};
}

[[nodiscard]] inline GridKey grid_key(const Eigen::Vector3d& p, double cell) {
  return grid_key(p, Eigen::Vector3d::Constant(cell));
}

[[nodiscard]] inline Eigen::Vector3d cell_center(const GridKey& k, const Eigen::Vector3d& cell) {
  return {(k.x + 0.5) * cell.x(), (k.y + 0.5) * cell.y(), (k.z + 0.5) * cell.z()};
}

[[nodiscard]] inline Eigen::Vector3d cell_min_corner(const GridKey& k, const Eigen::Vector3d& cell) {
  return {k.x * cell.x(), k.y * cell.y(), k.z * cell.z()};
}

}  // namespace unitlo
