#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace unitlo {

/// Static 3D k-d tree over a point set. Queries are exact; ties in distance
/// are broken by the lower point index so results never depend on build
/// order.
class KdTree {
 public:
  struct Neighbor {
    std::uint32_t index = 0;
    double squared_distance = 0.0;
  };

  KdTree() = default;
  explicit KdTree(std::span<const Eigen::Vector3d> points, int leaf_size = 12);

  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] bool empty() const { return points_.empty(); }
  [[nodiscard]] const Eigen::Vector3d& point(std::uint32_t index) const {
    return points_[slot_of_[index]];
  }

  /// Nearest point within `max_distance` (inclusive), if any.
  [[nodiscard]] std::optional<Neighbor> nearest(
      const Eigen::Vector3d& query,
      double max_distance = std::numeric_limits<double>::infinity()) const;

  /// The k nearest points sorted by (distance, index). Returns fewer than k
  /// only when the tree holds fewer points.
  [[nodiscard]] std::vector<Neighbor> knn(const Eigen::Vector3d& query, std::size_t k) const;

  /// Same as `knn` but reuses the caller's buffer.
  void knn(const Eigen::Vector3d& query, std::size_t k, std::vector<Neighbor>& out) const;

 private:
  struct Node {
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t axis = -1;  // -1 marks a leaf
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end, int leaf_size);
  void search_nearest(std::int32_t node, const Eigen::Vector3d& q, Neighbor& best) const;
  void search_knn(std::int32_t node, const Eigen::Vector3d& q, std::size_t k,
                  std::vector<Neighbor>& heap) const;

  std::vector<Eigen::Vector3d> points_;  // stored in tree order
  std::vector<std::uint32_t> index_;     // tree slot -> original index
  std::vector<std::uint32_t> slot_of_;   // original index -> tree slot
  std::vector<Node> nodes_;
};

}  // namespace unitlo
