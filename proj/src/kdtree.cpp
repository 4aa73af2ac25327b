#include "unitlo/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace unitlo {
namespace {

bool closer(double d2, std::uint32_t idx, const KdTree::Neighbor& than) {
  return d2 < than.squared_distance || (d2 == than.squared_distance && idx < than.index);
}

bool heap_less(const KdTree::Neighbor& a, const KdTree::Neighbor& b) {
  return a.squared_distance < b.squared_distance ||
         (a.squared_distance == b.squared_distance && a.index < b.index);
}

}  // namespace

KdTree::KdTree(std::span<const Eigen::Vector3d> points, int leaf_size) {
  const auto n = static_cast<std::uint32_t>(points.size());
  index_.resize(n);
  std::iota(index_.begin(), index_.end(), 0U);
  points_.assign(points.begin(), points.end());
  if (n > 0) {
    nodes_.reserve(2 * (n / std::max(leaf_size, 1)) + 2);
    build(0, n, std::max(leaf_size, 1));
  }
  std::vector<Eigen::Vector3d> ordered(n);
  slot_of_.resize(n);
  for (std::uint32_t s = 0; s < n; ++s) {
    ordered[s] = points[index_[s]];
    slot_of_[index_[s]] = s;
  }
  points_ = std::move(ordered);
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end, int leaf_size) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, -1, 0.0});
  if (end - begin <= static_cast<std::uint32_t>(leaf_size)) return id;

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[index_[i]]);
    hi = hi.cwiseMax(points_[index_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all points coincide

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });
  const double split = points_[index_[mid]][axis];
  const std::int32_t left = build(begin, mid, leaf_size);
  const std::int32_t right = build(mid, end, leaf_size);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

std::optional<KdTree::Neighbor> KdTree::nearest(const Eigen::Vector3d& query,
                                                double max_distance) const {
  if (points_.empty()) return std::nullopt;
  Neighbor best{std::numeric_limits<std::uint32_t>::max(),
                std::isinf(max_distance) ? std::numeric_limits<double>::infinity()
                                         : max_distance * max_distance};
  // Inclusive gate: a point exactly at max_distance must still win.
  best.squared_distance = std::nextafter(best.squared_distance,
                                         std::numeric_limits<double>::infinity());
  search_nearest(0, query, best);
  if (best.index == std::numeric_limits<std::uint32_t>::max()) return std::nullopt;
  return best;
}

void KdTree::search_nearest(std::int32_t node_id, const Eigen::Vector3d& q, Neighbor& best) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t s = node.begin; s < node.end; ++s) {
      const double d2 = (points_[s] - q).squaredNorm();
      if (closer(d2, index_[s], best)) best = {index_[s], d2};
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  search_nearest(near, q, best);
  if (diff * diff <= best.squared_distance) search_nearest(far, q, best);
}

std::vector<KdTree::Neighbor> KdTree::knn(const Eigen::Vector3d& query, std::size_t k) const {
  std::vector<Neighbor> out;
  knn(query, k, out);
  return out;
}

void KdTree::knn(const Eigen::Vector3d& query, std::size_t k, std::vector<Neighbor>& out) const {
  out.clear();
  if (points_.empty() || k == 0) return;
  out.reserve(k);
  search_knn(0, query, k, out);
  std::sort_heap(out.begin(), out.end(), heap_less);
}

void KdTree::search_knn(std::int32_t node_id, const Eigen::Vector3d& q, std::size_t k,
                        std::vector<Neighbor>& heap) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t s = node.begin; s < node.end; ++s) {
      const double d2 = (points_[s] - q).squaredNorm();
      if (heap.size() < k) {
        heap.push_back({index_[s], d2});
        std::push_heap(heap.begin(), heap.end(), heap_less);
      } else if (closer(d2, index_[s], heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), heap_less);
        heap.back() = {index_[s], d2};
        std::push_heap(heap.begin(), heap.end(), heap_less);
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0 ? node.left : node.right;
  const std::int32_t far = diff < 0 ? node.right : node.left;
  search_knn(near, q, k, heap);
  if (heap.size() < k || diff * diff <= heap.front().squared_distance)
    search_knn(far, q, k, heap);
}

}  // namespace unitlo
