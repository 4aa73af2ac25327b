#include "unitlo/voxel_map.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

Eigen::Matrix3d checked_inverse(const Eigen::Matrix3d& c) {
  Eigen::LLT<Eigen::Matrix3d> llt(c);
  if (llt.info() != Eigen::Success) throw SingularCovarianceError("voxel map: covariance not positive definite");
  return llt.solve(Eigen::Matrix3d::Identity());
}

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("map file truncated");
  return v;
}

std::vector<GridKey> sorted_keys(const VoxelMapState& map) {
  std::vector<GridKey> keys;
  keys.reserve(map.voxels.size());
  for (const auto& [k, v] : map.voxels) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  return keys;
}

}  // namespace

MapVoxel make_voxel(const Eigen::Vector3d& x, const Eigen::Matrix3d& c, std::int64_t frame) {
  MapVoxel v;
  v.mean = x;
  v.covariance = c;
  v.information = checked_inverse(c);
  v.information_vector = v.information * x;
  v.hit_count = 1;
  v.last_update = frame;
  return v;
}

void fuse_observation(MapVoxel& voxel, const Eigen::Vector3d& x, const Eigen::Matrix3d& c,
                      bool covariance_fusion) {
  const double n = voxel.hit_count + 1.0;
  if (covariance_fusion) {
    const Eigen::Matrix3d info = checked_inverse(c);
    voxel.information += info;
    voxel.information_vector += info * x;
    voxel.covariance = checked_inverse(voxel.information);
    voxel.mean = voxel.covariance * voxel.information_vector;
  } else {
    const double m = voxel.hit_count;
    voxel.mean += (x - voxel.mean) / n;
    voxel.covariance = (m * m * voxel.covariance + c) / (n * n);
    voxel.information = checked_inverse(voxel.covariance);
    voxel.information_vector = voxel.information * voxel.mean;
  }
  voxel.covariance = 0.5 * (voxel.covariance + voxel.covariance.transpose());
  voxel.hit_count += 1;
}

VoxelMap::VoxelMap(const VoxelMapParams& params)
    : params_(params), state_(std::make_shared<VoxelMapState>()) {
  if (!(params.leaf > 0.0) || !std::isfinite(params.leaf))
    throw InvalidLeafError("voxel map leaf must be positive");
  if (params.eviction_window < 0) throw ConfigError("voxel map eviction window must be >= 0");
  state_->leaf = params.leaf;
}

IntegrationSummary VoxelMap::integrate_scan(std::span<const Eigen::Vector3d> points,
                                            std::span<const PointCovariance> covariances,
                                            const Pose& t) {
  if (points.size() != covariances.size())
    throw std::invalid_argument("integrate_scan: covariances not aligned with points");
  // Copy on write: a live snapshot must never observe this update.
  if (state_.use_count() > 1) state_ = std::make_shared<VoxelMapState>(*state_);
  VoxelMapState& s = *state_;
  const std::int64_t frame = s.frame_counter;
  const Eigen::Matrix3d r = t.rotation_matrix();

  IntegrationSummary summary;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::Vector3d x = t * points[i];
    const Eigen::Matrix3d c = r * covariances[i].matrix() * r.transpose();
    const GridKey key = grid_key(x, s.leaf);
    auto it = s.voxels.find(key);
    if (it == s.voxels.end()) {
      s.voxels.emplace(key, make_voxel(x, c, frame));
      ++summary.created;
    } else {
      fuse_observation(it->second, x, c, params_.covariance_fusion);
      it->second.last_update = frame;
      ++summary.fused;
    }
  }
  if (params_.eviction_window > 0) {
    summary.evicted = std::erase_if(s.voxels, [&](const auto& kv) {
      return frame - kv.second.last_update >= params_.eviction_window;
    });
  }
  ++s.frame_counter;
  return summary;
}

void query_neighbors(const VoxelMapState& map, const Eigen::Vector3d& point, double radius,
                     std::vector<VoxelHit>& out) {
  if (!(radius > 0.0)) throw std::invalid_argument("query_neighbors: radius must be positive");
  out.clear();
  if (map.voxels.empty()) return;
  const int reach = static_cast<int>(std::ceil(radius / map.leaf));
  const GridKey c = grid_key(point, map.leaf);
  const double r2 = radius * radius;
  for (int dx = -reach; dx <= reach; ++dx)
    for (int dy = -reach; dy <= reach; ++dy)
      for (int dz = -reach; dz <= reach; ++dz) {
        const GridKey k{c.x + dx, c.y + dy, c.z + dz};
        const auto it = map.voxels.find(k);
        if (it == map.voxels.end()) continue;
        const double d2 = (it->second.mean - point).squaredNorm();
        if (d2 <= r2) out.push_back({k, &it->second, d2});
      }
}

std::vector<VoxelHit> query_neighbors(const VoxelMapState& map, const Eigen::Vector3d& point,
                                      double radius) {
  std::vector<VoxelHit> out;
  query_neighbors(map, point, radius, out);
  return out;
}

void write_map_csv(const VoxelMapState& map, const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write " + path.string());
  std::fprintf(f, "kx,ky,kz,x,y,z,l1,l2,l3,qw,qx,qy,qz,hits\n");
  for (const GridKey& k : sorted_keys(map)) {
    const MapVoxel& v = map.voxels.at(k);
    const PointCovariance c = v.eigen_covariance();
    std::fprintf(f, "%d,%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%u\n", k.x, k.y, k.z,
                 v.mean.x(), v.mean.y(), v.mean.z(), c.eigenvalues[0], c.eigenvalues[1],
                 c.eigenvalues[2], c.basis.w(), c.basis.x(), c.basis.y(), c.basis.z(), v.hit_count);
  }
  if (std::fclose(f) != 0) throw IoError("cannot write " + path.string());
}

void write_map_binary(const VoxelMapState& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write("UNLOMAP1", 8);
  put(out, map.leaf);
  put(out, map.frame_counter);
  put(out, static_cast<std::uint64_t>(map.voxels.size()));
  for (const GridKey& k : sorted_keys(map)) {
    const MapVoxel& v = map.voxels.at(k);
    put(out, k.x);
    put(out, k.y);
    put(out, k.z);
    for (int i = 0; i < 3; ++i) put(out, v.mean[i]);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) put(out, v.covariance(i, j));
    put(out, v.hit_count);
    put(out, v.last_update);
  }
  if (!out) throw IoError("cannot write " + path.string());
}

VoxelMapState read_map_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "UNLOMAP1") throw FormatError(path.string() + ": not a map file");
  VoxelMapState s;
  s.leaf = get<double>(in);
  s.frame_counter = get<std::int64_t>(in);
  const auto n = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    GridKey k;
    k.x = get<std::int32_t>(in);
    k.y = get<std::int32_t>(in);
    k.z = get<std::int32_t>(in);
    MapVoxel v;
    for (int a = 0; a < 3; ++a) v.mean[a] = get<double>(in);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) v.covariance(a, b) = get<double>(in);
    v.hit_count = get<std::uint32_t>(in);
    v.last_update = get<std::int64_t>(in);
    v.information = checked_inverse(v.covariance);
    v.information_vector = v.information * v.mean;
    s.voxels.emplace(k, v);
  }
  return s;
}

}  // namespace unitlo
