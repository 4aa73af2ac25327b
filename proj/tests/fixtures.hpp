#pragma once

#include <Eigen/Geometry>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "unitlo/point_cloud.hpp"
#include "unitlo/se3.hpp"

namespace unitlo::test {

inline constexpr double kPi = 3.14159265358979323846;

inline Eigen::Quaterniond axis_angle(double angle, const Eigen::Vector3d& axis) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized()));
}

inline Eigen::Vector3d random_vector(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {u(rng), u(rng), u(rng)};
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle = kPi, double max_translation = 5.0) {
  std::uniform_real_distribution<double> a(-max_angle, max_angle);
  const Eigen::Vector3d axis = random_vector(rng, 1.0) + Eigen::Vector3d(1e-3, 0.0, 0.0);
  return Pose(axis_angle(a(rng), axis), random_vector(rng, max_translation));
}

inline Pose translate(const Eigen::Vector3d& t) { return Pose::FromTranslation(t); }

// Jittered samples of the rectangle origin + a·u + b·v.
inline void add_patch(PointCloud& cloud, std::mt19937_64& rng, const Eigen::Vector3d& origin,
                      const Eigen::Vector3d& u, const Eigen::Vector3d& v, double la, double lb,
                      double spacing) {
  std::uniform_real_distribution<double> j(-0.25, 0.25);
  for (double a = 0.0; a <= la; a += spacing)
    for (double b = 0.0; b <= lb; b += spacing)
      cloud.points.push_back(origin + (a + j(rng) * spacing) * u + (b + j(rng) * spacing) * v);
}

// Ground plus two perpendicular walls and a box: every direction observable.
inline PointCloud structured_scene(std::uint64_t seed, double extent = 12.0, double spacing = 0.3) {
  std::mt19937_64 rng(seed);
  PointCloud c;
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
  add_patch(c, rng, {-extent, -extent, -1.5}, ex, ey, 2 * extent, 2 * extent, spacing * 1.5);
  add_patch(c, rng, {-extent, extent, -1.5}, ex, ez, 2 * extent, 4.0, spacing);
  add_patch(c, rng, {extent, -extent, -1.5}, ey, ez, 2 * extent, 4.0, spacing);
  add_patch(c, rng, {2.0, -3.0, -1.5}, ey, ez, 2.0, 2.5, spacing);
  add_patch(c, rng, {2.0, -3.0, -1.5}, ex, ez, 1.5, 2.5, spacing);
  add_patch(c, rng, {-4.0, 3.0, -1.5}, ex, ez, 2.5, 3.0, spacing);
  add_patch(c, rng, {-4.0, 3.0, -1.5}, ey, ez, 1.5, 3.0, spacing);
  return c;
}

inline PointCloud transformed(const PointCloud& c, const Pose& t) {
  PointCloud out = c;
  for (auto& p : out.points) p = t * p;
  return out;
}

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("unitlo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace unitlo::test
