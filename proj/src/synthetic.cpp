#include "unitlo/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <unordered_map>

#include "unitlo/cloud_io.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/grid_key.hpp"

namespace unitlo {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSensorHeight = 1.8;
constexpr double kMinSpacing = 0.26;  // > diagonal of a (0.1, 0.1, 0.2) m voxel
constexpr double kLoopA = 16.0;
constexpr double kLoopB = 12.0;

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double gaussian(Rng& rng, double sigma) {
  return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng) : 0.0;
}

// Elliptic loop x = A cos θ, y = B sin θ parameterized by arc length.
class Loop {
 public:
  Loop() {
    constexpr int kSteps = 20000;
    theta_.resize(kSteps + 1);
    arc_.resize(kSteps + 1);
    Eigen::Vector2d prev = at(0.0);
    for (int i = 0; i <= kSteps; ++i) {
      theta_[i] = 2.0 * kPi * i / kSteps;
      const Eigen::Vector2d p = at(theta_[i]);
      arc_[i] = i == 0 ? 0.0 : arc_[i - 1] + (p - prev).norm();
      prev = p;
    }
  }

  [[nodiscard]] double perimeter() const { return arc_.back(); }

  [[nodiscard]] double theta_at(double s) const {
    s = std::fmod(s, perimeter());
    const auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    const std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - arc_.begin()), arc_.size() - 1);
    const std::size_t lo = hi - 1;
    const double f = (s - arc_[lo]) / (arc_[hi] - arc_[lo]);
    return theta_[lo] + f * (theta_[hi] - theta_[lo]);
  }

  static Eigen::Vector2d at(double theta) { return {kLoopA * std::cos(theta), kLoopB * std::sin(theta)}; }
  static Eigen::Vector2d tangent(double theta) {
    return Eigen::Vector2d(-kLoopA * std::sin(theta), kLoopB * std::cos(theta)).normalized();
  }

  [[nodiscard]] double distance(const Eigen::Vector2d& p) const {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 720; ++i) best = std::min(best, (at(2.0 * kPi * i / 720) - p).norm());
    return best;
  }

 private:
  std::vector<double> theta_;
  std::vector<double> arc_;
};

std::vector<Pose> make_trajectory(int frames, double top_speed) {
  const Loop loop;
  std::vector<Pose> world;
  double s = 0.0;
  for (int k = 0; k < frames; ++k) {
    if (k > 0) s += top_speed * (1.0 - std::exp(-k / 20.0));
    const double theta = loop.theta_at(s);
    const Eigen::Vector2d p = Loop::at(theta);
    const Eigen::Vector2d d = Loop::tangent(theta);
    const double yaw = std::atan2(d.y(), d.x());
    const double roll = 0.5 * kPi / 180.0 * std::sin(2.0 * kPi * k / 37.0);
    const double pitch = 0.4 * kPi / 180.0 * std::sin(2.0 * kPi * k / 53.0);
    const double z = kSensorHeight + 0.05 * std::sin(2.0 * kPi * k / 41.0);
    const Eigen::Quaterniond q = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) *
                                 Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
                                 Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX());
    world.emplace_back(q, Eigen::Vector3d(p.x(), p.y(), z));
  }
  return world;
}

struct Box {
  Eigen::Vector2d center;
  Eigen::Vector2d half;
  double height = 0.0;

  [[nodiscard]] bool contains_xy(const Eigen::Vector2d& p, double margin = 0.0) const {
    return std::abs(p.x() - center.x()) <= half.x() + margin && std::abs(p.y() - center.y()) <= half.y() + margin;
  }
};

struct Pole {
  Eigen::Vector2d center;
  double height = 5.0;
};

struct World {
  std::vector<Box> boxes;
  std::vector<Pole> poles;
  Eigen::Vector2d ground_lo{-kLoopA - 10.0, -kLoopB - 10.0};
  Eigen::Vector2d ground_hi{kLoopA + 10.0, kLoopB + 10.0};
};

World make_world(Rng& rng, double keep_out_radius) {
  const Loop loop;
  World w;
  int attempts = 0;
  while (w.boxes.size() < 16 && attempts++ < 5000) {
    Box b;
    b.half = {uniform(rng, 1.0, 2.5), uniform(rng, 1.0, 2.5)};
    b.height = uniform(rng, 3.0, 8.0);
    b.center = {uniform(rng, w.ground_lo.x() + b.half.x(), w.ground_hi.x() - b.half.x()),
                uniform(rng, w.ground_lo.y() + b.half.y(), w.ground_hi.y() - b.half.y())};
    if (loop.distance(b.center) < b.half.norm() + 3.0) continue;
    if (b.center.norm() < keep_out_radius + b.half.norm()) continue;
    const bool overlaps = std::any_of(w.boxes.begin(), w.boxes.end(), [&](const Box& o) {
      return std::abs(o.center.x() - b.center.x()) < o.half.x() + b.half.x() + 1.0 &&
             std::abs(o.center.y() - b.center.y()) < o.half.y() + b.half.y() + 1.0;
    });
    if (!overlaps) w.boxes.push_back(b);
  }
  attempts = 0;
  while (w.poles.size() < 8 && attempts++ < 5000) {
    const double s = uniform(rng, 0.0, loop.perimeter());
    const double theta = loop.theta_at(s);
    const Eigen::Vector2d t = Loop::tangent(theta);
    const Eigen::Vector2d n(-t.y(), t.x());
    const Eigen::Vector2d c = Loop::at(theta) + n * (uniform(rng, 0.0, 1.0) < 0.5 ? -2.5 : 2.5);
    if (c.norm() < keep_out_radius) continue;
    if (std::any_of(w.boxes.begin(), w.boxes.end(), [&](const Box& b) { return b.contains_xy(c, 0.5); })) continue;
    w.poles.push_back({c, uniform(rng, 4.0, 6.0)});
  }
  return w;
}

// Rejects points closer than kMinSpacing to an accepted one.
class SpacedSet {
 public:
  bool try_add(const Eigen::Vector3d& p) {
    const GridKey k = grid_key(p, kMinSpacing);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == cells_.end()) continue;
          for (const Eigen::Vector3d& q : it->second)
            if ((q - p).squaredNorm() < kMinSpacing * kMinSpacing) return false;
        }
    cells_[k].push_back(p);
    points_.push_back(p);
    return true;
  }

  [[nodiscard]] const std::vector<Eigen::Vector3d>& points() const { return points_; }

 private:
  std::unordered_map<GridKey, std::vector<Eigen::Vector3d>, GridKeyHash> cells_;
  std::vector<Eigen::Vector3d> points_;
};

// Jittered grid over the rectangle origin + a·u + b·v, (a, b) ∈ [0, la] × [0, lb].
void sample_face(Rng& rng, SpacedSet& set, const Eigen::Vector3d& origin, const Eigen::Vector3d& u,
                 const Eigen::Vector3d& v, double la, double lb, double spacing) {
  const int na = std::max(1, static_cast<int>(la / spacing));
  const int nb = std::max(1, static_cast<int>(lb / spacing));
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j) {
      const double a = std::clamp((i + 0.5 + uniform(rng, -0.2, 0.2)) * la / na, 0.0, la);
      const double b = std::clamp((j + 0.5 + uniform(rng, -0.2, 0.2)) * lb / nb, 0.0, lb);
      set.try_add(origin + a * u + b * v);
    }
}

void sample_box(Rng& rng, SpacedSet& set, const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                double spacing, bool bottom_z_is_ground) {
  const Eigen::Vector3d ex = Eigen::Vector3d::UnitX(), ey = Eigen::Vector3d::UnitY(), ez = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d size = hi - lo;
  sample_face(rng, set, lo, ex, ez, size.x(), size.z(), spacing);
  sample_face(rng, set, {lo.x(), hi.y(), lo.z()}, ex, ez, size.x(), size.z(), spacing);
  sample_face(rng, set, lo, ey, ez, size.y(), size.z(), spacing);
  sample_face(rng, set, {hi.x(), lo.y(), lo.z()}, ey, ez, size.y(), size.z(), spacing);
  sample_face(rng, set, {lo.x(), lo.y(), hi.z()}, ex, ey, size.x(), size.y(), spacing);
  if (!bottom_z_is_ground) sample_face(rng, set, lo, ex, ey, size.x(), size.y(), spacing);
}

std::vector<Eigen::Vector3d> sample_static(Rng& rng, const World& w, double ground_spacing,
                                           double wall_spacing) {
  SpacedSet set;
  for (const Box& b : w.boxes)
    sample_box(rng, set, {b.center.x() - b.half.x(), b.center.y() - b.half.y(), 0.0},
               {b.center.x() + b.half.x(), b.center.y() + b.half.y(), b.height}, wall_spacing, true);
  for (const Pole& p : w.poles) {
    for (int ring = 0; ring * 0.35 < p.height; ++ring) {
      for (int j = 0; j < 3; ++j) {
        const double a = 2.0 * kPi * j / 3.0 + (ring % 2) * kPi / 3.0;
        set.try_add({p.center.x() + 0.2 * std::cos(a), p.center.y() + 0.2 * std::sin(a), 0.3 + ring * 0.35});
      }
    }
  }
  const Eigen::Vector2d extent = w.ground_hi - w.ground_lo;
  const int nx = static_cast<int>(extent.x() / ground_spacing);
  const int ny = static_cast<int>(extent.y() / ground_spacing);
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j) {
      const Eigen::Vector2d p = w.ground_lo + Eigen::Vector2d((i + 0.5 + uniform(rng, -0.2, 0.2)) * ground_spacing,
                                                              (j + 0.5 + uniform(rng, -0.2, 0.2)) * ground_spacing);
      if (std::any_of(w.boxes.begin(), w.boxes.end(), [&](const Box& b) { return b.contains_xy(p, 0.1); })) continue;
      set.try_add({p.x(), p.y(), 0.0});
    }
  return set.points();
}

class NoiseModel {
 public:
  explicit NoiseModel(const SynthParams& p) {
    if (p.noise_xy >= 0.0 && p.noise_z >= 0.0) sigma_ = {p.noise_xy, p.noise_xy, p.noise_z};
    else sigma_.setConstant(p.noise);
  }
  [[nodiscard]] Eigen::Vector3d sample(Rng& rng) const {
    return {gaussian(rng, sigma_.x()), gaussian(rng, sigma_.y()), gaussian(rng, sigma_.z())};
  }

 private:
  Eigen::Vector3d sigma_;
};

void add_clutter_and_outliers(Rng& rng, const SynthParams& params, const std::vector<Eigen::Vector3d>& bushes,
                              const Pose& sensor, std::size_t base_count, SynthFrame& frame) {
  const Pose to_sensor = sensor.inverse();
  const auto n_clutter = static_cast<std::size_t>(std::round(params.clutter_fraction * base_count));
  for (std::size_t i = 0; i < n_clutter && !bushes.empty(); ++i) {
    const Eigen::Vector3d& c = bushes[i % bushes.size()];
    Eigen::Vector3d d;
    do d = {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
    while (d.squaredNorm() > 1.0);
    frame.cloud.points.push_back(to_sensor * (c + 0.6 * d));
    frame.labels.push_back(PointLabel::kClutter);
  }
  const auto n_out = static_cast<std::size_t>(std::round(params.outlier_fraction * base_count));
  for (std::size_t i = 0; i < n_out; ++i) {
    frame.cloud.points.emplace_back(uniform(rng, -25.0, 25.0), uniform(rng, -25.0, 25.0), uniform(rng, -1.8, 6.0));
    frame.labels.push_back(PointLabel::kOutlier);
  }
}

std::vector<Eigen::Vector3d> make_bushes(Rng& rng, const World& w, double clutter_fraction) {
  std::vector<Eigen::Vector3d> bushes;
  if (clutter_fraction <= 0.0) return bushes;
  const Loop loop;
  while (bushes.size() < 12) {
    const double theta = loop.theta_at(uniform(rng, 0.0, loop.perimeter()));
    const Eigen::Vector2d t = Loop::tangent(theta);
    const Eigen::Vector2d c = Loop::at(theta) + Eigen::Vector2d(-t.y(), t.x()) * (uniform(rng, 0.0, 1.0) < 0.5 ? -3.5 : 3.5);
    if (std::any_of(w.boxes.begin(), w.boxes.end(), [&](const Box& b) { return b.contains_xy(c, 0.8); })) continue;
    bushes.emplace_back(c.x(), c.y(), 0.8);
  }
  return bushes;
}

SynthSequence finish(std::vector<SynthFrame> frames, const std::vector<Pose>& world_poses) {
  SynthSequence seq;
  seq.frames = std::move(frames);
  const Pose origin_inv = world_poses.front().inverse();
  for (const Pose& p : world_poses) seq.ground_truth.poses.push_back(origin_inv * p);
  for (std::size_t k = 0; k < seq.frames.size(); ++k) seq.frames[k].cloud.frame = static_cast<std::int64_t>(k);
  return seq;
}

SynthSequence generate_point_scene(const SynthParams& params, bool two_body) {
  Rng rng(params.seed);
  const World world = make_world(rng, two_body ? 10.0 : 0.0);
  const auto draw_statics = [&](Rng& r) {
    return two_body ? sample_static(r, world, 1.0, 0.6) : sample_static(r, world, 0.8, 0.45);
  };
  std::vector<Eigen::Vector3d> statics = draw_statics(rng);

  std::vector<Eigen::Vector3d> body;
  constexpr double kBodyRadius = 6.0;
  if (two_body) {
    // Sampled no denser than 0.3 m, so a large share needs a longer vehicle.
    const double f = std::clamp(params.moving_fraction, 0.0, 0.9);
    const double wanted = f / (1.0 - f) * static_cast<double>(statics.size());
    const double w = 3.0, h = 3.0;
    double len = 10.0;
    const auto area = [&](double l) { return 2 * l * h + 2 * w * h + 2 * l * w; };
    double spacing = std::max(0.3, std::sqrt(area(len) / std::max(wanted, 1.0)));
    for (int attempt = 0; attempt < 20; ++attempt) {
      SpacedSet set;
      sample_box(rng, set, {-len / 2, -w / 2, 0.0}, {len / 2, w / 2, h}, spacing, false);
      body = set.points();
      const double ratio = static_cast<double>(body.size()) / std::max(wanted, 1.0);
      if (ratio >= 0.97) break;
      if (spacing > 0.3) {
        spacing = std::max(0.3, spacing * std::sqrt(ratio));
      } else {
        len = std::min(40.0, len / ratio);
      }
    }
    if (static_cast<double>(body.size()) > wanted) body.resize(static_cast<std::size_t>(wanted));
  }

  const std::vector<Pose> poses = make_trajectory(params.frames, params.top_speed);
  const std::vector<Eigen::Vector3d> bushes = make_bushes(rng, world, params.clutter_fraction);
  const NoiseModel noise(params);
  std::vector<SynthFrame> frames(static_cast<std::size_t>(params.frames));
  for (int k = 0; k < params.frames; ++k) {
    SynthFrame& fr = frames[static_cast<std::size_t>(k)];
    const Pose to_sensor = poses[static_cast<std::size_t>(k)].inverse();
    if (params.resample && k > 0) {
      Rng surface_rng(params.seed * 1000003ULL + static_cast<std::uint64_t>(k));
      statics = draw_statics(surface_rng);
    }
    fr.cloud.points.reserve(statics.size() + body.size());
    for (const Eigen::Vector3d& p : statics) {
      fr.cloud.points.push_back(to_sensor * p + noise.sample(rng));
      fr.labels.push_back(PointLabel::kStatic);
    }
    if (two_body) {
      const double phi = k * params.moving_speed / kBodyRadius;
      const Pose b(Eigen::Quaterniond(Eigen::AngleAxisd(phi + kPi / 2, Eigen::Vector3d::UnitZ())),
                   Eigen::Vector3d(kBodyRadius * std::cos(phi), kBodyRadius * std::sin(phi), 0.0));
      const Pose body_to_sensor = to_sensor * b;
      for (const Eigen::Vector3d& p : body) {
        fr.cloud.points.push_back(body_to_sensor * p + noise.sample(rng));
        fr.labels.push_back(PointLabel::kMoving);
      }
    }
    add_clutter_and_outliers(rng, params, bushes, poses[static_cast<std::size_t>(k)],
                             statics.size() + body.size(), fr);
  }
  return finish(std::move(frames), poses);
}

// Ray parameter of the first hit, or +inf.
double cast_ray(const World& w, const Eigen::Vector3d& o, const Eigen::Vector3d& d, double yard, double wall_h) {
  double best = std::numeric_limits<double>::infinity();
  if (d.z() < 0.0) best = -o.z() / d.z();
  const auto slab = [&](const Eigen::Vector3d& lo, const Eigen::Vector3d& hi) {
    double t0 = 0.0, t1 = best;
    for (int a = 0; a < 3; ++a) {
      if (std::abs(d[a]) < 1e-12) {
        if (o[a] < lo[a] || o[a] > hi[a]) return;
        continue;
      }
      double ta = (lo[a] - o[a]) / d[a], tb = (hi[a] - o[a]) / d[a];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return;
    }
    if (t0 > 1e-6) best = t0;
  };
  for (const Box& b : w.boxes)
    slab({b.center.x() - b.half.x(), b.center.y() - b.half.y(), 0.0},
         {b.center.x() + b.half.x(), b.center.y() + b.half.y(), b.height});
  for (const Pole& p : w.poles)
    slab({p.center.x() - 0.2, p.center.y() - 0.2, 0.0}, {p.center.x() + 0.2, p.center.y() + 0.2, p.height});
  // Courtyard walls and roof seen from inside.
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-12) continue;
    const double bound = a == 2 ? (d[a] > 0 ? wall_h : -1.0) : (d[a] > 0 ? yard : -yard);
    const double t = (bound - o[a]) / d[a];
    if (t > 0.0) best = std::min(best, t);
  }
  return best;
}

SynthSequence generate_dense(const SynthParams& params) {
  Rng rng(params.seed);
  const World world = make_world(rng, 0.0);
  const std::vector<Pose> poses = make_trajectory(params.frames, params.top_speed);
  const NoiseModel noise(params);
  constexpr int kBeams = 64;
  constexpr int kAzimuths = 1875;
  std::vector<Eigen::Vector3d> dirs;
  dirs.reserve(kBeams * kAzimuths);
  for (int b = 0; b < kBeams; ++b) {
    const double el = (-24.8 + 26.8 * b / (kBeams - 1)) * kPi / 180.0;
    for (int a = 0; a < kAzimuths; ++a) {
      const double az = 2.0 * kPi * a / kAzimuths;
      dirs.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
  }
  std::vector<SynthFrame> frames(static_cast<std::size_t>(params.frames));
  for (int k = 0; k < params.frames; ++k) {
    const Pose& s = poses[static_cast<std::size_t>(k)];
    const Eigen::Matrix3d r = s.rotation_matrix();
    SynthFrame& fr = frames[static_cast<std::size_t>(k)];
    fr.cloud.points.reserve(dirs.size());
    for (const Eigen::Vector3d& d : dirs) {
      const double t = cast_ray(world, s.translation(), r * d, 40.0, 20.0);
      if (!std::isfinite(t)) continue;
      fr.cloud.points.push_back(t * d + noise.sample(rng));
      fr.labels.push_back(PointLabel::kStatic);
    }
  }
  return finish(std::move(frames), poses);
}

}  // namespace

SynthSequence generate_sequence(const SynthParams& params) {
  if (params.frames < 1) throw ConfigError("synth: frames must be >= 1");
  if (params.noise < 0.0) throw ConfigError("synth: noise must be >= 0");
  if (params.scene == "manhattan") return generate_point_scene(params, false);
  if (params.scene == "two-body") return generate_point_scene(params, true);
  if (params.scene == "dense") return generate_dense(params);
  throw ConfigError("synth: unknown scene '" + params.scene + "' (manhattan, two-body, dense)");
}

void write_sequence(const SynthSequence& seq, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "velodyne", ec);
  std::filesystem::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create " + dir.string());
  char name[32];
  for (std::size_t k = 0; k < seq.frames.size(); ++k) {
    std::snprintf(name, sizeof(name), "%06zu", k);
    write_scan_kitti(seq.frames[k].cloud, dir / "velodyne" / (std::string(name) + ".bin"));
    std::ofstream out(dir / "labels" / (std::string(name) + ".label"), std::ios::binary);
    if (!out) throw IoError("cannot write labels under " + dir.string());
    out.write(reinterpret_cast<const char*>(seq.frames[k].labels.data()),
              static_cast<std::streamsize>(seq.frames[k].labels.size()));
  }
  write_trajectory_kitti(seq.ground_truth, dir / "poses.txt");
}

std::vector<PointLabel> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<PointLabel> out;
  out.reserve(raw.size());
  for (const char c : raw) {
    const auto v = static_cast<std::uint8_t>(c);
    if (v > 3) throw FormatError(path.string() + ": invalid label " + std::to_string(v));
    out.push_back(static_cast<PointLabel>(v));
  }
  return out;
}

}  // namespace unitlo
