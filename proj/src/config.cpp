#include "unitlo/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "json.hpp"
#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

using nlohmann::json;

// Walks the config layout once for both reading and writing.
template <typename V>
void visit_config(V& v, PipelineConfig& c) {
  v.section("input", [&] {
    v("leaf", c.input.leaf);
    v("max_range", c.input.max_range);
  });
  v.section("units", [&] { v("size", c.unit_size); });
  v.section("covariance", [&] {
    v("neighbors", c.covariance.neighbors);
    v("lambda_min", c.covariance.lambda_min);
    v("lambda_max", c.covariance.lambda_max);
    v("isolation_radius", c.covariance.isolation_radius);
    v("scalar_confidence", c.scalar_confidence);
  });
  v.section("registration", [&] {
    v("min_points", c.registration.min_points);
    v("min_inliers", c.registration.min_inliers);
    v("gate", c.registration.gate);
    v("max_iterations", c.registration.max_iterations);
    v("translation_tol", c.registration.translation_tol);
    v("rotation_tol", c.registration.rotation_tol);
  });
  v.section("voting", [&] {
    v("temperature", c.voting.temperature);
    v("residual_weight", c.voting.scoring.residual_weight);
    v("condition_weight", c.voting.scoring.condition_weight);
    v("inlier_weight", c.voting.scoring.inlier_weight);
    v("refine_steps", c.voting.refine_steps);
    v("delta", c.voting.delta);
    v("gate", c.voting.gate);
    v("sample_points", c.voting.sample_points);
    v("equal_weights", c.voting.equal_weights);
  });
  v.section("polish", [&] {
    v("iterations", c.polish.iterations);
    v("gate", c.polish.gate);
    v("weighted", c.polish.weighted);
  });
  v.section("mapping", [&] {
    v("enabled", c.mapping.enabled);
    v("leaf", c.mapping.map.leaf);
    v("covariance_fusion", c.mapping.map.covariance_fusion);
    v("eviction_window", c.mapping.map.eviction_window);
    v("representative_gate", c.mapping.representative_gate);
    v("percentile", c.mapping.percentile);
    v("queue_capacity", c.mapping.queue_capacity);
    v.section("keypoints", [&] {
      v("neighbors", c.mapping.keypoints.neighbors);
      v("planar_per_unit", c.mapping.keypoints.planar_per_unit);
      v("edge_per_unit", c.mapping.keypoints.edge_per_unit);
      v("planar_curvature", c.mapping.keypoints.planar_curvature);
      v("edge_curvature", c.mapping.keypoints.edge_curvature);
      v("flatness", c.mapping.keypoints.flatness);
      v("min_separation", c.mapping.keypoints.min_separation);
    });
    v.section("solver", [&] {
      v("search_radius", c.mapping.solver.search_radius);
      v("max_neighbors", c.mapping.solver.max_neighbors);
      v("min_plane_voxels", c.mapping.solver.min_plane_voxels);
      v("min_line_voxels", c.mapping.solver.min_line_voxels);
      v("max_fit_deviation", c.mapping.solver.max_fit_deviation);
      v("min_axis_agreement", c.mapping.solver.min_axis_agreement);
      v("huber_delta", c.mapping.solver.huber_delta);
      v("max_iterations", c.mapping.solver.max_iterations);
      v("translation_tol", c.mapping.solver.translation_tol);
      v("rotation_tol", c.mapping.solver.rotation_tol);
      v("degeneracy_threshold", c.mapping.solver.degeneracy_threshold);
      v("covariance_weighting", c.mapping.solver.covariance_weighting);
    });
  });
  v("threads", c.threads);
}

class Reader {
 public:
  explicit Reader(const json& root) { stack_.push_back({&root, "", {}}); }

  template <typename T>
  void operator()(const char* key, T& value) {
    Level& top = stack_.back();
    top.known.insert(key);
    const auto it = top.node->find(key);
    if (it == top.node->end()) return;
    try {
      read(*it, value);
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for " + top.path + key);
    }
  }

  template <typename F>
  void section(const char* key, F&& body) {
    Level& top = stack_.back();
    top.known.insert(key);
    const auto it = top.node->find(key);
    if (it == top.node->end()) return;
    if (!it->is_object()) throw ConfigError("config: " + top.path + key + " must be an object");
    stack_.push_back({&*it, top.path + key + ".", {}});
    body();
    finish();
    stack_.pop_back();
  }

  void finish() {
    const Level& top = stack_.back();
    for (const auto& [k, val] : top.node->items())
      if (!top.known.contains(k)) throw ConfigError("config: unknown key " + top.path + k);
  }

 private:
  struct Level {
    const json* node;
    std::string path;
    std::set<std::string> known;
  };

  static void read(const json& j, Eigen::Vector3d& v) {
    if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
    for (int i = 0; i < 3; ++i) v[i] = j.at(i).get<double>();
  }
  static void read(const json& j, bool& v) {
    if (!j.is_boolean()) throw json::type_error::create(302, "expected boolean", &j);
    v = j.get<bool>();
  }
  template <typename T>
  static void read(const json& j, T& v) {
    if (!j.is_number()) throw json::type_error::create(302, "expected number", &j);
    if constexpr (std::is_integral_v<T>) {
      if (!j.is_number_integer()) throw json::type_error::create(302, "expected integer", &j);
      if constexpr (std::is_unsigned_v<T>)
        if (j.get<std::int64_t>() < 0) throw json::type_error::create(302, "expected unsigned", &j);
    }
    v = j.get<T>();
  }

  std::vector<Level> stack_;
};

class Writer {
 public:
  Writer() { stack_.push_back(&root_); }

  template <typename T>
  void operator()(const char* key, T& value) {
    if constexpr (std::is_same_v<T, Eigen::Vector3d>) (*stack_.back())[key] = {value.x(), value.y(), value.z()};
    else (*stack_.back())[key] = value;
  }

  template <typename F>
  void section(const char* key, F&& body) {
    json& child = (*stack_.back())[key];
    child = json::object();
    stack_.push_back(&child);
    body();
    stack_.pop_back();
  }

  json& root() { return root_; }

 private:
  json root_ = json::object();
  std::vector<json*> stack_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

}  // namespace

void PipelineConfig::set_threads(int n) {
  threads = n;
  covariance.threads = n;
  registration.threads = n;
  mapping.solver.threads = n;
}

void PipelineConfig::validate() const {
  require((input.leaf.array() > 0.0).all(), "input.leaf must be positive");
  require(input.max_range >= 0.0, "input.max_range must be >= 0");
  require((unit_size.array() > 0.0).all(), "units.size must be positive");
  require(covariance.neighbors >= 4, "covariance.neighbors must be >= 4");
  require(covariance.lambda_min > 0.0 && covariance.lambda_min <= covariance.lambda_max,
          "covariance needs 0 < lambda_min <= lambda_max");
  require(covariance.isolation_radius > 0.0, "covariance.isolation_radius must be positive");
  require(registration.gate > 0.0, "registration.gate must be positive");
  require(registration.max_iterations >= 1, "registration.max_iterations must be >= 1");
  require(registration.min_inliers >= 3, "registration.min_inliers must be >= 3");
  require(voting.temperature > 0.0, "voting.temperature must be positive");
  require(voting.refine_steps >= 0, "voting.refine_steps must be >= 0");
  require(voting.delta > 0.0, "voting.delta must be positive");
  require(voting.gate > 0.0, "voting.gate must be positive");
  require(polish.iterations >= 0, "polish.iterations must be >= 0");
  require(polish.gate > 0.0, "polish.gate must be positive");
  require(mapping.map.leaf > 0.0, "mapping.leaf must be positive");
  require(mapping.map.eviction_window >= 0, "mapping.eviction_window must be >= 0");
  require(mapping.percentile >= 0.0 && mapping.percentile <= 100.0, "mapping.percentile must be in [0, 100]");
  require(mapping.queue_capacity >= 1, "mapping.queue_capacity must be >= 1");
  require(mapping.keypoints.neighbors >= 3, "mapping.keypoints.neighbors must be >= 3");
  require(mapping.solver.search_radius > 0.0, "mapping.solver.search_radius must be positive");
  require(mapping.solver.min_plane_voxels >= 3, "mapping.solver.min_plane_voxels must be >= 3");
  require(mapping.solver.min_line_voxels >= 2, "mapping.solver.min_line_voxels must be >= 2");
  require(mapping.solver.max_iterations >= 1, "mapping.solver.max_iterations must be >= 1");
  require(mapping.solver.min_axis_agreement >= 0.0 && mapping.solver.min_axis_agreement <= 1.0,
          "mapping.solver.min_axis_agreement must be in [0, 1]");
  require(mapping.solver.huber_delta > 0.0, "mapping.solver.huber_delta must be positive");
  require(threads >= 1, "threads must be >= 1");
}

PipelineConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  const auto ver = root.find("version");
  if (ver == root.end() || !ver->is_number_integer() || ver->get<int>() != kConfigVersion)
    throw ConfigError("config: \"version\" must be " + std::to_string(kConfigVersion));

  PipelineConfig c;
  Reader reader(root);
  int version = kConfigVersion;
  reader("version", version);
  visit_config(reader, c);
  reader.finish();
  c.set_threads(c.threads);
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const PipelineConfig& config) {
  PipelineConfig c = config;
  Writer writer;
  writer.root()["version"] = kConfigVersion;
  visit_config(writer, c);
  return writer.root().dump(2) + "\n";
}

}  // namespace unitlo
