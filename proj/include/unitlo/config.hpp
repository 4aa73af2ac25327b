#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <string>

#include "unitlo/covariance.hpp"
#include "unitlo/scan2map.hpp"
#include "unitlo/unit_registration.hpp"
#include "unitlo/voting.hpp"
#include "unitlo/voxel_map.hpp"

namespace unitlo {

inline constexpr int kConfigVersion = 1;

struct InputConfig {
  Eigen::Vector3d leaf{0.1, 0.1, 0.2};
  double max_range = 0.0;  // 0 disables the range crop
};

struct VotingConfig {
  double temperature = 1.0;
  ScoringParams scoring;
  int refine_steps = 2;
  double delta = 0.5;
  double gate = 1.0;              // correspondence gate of the alignment loss
  std::size_t sample_points = 4096;
  bool equal_weights = false;     // uniform votes, no refinement
};

struct PolishConfig {
  int iterations = 2;
  double gate = 1.0;
  bool weighted = true;  // pull of each point scaled by its unit's voting weight
};

struct MappingConfig {
  bool enabled = true;
  VoxelMapParams map;
  bool representative_gate = true;
  double percentile = 60.0;
  KeypointParams keypoints;
  Scan2MapParams solver;
  std::size_t queue_capacity = 4;
};

struct PipelineConfig {
  InputConfig input;
  Eigen::Vector3d unit_size{1.6, 1.6, 3.2};
  CovarianceParams covariance;
  bool scalar_confidence = false;
  RegistrationParams registration;
  VotingConfig voting;
  PolishConfig polish;
  MappingConfig mapping;
  int threads = 1;

  /// Pushes the thread budget into every stage.
  void set_threads(int n);
  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Parses a JSON config. Missing keys keep their defaults; unknown keys and a
/// missing or unsupported "version" are errors.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);

/// Complete JSON form of a config (every key present), loadable by
/// `parse_config`.
std::string dump_config(const PipelineConfig& config);

}  // namespace unitlo
