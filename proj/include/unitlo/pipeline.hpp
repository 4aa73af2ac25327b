#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "unitlo/config.hpp"
#include "unitlo/covariance.hpp"
#include "unitlo/kdtree.hpp"
#include "unitlo/point_cloud.hpp"
#include "unitlo/scan2map.hpp"
#include "unitlo/unit_partition.hpp"
#include "unitlo/unit_registration.hpp"
#include "unitlo/voting.hpp"
#include "unitlo/voxel_map.hpp"

namespace unitlo {

/// A downsampled scan with everything the stages derive from it.
struct PreparedScan {
  PointCloud cloud;
  CovarianceField covariances;
  KdTree index;
  UnitGrid grid;
};

PreparedScan prepare_scan(const PointCloud& raw, const PipelineConfig& config);

struct UnitWeightRecord {
  std::int64_t frame = 0;
  UnitKey key;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  double w_rot = 0.0;
  double w_tr = 0.0;
  double residual = 0.0;
  double cond = 0.0;
  bool representative = false;
};

/// Two-frame estimate of the motion from scan t to scan t-1 (x_{t-1} = T x_t).
struct FrontEndResult {
  std::int64_t frame = 0;
  Pose relative;
  Pose voted;  // before the ICP polish
  std::vector<UnitTransform> units;
  VotingWeights weights;
  std::vector<UnitKey> representative;
  KeypointSet keypoints;
  std::shared_ptr<const PreparedScan> scan;
  std::size_t converged_units = 0;
  double loss_initial = 0.0;  // alignment loss at the initially voted pose
  double loss_final = 0.0;    // ... after weight refinement
  int refine_rounds = 0;
  double elapsed_ms = 0.0;
};

class FrontEnd {
 public:
  explicit FrontEnd(const PipelineConfig& config);

  /// Consumes the next scan. Returns nothing for the first scan.
  std::optional<FrontEndResult> process(const PointCloud& raw);

  /// The first scan's prepared form, once seen.
  [[nodiscard]] std::shared_ptr<const PreparedScan> first_scan() const { return first_; }

 private:
  PipelineConfig config_;
  std::shared_ptr<const PreparedScan> previous_;
  std::shared_ptr<const PreparedScan> first_;
  Pose last_relative_;
  std::int64_t frame_ = 0;
};

struct BackendStep {
  Pose pose;  // refined map pose of the frame
  RefinementResult refinement;
  IntegrationSummary integration;
  double elapsed_ms = 0.0;
};

/// Scan-to-map refinement and map update, strictly in frame order.
class MappingBackend {
 public:
  explicit MappingBackend(const PipelineConfig& config);

  /// Seeds the map with the first scan at the identity pose.
  void add_first(const PreparedScan& scan);
  BackendStep add(const FrontEndResult& result);

  [[nodiscard]] const VoxelMap& map() const { return map_; }
  [[nodiscard]] const Trajectory& trajectory() const { return trajectory_; }

 private:
  PipelineConfig config_;
  VoxelMap map_;
  Trajectory trajectory_;
};

struct FrameDiagnostics {
  std::int64_t frame = 0;
  std::size_t points = 0;
  std::size_t units = 0;
  std::size_t converged_units = 0;
  double loss_initial = 0.0;
  double loss_final = 0.0;
  int refine_rounds = 0;
  std::size_t keypoints = 0;
  double map_cost_initial = 0.0;
  double map_cost_final = 0.0;
  bool map_degenerate = false;
  double front_ms = 0.0;  // timing: kept out of every written file
  double back_ms = 0.0;
};

struct RunDiagnostics {
  std::vector<FrameDiagnostics> frames;
  std::vector<UnitWeightRecord> unit_weights;
};

struct RunResult {
  Trajectory trajectory;  // map-refined when mapping is on, else two-frame
  Trajectory front_end;   // composed two-frame estimates
  RunDiagnostics diagnostics;
  std::shared_ptr<const VoxelMapState> map;  // null when mapping is off
};

using ScanSource = std::function<PointCloud(std::size_t)>;

/// Runs the full odometry over `count` scans supplied by `source`. With more
/// than one thread and mapping on, the backend runs on its own thread behind
/// a bounded queue; the output does not depend on the thread budget.
RunResult run_odometry(const ScanSource& source, std::size_t count, const PipelineConfig& config);
RunResult run_odometry(const std::vector<PointCloud>& scans, const PipelineConfig& config);
RunResult run_odometry(const std::filesystem::path& sequence, const PipelineConfig& config);

}  // namespace unitlo
