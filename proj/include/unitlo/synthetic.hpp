#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unitlo/point_cloud.hpp"

namespace unitlo {

/// Per-point ground-truth labels of a synthetic scan.
enum class PointLabel : std::uint8_t { kStatic = 0, kMoving = 1, kClutter = 2, kOutlier = 3 };

/// Scenes:
///   "manhattan"  ground plane, axis-aligned buildings and poles; every world
///                point is seen in every frame (no occlusion, no range
///                limit), so noise-free frames share exact correspondences
///                unless `resample` draws fresh surface samples per frame.
///   "two-body"   a sparser manhattan scene plus one rigid body circling
///                inside the loop; `moving_fraction` of each scan's points
///                lie on the body.
///   "dense"      ray-cast 64-beam scans (1875 azimuth steps, 120000 rays)
///                of the manhattan scene inside an enclosing courtyard.
struct SynthParams {
  std::string scene = "manhattan";
  int frames = 100;
  std::uint64_t seed = 1;
  double noise = 0.0;     // isotropic sensor noise σ (m)
  double noise_xy = -1.0; // per-direction σ in the sensor frame; used when both >= 0
  double noise_z = -1.0;
  double clutter_fraction = 0.0;  // points redrawn every frame inside bush-like blobs
  double outlier_fraction = 0.0;  // uniform random points around the sensor
  double moving_fraction = 0.3;
  double moving_speed = 0.3;      // m/frame of the moving body
  double top_speed = 0.55;        // sensor m/frame once the start-up ramp settles
  bool resample = false;          // new static surface samples every frame (point scenes)
};

struct SynthFrame {
  PointCloud cloud;  // sensor frame
  std::vector<PointLabel> labels;
};

struct SynthSequence {
  std::vector<SynthFrame> frames;
  Trajectory ground_truth;  // sensor poses relative to frame 0
};

/// Deterministic for a given parameter set.
SynthSequence generate_sequence(const SynthParams& params);

/// Writes `velodyne/NNNNNN.bin`, `labels/NNNNNN.label` (one byte per point)
/// and `poses.txt` (KITTI layout) under `dir`.
void write_sequence(const SynthSequence& seq, const std::filesystem::path& dir);

/// Reads a label file written by `write_sequence`.
std::vector<PointLabel> load_labels(const std::filesystem::path& path);

}  // namespace unitlo
