#pragma once

#include <filesystem>
#include <vector>

#include "unitlo/pipeline.hpp"
#include "unitlo/point_cloud.hpp"

namespace unitlo {

// File schemas (all with a header row):
//   trajectory_xy.csv  frame,x,y,z
//   unit_weights.csv   frame,kx,ky,kz,vx,vy,vz,w_rot,w_tr,residual,cond,representative
//   frame_loss.csv     frame,points,units,converged,loss_initial,loss_final,refine_rounds,
//                      keypoints,map_cost_initial,map_cost_final,map_degenerate
// Reals are written with 17 significant digits so they parse back exactly.

struct TrajectoryXYRecord {
  std::int64_t frame = 0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const TrajectoryXYRecord&) const = default;
};

void emit_plots(const Trajectory& trajectory, const RunDiagnostics& diagnostics,
                const std::filesystem::path& out_dir);

std::vector<TrajectoryXYRecord> read_trajectory_xy(const std::filesystem::path& path);
std::vector<UnitWeightRecord> read_unit_weights(const std::filesystem::path& path);
std::vector<FrameDiagnostics> read_frame_loss(const std::filesystem::path& path);

}  // namespace unitlo
