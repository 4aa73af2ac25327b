// Command-line front door: run, eval, synth, dump-map, default-config.

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "unitlo/cloud_io.hpp"
#include "unitlo/config.hpp"
#include "unitlo/drift.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/log.hpp"
#include "unitlo/pipeline.hpp"
#include "unitlo/plots.hpp"
#include "unitlo/synthetic.hpp"
#include "unitlo/voxel_map.hpp"

namespace fs = std::filesystem;
using namespace unitlo;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct RunArgs {
  std::string seq;
  std::string config;
  std::string out;
  bool no_map = false;
  bool scalar_conf = false;
  bool no_rep_gate = false;
  bool no_cov_fusion = false;
  int threads = 0;
  bool verbose = false;
};

void print_drift(const DriftReport& r) {
  if (r.empty()) {
    std::printf("ground truth spans less than 100 m: no subsequence to evaluate\n");
    return;
  }
  std::printf("length_m  t_err_%%  r_err_deg/100m  subsequences\n");
  for (const LengthError& e : r.per_length)
    std::printf("%8.0f  %7.4f  %14.4f  %12zu\n", e.length, e.translation_percent, e.rotation_deg_per_100m, e.count);
  std::printf("t_rel %.4f %%  r_rel %.4f deg/100m  (%zu subsequences)\n", r.t_rel, r.r_rel, r.subsequences);
}

int cmd_run(const RunArgs& a) {
  if (a.verbose) log::set_level(log::Level::kInfo);
  PipelineConfig cfg = a.config.empty() ? PipelineConfig{} : load_config(a.config);
  if (a.no_map) cfg.mapping.enabled = false;
  if (a.scalar_conf) cfg.scalar_confidence = true;
  if (a.no_rep_gate) cfg.mapping.representative_gate = false;
  if (a.no_cov_fusion) {
    cfg.mapping.map.covariance_fusion = false;
    cfg.mapping.solver.covariance_weighting = false;
  }
  if (a.threads > 0) cfg.set_threads(a.threads);
  cfg.validate();

  const RunResult res = run_odometry(fs::path(a.seq), cfg);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_trajectory_kitti(res.trajectory, out / "trajectory.txt");
  write_trajectory_csv(res.trajectory, out / "trajectory.csv");
  emit_plots(res.trajectory, res.diagnostics, out);
  if (res.map) write_map_binary(*res.map, out / "map.bin");
  std::ofstream(out / "config_used.json") << dump_config(cfg);

  const fs::path gt = fs::path(a.seq) / "poses.txt";
  if (fs::exists(gt)) {
    const Trajectory truth = load_poses_kitti(gt);
    if (truth.size() == res.trajectory.size()) print_drift(evaluate_drift(res.trajectory, truth));
  }
  std::printf("wrote %zu poses to %s\n", res.trajectory.size(), (out / "trajectory.txt").c_str());
  return 0;
}

int cmd_eval(const std::string& est, const std::string& gt) {
  const Trajectory e = load_poses_kitti(est);
  const Trajectory g = load_poses_kitti(gt);
  if (e.size() != g.size())
    throw FormatError("estimate has " + std::to_string(e.size()) + " poses, ground truth " + std::to_string(g.size()));
  print_drift(evaluate_drift(e, g));
  return 0;
}

int cmd_synth(const SynthParams& p, const std::string& out) {
  const SynthSequence seq = generate_sequence(p);
  write_sequence(seq, out);
  std::printf("wrote %zu scans to %s\n", seq.frames.size(), out.c_str());
  return 0;
}

int cmd_dump_map(const std::string& map, const std::string& out) {
  const VoxelMapState s = read_map_binary(map);
  write_map_csv(s, out);
  std::printf("wrote %zu voxels to %s\n", s.voxels.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unitlo: geometric-unit LiDAR odometry"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Estimate the trajectory of a scan sequence");
  run_cmd->add_option("--seq", run.seq, "Sequence directory (velodyne/*.bin)")->required();
  run_cmd->add_option("--config", run.config, "JSON config file");
  run_cmd->add_option("--out", run.out, "Output directory")->required();
  run_cmd->add_flag("--no-map", run.no_map, "Two-frame odometry only");
  run_cmd->add_flag("--scalar-conf", run.scalar_conf, "Isotropic per-point confidence");
  run_cmd->add_flag("--no-rep-gate", run.no_rep_gate, "Keypoints from all units");
  run_cmd->add_flag("--no-cov-fusion", run.no_cov_fusion, "Average-filter map update");
  run_cmd->add_option("--threads", run.threads, "Thread budget")->check(CLI::PositiveNumber);
  run_cmd->add_flag("-v,--verbose", run.verbose, "Progress and warnings on stderr");

  std::string est, gt;
  auto* eval_cmd = app.add_subcommand("eval", "Drift of an estimate against ground truth (KITTI pose files)");
  eval_cmd->add_option("--est", est)->required();
  eval_cmd->add_option("--gt", gt)->required();

  SynthParams sp;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic sequence with ground truth");
  synth_cmd->add_option("--scene", sp.scene, "manhattan | two-body | dense")->required();
  synth_cmd->add_option("--frames", sp.frames)->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", sp.seed)->required();
  synth_cmd->add_option("--noise", sp.noise, "Isotropic noise sigma (m)")->default_val(0.0);
  synth_cmd->add_option("--noise-xy", sp.noise_xy, "Horizontal noise sigma (m)");
  synth_cmd->add_option("--noise-z", sp.noise_z, "Vertical noise sigma (m)");
  synth_cmd->add_option("--clutter", sp.clutter_fraction, "Clutter fraction");
  synth_cmd->add_option("--outliers", sp.outlier_fraction, "Outlier fraction");
  synth_cmd->add_option("--moving-fraction", sp.moving_fraction, "Moving-body share (two-body)");
  synth_cmd->add_flag("--resample", sp.resample, "Draw fresh surface samples every frame");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();

  std::string map_in, map_out;
  auto* dump_cmd = app.add_subcommand("dump-map", "Convert a binary map dump to CSV");
  dump_cmd->add_option("--map", map_in)->required();
  dump_cmd->add_option("--out", map_out)->required();

  auto* cfg_cmd = app.add_subcommand("default-config", "Print the default JSON config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*eval_cmd) return cmd_eval(est, gt);
    if (*synth_cmd) return cmd_synth(sp, synth_out);
    if (*dump_cmd) return cmd_dump_map(map_in, map_out);
    if (*cfg_cmd) {
      std::cout << dump_config(PipelineConfig{});
      return 0;
    }
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  }
  return kExitUsage;
}
