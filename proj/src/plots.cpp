#include "unitlo/plots.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "unitlo/errors.hpp"

namespace unitlo {
namespace {

constexpr const char* kTrajectoryHeader = "frame,x,y,z";
constexpr const char* kUnitHeader = "frame,kx,ky,kz,vx,vy,vz,w_rot,w_tr,residual,cond,representative";
constexpr const char* kLossHeader =
    "frame,points,units,converged,loss_initial,loss_final,refine_rounds,keypoints,map_cost_initial,"
    "map_cost_final,map_degenerate";

class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const char* header) : path_(path), f_(std::fopen(path.c_str(), "w")) {
    if (!f_) throw IoError("cannot write " + path.string());
    std::fprintf(f_, "%s\n", header);
  }
  ~CsvFile() {
    if (f_) std::fclose(f_);
  }
  CsvFile(const CsvFile&) = delete;
  CsvFile& operator=(const CsvFile&) = delete;

  std::FILE* get() { return f_; }
  void close() {
    const int rc = std::fclose(f_);
    f_ = nullptr;
    if (rc != 0) throw IoError("cannot write " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::FILE* f_;
};

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, const char* header,
                                                std::size_t columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError(path.string() + ": unexpected header");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns)
      throw FormatError(path.string() + ": expected " + std::to_string(columns) + " columns");
    rows.push_back(std::move(cells));
  }
  return rows;
}

double real(const std::string& s) { return std::stod(s); }
std::int64_t integer(const std::string& s) { return std::stoll(s); }

}  // namespace

void emit_plots(const Trajectory& trajectory, const RunDiagnostics& diagnostics,
                const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());

  CsvFile traj(out_dir / "trajectory_xy.csv", kTrajectoryHeader);
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    const Eigen::Vector3d& t = trajectory.poses[k].translation();
    std::fprintf(traj.get(), "%zu,%.17g,%.17g,%.17g\n", k, t.x(), t.y(), t.z());
  }
  traj.close();

  CsvFile units(out_dir / "unit_weights.csv", kUnitHeader);
  for (const UnitWeightRecord& r : diagnostics.unit_weights)
    std::fprintf(units.get(), "%lld,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n",
                 static_cast<long long>(r.frame), r.key.x, r.key.y, r.key.z, r.offset.x(), r.offset.y(),
                 r.offset.z(), r.w_rot, r.w_tr, r.residual, r.cond, r.representative ? 1 : 0);
  units.close();

  CsvFile loss(out_dir / "frame_loss.csv", kLossHeader);
  for (const FrameDiagnostics& d : diagnostics.frames)
    std::fprintf(loss.get(), "%lld,%zu,%zu,%zu,%.17g,%.17g,%d,%zu,%.17g,%.17g,%d\n",
                 static_cast<long long>(d.frame), d.points, d.units, d.converged_units, d.loss_initial,
                 d.loss_final, d.refine_rounds, d.keypoints, d.map_cost_initial, d.map_cost_final,
                 d.map_degenerate ? 1 : 0);
  loss.close();
}

std::vector<TrajectoryXYRecord> read_trajectory_xy(const std::filesystem::path& path) {
  std::vector<TrajectoryXYRecord> out;
  for (const auto& c : read_rows(path, kTrajectoryHeader, 4))
    out.push_back({integer(c[0]), real(c[1]), real(c[2]), real(c[3])});
  return out;
}

std::vector<UnitWeightRecord> read_unit_weights(const std::filesystem::path& path) {
  std::vector<UnitWeightRecord> out;
  for (const auto& c : read_rows(path, kUnitHeader, 12)) {
    UnitWeightRecord r;
    r.frame = integer(c[0]);
    r.key = {static_cast<std::int32_t>(integer(c[1])), static_cast<std::int32_t>(integer(c[2])),
             static_cast<std::int32_t>(integer(c[3]))};
    r.offset = {real(c[4]), real(c[5]), real(c[6])};
    r.w_rot = real(c[7]);
    r.w_tr = real(c[8]);
    r.residual = real(c[9]);
    r.cond = real(c[10]);
    r.representative = integer(c[11]) != 0;
    out.push_back(r);
  }
  return out;
}

std::vector<FrameDiagnostics> read_frame_loss(const std::filesystem::path& path) {
  std::vector<FrameDiagnostics> out;
  for (const auto& c : read_rows(path, kLossHeader, 11)) {
    FrameDiagnostics d;
    d.frame = integer(c[0]);
    d.points = static_cast<std::size_t>(integer(c[1]));
    d.units = static_cast<std::size_t>(integer(c[2]));
    d.converged_units = static_cast<std::size_t>(integer(c[3]));
    d.loss_initial = real(c[4]);
    d.loss_final = real(c[5]);
    d.refine_rounds = static_cast<int>(integer(c[6]));
    d.keypoints = static_cast<std::size_t>(integer(c[7]));
    d.map_cost_initial = real(c[8]);
    d.map_cost_final = real(c[9]);
    d.map_degenerate = integer(c[10]) != 0;
    out.push_back(d);
  }
  return out;
}

}  // namespace unitlo
