#include "unitlo/pipeline.hpp"

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <mutex>
#include <thread>

#include "unitlo/cloud_io.hpp"
#include "unitlo/errors.hpp"
#include "unitlo/log.hpp"

namespace unitlo {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock lock(mutex_);
    not_full_.wait(lock, [&] { return closed_ || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
};

// Re-raises a module error with the frame index prepended, keeping the
// data/numerical distinction the CLI exit codes rely on.
[[noreturn]] void rethrow_with_frame(std::int64_t frame) {
  const std::string prefix = "frame " + std::to_string(frame) + ": ";
  try {
    throw;
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  }
}

std::vector<double> polish_weights(const PreparedScan& scan, const std::vector<UnitTransform>& units,
                                   const VotingWeights& weights) {
  std::vector<double> w(scan.cloud.size(), 1.0);
  const double m = static_cast<double>(units.size());
  for (std::size_t i = 0; i < units.size(); ++i)
    for (const std::uint32_t p : scan.grid.units.at(units[i].key).point_indices) w[p] = weights.tr[i] * m;
  return w;
}

}  // namespace

PreparedScan prepare_scan(const PointCloud& raw, const PipelineConfig& config) {
  PreparedScan s;
  s.cloud = voxel_downsample(config.input.max_range > 0.0 ? crop_range(raw, config.input.max_range) : raw,
                             config.input.leaf);
  s.cloud.frame = raw.frame;
  s.index = KdTree(s.cloud.points);
  s.covariances = estimate_covariances(s.cloud, s.index, config.covariance);
  if (config.scalar_confidence) s.covariances = to_scalar_confidence(s.covariances);
  s.grid = partition(s.cloud, config.unit_size);
  return s;
}

FrontEnd::FrontEnd(const PipelineConfig& config) : config_(config) { config_.validate(); }

std::optional<FrontEndResult> FrontEnd::process(const PointCloud& raw) {
  const auto t0 = Clock::now();
  auto current = std::make_shared<const PreparedScan>(prepare_scan(raw, config_));
  const std::int64_t frame = frame_++;
  if (!previous_) {
    previous_ = current;
    first_ = current;
    return std::nullopt;
  }
  const PreparedScan& cur = *current;
  const PreparedScan& prev = *previous_;

  FrontEndResult r;
  r.frame = frame;
  r.scan = current;
  r.units = estimate_all_units(cur.grid, cur.cloud, prev.index, last_relative_, config_.registration);
  for (const UnitTransform& u : r.units) r.converged_units += u.converged ? 1 : 0;

  const ScanView cur_view{cur.cloud.points, cur.covariances, &cur.index};
  const ScanView prev_view{prev.cloud.points, prev.covariances, &prev.index};
  const CovarianceMode mode = config_.scalar_confidence ? CovarianceMode::kScalar : CovarianceMode::kFull;

  Pose pose;
  if (r.converged_units == 0) {
    log::warn("frame " + std::to_string(frame) + ": no unit converged; falling back to whole-scan ICP");
    pose = refine_pose_icp(last_relative_, cur.cloud.points, prev.index, config_.registration.max_iterations,
                           config_.registration.gate);
    r.voted = pose;
    r.weights.rot.assign(r.units.size(), 0.0);
    r.weights.tr.assign(r.units.size(), 0.0);
  } else {
    std::vector<UnitFrameOffset> offsets;
    offsets.reserve(r.units.size());
    for (const UnitTransform& u : r.units) offsets.push_back(cur.grid.units.at(u.key).offset);

    SelectionScores scores =
        config_.voting.equal_weights ? equal_scores(r.units) : initial_scores(r.units, config_.voting.scoring);
    RefineWeightsParams rp;
    rp.temperature = config_.voting.temperature;
    rp.steps = config_.voting.equal_weights ? 0 : config_.voting.refine_steps;
    rp.delta = config_.voting.delta;
    rp.gate = config_.voting.gate;
    rp.mode = mode;
    rp.max_points = config_.voting.sample_points;
    const WeightRefinement refined = refine_weights(scores, r.units, offsets, cur_view, prev_view, rp);
    r.weights = normalize_scores(refined.scores, rp.temperature);
    r.voted = refined.pose;
    r.refine_rounds = refined.rounds_kept;
    if (!refined.loss_trace.empty()) {
      r.loss_initial = refined.loss_trace.front();
      r.loss_final = refined.loss_trace.back();
    } else {
      const auto sample = stride_sample(cur.cloud.size(), rp.max_points);
      r.loss_initial = r.loss_final = ugc_loss(cur_view, prev_view, r.voted, rp.gate, mode, sample).total_loss;
    }
    pose = r.voted;
    if (config_.polish.iterations > 0) {
      const std::vector<double> w =
          config_.polish.weighted ? polish_weights(cur, r.units, r.weights) : std::vector<double>{};
      pose = refine_pose_icp(pose, cur.cloud.points, prev.index, config_.polish.iterations, config_.polish.gate, w);
    }

    if (config_.mapping.enabled) {
      if (config_.mapping.representative_gate) {
        r.representative = select_representative_units(r.weights, r.units, config_.mapping.percentile);
      } else {
        for (const UnitTransform& u : r.units) r.representative.push_back(u.key);
      }
    }
  }
  if (config_.mapping.enabled)
    r.keypoints = extract_keypoints(cur.cloud, cur.index, cur.grid, r.representative, config_.mapping.keypoints);

  r.relative = pose;
  last_relative_ = pose;
  previous_ = std::move(current);
  r.elapsed_ms = ms_since(t0);
  return r;
}

MappingBackend::MappingBackend(const PipelineConfig& config) : config_(config), map_(config.mapping.map) {}

void MappingBackend::add_first(const PreparedScan& scan) {
  map_.integrate_scan(scan.cloud.points, scan.covariances, Pose::Identity());
  trajectory_.poses.assign(1, Pose::Identity());
}

BackendStep MappingBackend::add(const FrontEndResult& result) {
  const auto t0 = Clock::now();
  if (trajectory_.empty()) throw std::logic_error("MappingBackend::add before add_first");
  BackendStep step;
  const Pose init = trajectory_.poses.back() * result.relative;
  const std::shared_ptr<const VoxelMapState> snap = map_.snapshot();
  step.refinement = refine_scan_to_map(init, result.scan->cloud, result.keypoints, *snap, config_.mapping.solver);
  step.pose = step.refinement.pose;
  step.integration = map_.integrate_scan(result.scan->cloud.points, result.scan->covariances, step.pose);
  trajectory_.poses.push_back(step.pose);
  step.elapsed_ms = ms_since(t0);
  return step;
}

RunResult run_odometry(const ScanSource& source, std::size_t count, const PipelineConfig& config) {
  if (count < 2) throw TooFewPointsError("run_odometry: need at least two scans");
  config.validate();
  FrontEnd front(config);
  std::optional<MappingBackend> back;
  if (config.mapping.enabled) back.emplace(config);

  RunResult out;
  std::vector<Pose> relative;
  std::vector<BackendStep> steps;
  std::optional<BoundedQueue<std::shared_ptr<const FrontEndResult>>> queue;
  std::thread worker;
  std::exception_ptr worker_error;
  std::int64_t worker_frame = 0;

  const auto stop_worker = [&] {
    if (!worker.joinable()) return;
    queue->close();
    worker.join();
  };

  try {
    for (std::size_t i = 0; i < count; ++i) {
      std::optional<FrontEndResult> r;
      try {
        PointCloud raw = source(i);
        raw.frame = static_cast<std::int64_t>(i);
        r = front.process(raw);
      } catch (const Error&) {
        rethrow_with_frame(static_cast<std::int64_t>(i));
      }
      if (!r) {
        if (back) {
          back->add_first(*front.first_scan());
          if (config.threads > 1) {
            queue.emplace(config.mapping.queue_capacity);
            worker = std::thread([&] {
              try {
                while (auto item = queue->pop()) {
                  worker_frame = (*item)->frame;
                  steps.push_back(back->add(**item));
                }
              } catch (...) {
                worker_error = std::current_exception();
                queue->close();
              }
            });
          }
        }
        FrameDiagnostics d;
        d.points = front.first_scan()->cloud.size();
        out.diagnostics.frames.push_back(d);
        continue;
      }

      relative.push_back(r->relative);
      FrameDiagnostics d;
      d.frame = r->frame;
      d.points = r->scan->cloud.size();
      d.units = r->units.size();
      d.converged_units = r->converged_units;
      d.loss_initial = r->loss_initial;
      d.loss_final = r->loss_final;
      d.refine_rounds = r->refine_rounds;
      d.keypoints = r->keypoints.size();
      d.front_ms = r->elapsed_ms;
      out.diagnostics.frames.push_back(d);

      std::vector<UnitKey> rep = r->representative;
      std::sort(rep.begin(), rep.end());
      for (std::size_t u = 0; u < r->units.size(); ++u) {
        const UnitTransform& ut = r->units[u];
        UnitWeightRecord rec;
        rec.frame = r->frame;
        rec.key = ut.key;
        rec.offset = r->scan->grid.units.at(ut.key).offset.v;
        rec.w_rot = r->weights.rot[u];
        rec.w_tr = r->weights.tr[u];
        rec.residual = ut.mean_residual;
        rec.cond = ut.hessian_cond;
        rec.representative = std::binary_search(rep.begin(), rep.end(), ut.key);
        out.diagnostics.unit_weights.push_back(rec);
      }

      if (back) {
        auto shared = std::make_shared<const FrontEndResult>(std::move(*r));
        if (queue) {
          if (!queue->push(shared)) break;  // the worker failed
        } else {
          try {
            steps.push_back(back->add(*shared));
          } catch (const Error&) {
            rethrow_with_frame(shared->frame);
          }
        }
      }
    }
  } catch (...) {
    stop_worker();
    throw;
  }
  stop_worker();
  if (worker_error) {
    try {
      std::rethrow_exception(worker_error);
    } catch (const Error&) {
      rethrow_with_frame(worker_frame);
    }
  }

  out.front_end = compose_relative(relative);
  if (back) {
    for (std::size_t k = 0; k < steps.size(); ++k) {
      FrameDiagnostics& d = out.diagnostics.frames[k + 1];
      d.map_cost_initial = steps[k].refinement.initial_cost;
      d.map_cost_final = steps[k].refinement.final_cost;
      d.map_degenerate = steps[k].refinement.degenerate;
      d.back_ms = steps[k].elapsed_ms;
    }
    out.trajectory = back->trajectory();
    out.map = back->map().snapshot();
  } else {
    out.trajectory = out.front_end;
  }
  return out;
}

RunResult run_odometry(const std::vector<PointCloud>& scans, const PipelineConfig& config) {
  return run_odometry([&](std::size_t i) { return scans[i]; }, scans.size(), config);
}

RunResult run_odometry(const std::filesystem::path& sequence, const PipelineConfig& config) {
  const std::vector<std::filesystem::path> files = list_scans(sequence);
  if (files.size() < 2) throw IoError(sequence.string() + ": need at least two .bin scans");
  return run_odometry([&](std::size_t i) { return load_scan_kitti(files[i]).cloud; }, files.size(), config);
}

}  // namespace unitlo
