#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "adlj/adam.hpp"
#include "adlj/checkpoint.hpp"
#include "adlj/config.hpp"
#include "adlj/errors.hpp"
#include "adlj/losses.hpp"
#include "adlj/model.hpp"
#include "adlj/point_cloud.hpp"

namespace adlj {

/// Scenes cropped to the grid range, with annotations when known.
struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<SceneAnnotation> annotations;

  std::size_t size() const { return clouds.size(); }
};

/// The scene generator settings of a run (range taken from the grid).
SceneConfig scene_config(const TrainConfig& config);
std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index);

/// `count` synthetic scenes; scene i uses scene_seed(dataset_seed, first + i).
Dataset synthetic_dataset(const TrainConfig& config, std::size_t count, std::size_t first = 0);
/// Every `*.bin` in `dir` (sorted by name), cropped to `range`; a sibling
/// `.ann` file supplies the boxes when present.
Dataset load_kitti_dir(const std::filesystem::path& dir, const Range3& range);
Dataset load_dataset(const TrainConfig& config);

std::uint64_t steps_per_epoch(const TrainConfig& config, std::size_t scenes);
/// epochs * steps_per_epoch, capped by max_steps when set.
std::uint64_t total_steps(const TrainConfig& config, std::size_t scenes);
/// Scene permutation of one epoch, a pure function of (seed, epoch).
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t scenes);

struct StepRecord {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  LossBreakdown losses;
};

/// Raised when a step produces a non-finite loss. Carries the last good record.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, std::optional<StepRecord> last)
      : NumericalError(what), last_(std::move(last)) {}
  const std::optional<StepRecord>& last() const { return last_; }

 private:
  std::optional<StepRecord> last_;
};

class Trainer {
 public:
  /// Fresh run: model initialized from config.seed.
  Trainer(TrainConfig config, const Dataset& data);
  /// Continues exactly where the checkpoint stopped.
  Trainer(Checkpoint checkpoint, const Dataset& data);

  /// One optimization step; throws TrainingAborted on a non-finite loss.
  StepRecord step();
  bool done() const { return step_ >= total_; }

  std::uint64_t current_step() const { return step_; }
  std::uint64_t total() const { return total_; }
  const TrainConfig& config() const { return config_; }
  ModelState& state() { return state_; }
  const ModelState& state() const { return state_; }
  const Dataset& data() const { return *data_; }
  Checkpoint checkpoint() const;

 private:
  TrainConfig config_;
  const Dataset* data_;
  ModelState state_;
  Adam optimizer_;
  std::uint64_t step_ = 0;
  std::uint64_t total_ = 0;
  std::optional<StepRecord> last_;
};

struct RunOptions {
  /// Where train_log.jsonl, metrics.csv and checkpoints go; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Stop once this many steps have been taken in total (0 runs to the end).
  std::uint64_t stop_at = 0;
  std::function<void(const StepRecord&)> on_step;
};

/// Drives the trainer, appending one JSON line per step, writing periodic
/// `step_%08d.adlj` checkpoints and, at the end, `final.adlj` (only when the
/// run reached its last step) and per-epoch means in metrics.csv.
std::vector<StepRecord> run_training(Trainer& trainer, const RunOptions& options);

/// One JSON object: "step", "epoch" and the twelve loss fields.
std::string format_log_line(const StepRecord& record);
StepRecord parse_log_line(const std::string& line);
/// Per-epoch means of each field, header row first.
std::string format_epoch_csv(const std::vector<StepRecord>& records);

}  // namespace adlj
