#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adlj/bev_grid.hpp"
#include "adlj/losses.hpp"
#include "adlj/model.hpp"
#include "adlj/point_cloud.hpp"
#include "adlj/schedule.hpp"

namespace adlj {

enum class DatasetSource { synthetic, kitti_bin };

struct TrainConfig {
  std::uint64_t seed = 0;
  int epochs = 30;
  int max_steps = 0;  // caps the run length when > 0
  int batch_size = 8;
  OneCycle schedule{};
  double weight_decay = 0.01;
  double masking_ratio = 0.5;
  bool mask_empty_cells = true;
  double eta0 = 0.996;
  bool ema_schedule = true;  // false freezes eta at eta0
  double grad_clip = 0.0;    // global L2 norm; 0 disables
  ObjectiveConfig objective{};
  ModelConfig model{};
  GridSpec grid{};

  DatasetSource dataset = DatasetSource::synthetic;
  std::string dataset_dir;
  int scenes = 256;
  std::uint64_t dataset_seed = 1234;
  SceneConfig scene{};

  int checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  /// Diagnostics: effective-rank threshold below which a run is flagged collapsed.
  double collapse_rank_threshold = 2.0;
};

/// Throws ConfigError when a value is out of its valid range.
void validate(const TrainConfig& config);

/// Registered keys in canonical order.
const std::vector<std::string>& config_keys();
/// Assigns one key; throws ConfigError for unknown keys or unparsable values.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const TrainConfig& config, const std::string& key);

/// Plain-text `key = value` lines; `#` starts a comment line.
void apply_config_text(TrainConfig& config, const std::string& text);
TrainConfig parse_config_text(const std::string& text, const TrainConfig& base = {});
/// Every key, one per line, in canonical order. Doubles use round-trip precision.
std::string format_config(const TrainConfig& config);

/// Named presets: kitti_like, large_like, tiny, desk.
TrainConfig profile(const std::string& name);
std::vector<std::string> profile_names();

}  // namespace adlj
