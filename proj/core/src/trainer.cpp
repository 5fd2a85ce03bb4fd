#include "adlj/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "adlj/masking.hpp"
#include "adlj/rng.hpp"
#include "adlj/schedule.hpp"

namespace adlj {

namespace {

constexpr std::uint64_t kSceneStream = 0x5ce7e;
constexpr std::uint64_t kOrderStream = 0x0de5;
constexpr std::uint64_t kMaskStream = 0x3a5c;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

SceneConfig scene_config(const TrainConfig& config) {
  SceneConfig scene = config.scene;
  scene.range = config.grid.range;
  return scene;
}

std::uint64_t scene_seed(std::uint64_t dataset_seed, std::size_t index) {
  return stream_seed({kSceneStream, dataset_seed, index});
}

Dataset synthetic_dataset(const TrainConfig& config, std::size_t count, std::size_t first) {
  const auto scene = scene_config(config);
  Dataset d;
  for (std::size_t i = first; i < first + count; ++i) {
    auto s = generate_scene(scene_seed(config.dataset_seed, i), scene);
    d.clouds.push_back(crop_to_range(s.cloud, scene.range));
    d.clouds.back().scene_id = s.cloud.scene_id;
    d.annotations.push_back(std::move(s.annotation));
  }
  return d;
}

Dataset load_kitti_dir(const std::filesystem::path& dir, const Range3& range) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> bins;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".bin") bins.push_back(e.path());
  }
  std::sort(bins.begin(), bins.end());
  if (bins.empty()) throw IoError("no .bin files in " + dir.string());
  Dataset d;
  for (const auto& p : bins) {
    auto cloud = crop_to_range(read_kitti_bin(p), range);
    cloud.scene_id = p.stem().string();
    d.clouds.push_back(std::move(cloud));
    auto ann = p;
    ann.replace_extension(".ann");
    d.annotations.push_back(std::filesystem::exists(ann) ? parse_annotation(read_text(ann)) : SceneAnnotation{});
  }
  return d;
}

Dataset load_dataset(const TrainConfig& config) {
  if (config.dataset == DatasetSource::kitti_bin) return load_kitti_dir(config.dataset_dir, config.grid.range);
  return synthetic_dataset(config, static_cast<std::size_t>(config.scenes));
}

std::uint64_t steps_per_epoch(const TrainConfig& config, std::size_t scenes) {
  const auto b = static_cast<std::size_t>(config.batch_size);
  return (scenes + b - 1) / b;
}

std::uint64_t total_steps(const TrainConfig& config, std::size_t scenes) {
  const auto full = static_cast<std::uint64_t>(config.epochs) * steps_per_epoch(config, scenes);
  if (config.max_steps > 0) return std::min<std::uint64_t>(full, static_cast<std::uint64_t>(config.max_steps));
  return full;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t scenes) {
  std::vector<std::size_t> order(scenes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng{kOrderStream, seed, epoch};
  for (std::size_t i = scenes; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

Trainer::Trainer(TrainConfig config, const Dataset& data) : config_(std::move(config)), data_(&data) {
  validate(config_);
  if (data.size() == 0) throw ConfigError("training needs at least one scene");
  state_ = init_model(config_.grid, config_.model, config_.seed);
  optimizer_ = make_optimizer(config_, state_);
  total_ = total_steps(config_, data.size());
}

Trainer::Trainer(Checkpoint checkpoint, const Dataset& data)
    : config_(std::move(checkpoint.config)),
      data_(&data),
      state_(std::move(checkpoint.state)),
      optimizer_(std::move(checkpoint.optimizer)),
      step_(checkpoint.step) {
  validate(config_);
  if (data.size() == 0) throw ConfigError("training needs at least one scene");
  total_ = total_steps(config_, data.size());
  if (step_ > total_) throw ConfigError("checkpoint step lies beyond the configured run length");
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint cp;
  cp.config = config_;
  cp.step = step_;
  cp.state = state_;
  cp.optimizer = optimizer_;
  return cp;
}

StepRecord Trainer::step() {
  if (done()) throw ContractError("Trainer::step: run already finished");
  const auto spe = steps_per_epoch(config_, data_->size());
  const auto epoch = step_ / spe;
  const auto batch_index = step_ % spe;
  const auto order = epoch_order(config_.seed, epoch, data_->size());
  const auto b = static_cast<std::size_t>(config_.batch_size);
  const auto first = static_cast<std::size_t>(batch_index) * b;
  const auto last = std::min(order.size(), first + b);

  std::vector<BevMaskPlan> plans;
  std::vector<PointCloud> full;
  for (std::size_t k = first; k < last; ++k) {
    const auto scene = order[k];
    const auto& cloud = data_->clouds[scene];
    plans.push_back(build_plan(cloud, config_.grid, config_.masking_ratio,
                               stream_seed({kMaskStream, config_.seed, epoch, scene}), config_.mask_empty_cells));
    if (config_.model.target_input == TargetInput::full) full.push_back(cloud);
  }
  const auto batch = make_batch(std::move(plans), full, config_.grid, config_.model.target_input);

  auto params = state_.trainable();
  for (auto& p : params) p.tensor->zero_grad();

  StepRecord record;
  record.step = step_;
  record.epoch = epoch;
  const double lr = config_.schedule.at(step_, total_);
  try {
    ad::Tape tape;
    const auto pass = forward_batch(tape, state_, batch, config_.objective);
    record.losses = summarize(pass, config_.objective, batch.plans);
    record.losses.learning_rate = lr;
    if (!record.losses.all_finite()) throw NumericalError("non-finite value in the step's loss breakdown");
    tape.backward(pass.total);
  } catch (const NumericalError& e) {
    throw TrainingAborted("step " + std::to_string(step_) + ": " + e.what(), last_);
  }

  if (config_.grad_clip > 0) {
    double sq = 0;
    for (const auto& p : params)
      for (double g : p.tensor->grad) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.grad_clip) {
      const double s = config_.grad_clip / norm;
      for (auto& p : params)
        for (double& g : p.tensor->grad) g *= s;
    }
  }
  try {
    optimizer_.step(params, lr);
  } catch (const NumericalError& e) {
    throw TrainingAborted("step " + std::to_string(step_) + ": " + e.what(), last_);
  }
  ema_update(state_, config_.ema_schedule ? ema_eta(step_, total_, config_.eta0) : config_.eta0);

  ++step_;
  last_ = record;
  return record;
}

std::string format_log_line(const StepRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["epoch"] = record.epoch;
  const auto values = record.losses.values();
  for (std::size_t i = 0; i < values.size(); ++i) j[std::string(LossBreakdown::kFieldNames[i])] = values[i];
  return j.dump();
}

StepRecord parse_log_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  StepRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.epoch = j.at("epoch").get<std::uint64_t>();
  std::array<double, 12> v{};
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = j.at(std::string(LossBreakdown::kFieldNames[i])).get<double>();
  r.losses = LossBreakdown::from_values(v);
  return r;
}

std::string format_epoch_csv(const std::vector<StepRecord>& records) {
  std::map<std::uint64_t, std::pair<std::size_t, std::array<double, 12>>> acc;
  for (const auto& r : records) {
    auto& [n, sums] = acc[r.epoch];
    const auto v = r.losses.values();
    for (std::size_t i = 0; i < v.size(); ++i) sums[i] += v[i];
    ++n;
  }
  std::ostringstream os;
  os << "epoch,steps";
  for (auto name : LossBreakdown::kFieldNames) os << ',' << name;
  os << '\n' << std::setprecision(17);
  for (const auto& [epoch, entry] : acc) {
    os << epoch << ',' << entry.first;
    for (double s : entry.second) os << ',' << s / static_cast<double>(entry.first);
    os << '\n';
  }
  return os.str();
}

std::vector<StepRecord> run_training(Trainer& trainer, const RunOptions& options) {
  const bool files = !options.out_dir.empty();
  std::ofstream log;
  const auto log_path = options.out_dir / "train_log.jsonl";
  if (files) {
    std::filesystem::create_directories(options.out_dir);
    const auto mode = trainer.current_step() > 0 ? std::ios::app : std::ios::trunc;
    log.open(log_path, std::ios::out | mode);
    if (!log) throw IoError("cannot open " + log_path.string());
  }
  const auto stop = options.stop_at > 0 ? std::min(options.stop_at, trainer.total()) : trainer.total();
  const auto every = static_cast<std::uint64_t>(trainer.config().checkpoint_every);

  std::vector<StepRecord> records;
  while (trainer.current_step() < stop) {
    auto r = trainer.step();
    if (files) {
      log << format_log_line(r) << '\n';
      log.flush();
      if (!log) throw IoError("write failed: " + log_path.string());
      if (every > 0 && trainer.current_step() % every == 0 && !trainer.done()) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%08llu.adlj", static_cast<unsigned long long>(trainer.current_step()));
        save_checkpoint(options.out_dir / name, trainer.checkpoint());
      }
    }
    if (options.on_step) options.on_step(r);
    records.push_back(std::move(r));
  }
  if (files) {
    log.close();
    if (trainer.done()) save_checkpoint(options.out_dir / "final.adlj", trainer.checkpoint());
    std::vector<StepRecord> all;
    std::ifstream in(log_path);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) all.push_back(parse_log_line(line));
    std::ofstream csv(options.out_dir / "metrics.csv", std::ios::trunc);
    csv << format_epoch_csv(all);
    if (!csv) throw IoError("write failed: " + (options.out_dir / "metrics.csv").string());
  }
  return records;
}

}  // namespace adlj
