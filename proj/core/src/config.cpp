#include "adlj/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include "adlj/errors.hpp"

namespace adlj {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + text + "'");
}

struct Entry {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <class T, class Access>
Entry number(std::string key, Access access) {
  return {key,
          [access](const TrainConfig& c) {
            const auto v = access(const_cast<TrainConfig&>(c));
            if constexpr (std::is_floating_point_v<T>) return fmt_double(v);
            else return std::to_string(v);
          },
          [access, key](TrainConfig& c, const std::string& s) { access(c) = parse_number<T>(key, s); }};
}

template <class Access>
Entry boolean(std::string key, Access access) {
  return {key, [access](const TrainConfig& c) { return std::string(access(const_cast<TrainConfig&>(c)) ? "true" : "false"); },
          [access, key](TrainConfig& c, const std::string& s) { access(c) = parse_bool(key, s); }};
}

#define ADLJ_REF(expr) [](TrainConfig& c) -> auto& { return expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back(number<std::uint64_t>("seed", ADLJ_REF(c.seed)));
    e.push_back(number<int>("epochs", ADLJ_REF(c.epochs)));
    e.push_back(number<int>("max_steps", ADLJ_REF(c.max_steps)));
    e.push_back(number<int>("batch_size", ADLJ_REF(c.batch_size)));
    e.push_back(number<double>("lr_peak", ADLJ_REF(c.schedule.lr_peak)));
    e.push_back(number<double>("lr_warmup_fraction", ADLJ_REF(c.schedule.warmup_fraction)));
    e.push_back(number<double>("lr_start_div", ADLJ_REF(c.schedule.start_div)));
    e.push_back(number<double>("lr_floor_div", ADLJ_REF(c.schedule.floor_div)));
    e.push_back(number<double>("weight_decay", ADLJ_REF(c.weight_decay)));
    e.push_back(number<double>("grad_clip", ADLJ_REF(c.grad_clip)));
    e.push_back(number<double>("masking_ratio", ADLJ_REF(c.masking_ratio)));
    e.push_back(boolean("mask_empty_cells", ADLJ_REF(c.mask_empty_cells)));
    e.push_back(number<double>("eta0", ADLJ_REF(c.eta0)));
    e.push_back(boolean("ema_schedule", ADLJ_REF(c.ema_schedule)));

    e.push_back(number<double>("alpha0", ADLJ_REF(c.objective.alpha_empty)));
    e.push_back(number<double>("alpha1", ADLJ_REF(c.objective.alpha_occupied)));
    e.push_back(number<double>("beta1", ADLJ_REF(c.objective.beta_context)));
    e.push_back(number<double>("beta2", ADLJ_REF(c.objective.beta_prediction)));
    e.push_back(number<double>("lambda_jepa", ADLJ_REF(c.objective.lambda_jepa)));
    e.push_back(number<double>("lambda_reg", ADLJ_REF(c.objective.lambda_reg)));
    e.push_back(number<double>("gamma", ADLJ_REF(c.objective.gamma)));
    e.push_back(number<double>("var_eps", ADLJ_REF(c.objective.var_eps)));
    e.push_back(boolean("use_variance_reg", ADLJ_REF(c.objective.use_variance_reg)));
    e.push_back({"reg_sum_over_batch",
                 [](const TrainConfig& c) {
                   return std::string(c.objective.reg_normalization == RegNormalization::sum_over_batch ? "true" : "false");
                 },
                 [](TrainConfig& c, const std::string& s) {
                   auto& n = c.objective.reg_normalization;
                   if (parse_bool("reg_sum_over_batch", s)) n = RegNormalization::sum_over_batch;
                   else if (n == RegNormalization::sum_over_batch) n = RegNormalization::mean_over_batch;
                 }});
    e.push_back({"reg_pooled_over_batch",
                 [](const TrainConfig& c) {
                   return std::string(c.objective.reg_normalization == RegNormalization::pooled_batch ? "true" : "false");
                 },
                 [](TrainConfig& c, const std::string& s) {
                   auto& n = c.objective.reg_normalization;
                   if (parse_bool("reg_pooled_over_batch", s)) n = RegNormalization::pooled_batch;
                   else if (n == RegNormalization::pooled_batch) n = RegNormalization::mean_over_batch;
                 }});

    e.push_back(boolean("use_empty_token", ADLJ_REF(c.model.use_empty_token)));
    e.push_back(boolean("use_mask_token", ADLJ_REF(c.model.use_mask_token)));
    e.push_back(boolean("empty_token_on_masked_targets", ADLJ_REF(c.model.empty_token_on_masked_targets)));
    e.push_back(number<std::size_t>("predictor_depth", ADLJ_REF(c.model.predictor_depth)));
    e.push_back({"target_input",
                 [](const TrainConfig& c) {
                   return std::string(c.model.target_input == TargetInput::full ? "full" : "hidden_only");
                 },
                 [](TrainConfig& c, const std::string& s) {
                   if (s == "full") c.model.target_input = TargetInput::full;
                   else if (s == "hidden_only") c.model.target_input = TargetInput::hidden_only;
                   else throw ConfigError("config key 'target_input': expected hidden_only or full, got '" + s + "'");
                 }});
    e.push_back({"encoder_channels",
                 [](const TrainConfig& c) {
                   const auto& ch = c.model.encoder_channels;
                   return std::to_string(ch[0]) + "," + std::to_string(ch[1]) + "," + std::to_string(ch[2]);
                 },
                 [](TrainConfig& c, const std::string& s) {
                   std::array<std::size_t, 3> ch{};
                   std::istringstream is(s);
                   std::string part;
                   std::size_t i = 0;
                   while (std::getline(is, part, ',')) {
                     if (i >= 3) throw ConfigError("config key 'encoder_channels': expected three values");
                     ch[i++] = parse_number<std::size_t>("encoder_channels", trim(part));
                   }
                   if (i != 3) throw ConfigError("config key 'encoder_channels': expected three values");
                   c.model.encoder_channels = ch;
                 }});

    e.push_back(number<std::size_t>("grid_x", ADLJ_REF(c.grid.nx)));
    e.push_back(number<std::size_t>("grid_y", ADLJ_REF(c.grid.ny)));
    e.push_back(number<std::size_t>("grid_z", ADLJ_REF(c.grid.nz)));
    e.push_back(number<double>("range_x_min", ADLJ_REF(c.grid.range.min[0])));
    e.push_back(number<double>("range_x_max", ADLJ_REF(c.grid.range.max[0])));
    e.push_back(number<double>("range_y_min", ADLJ_REF(c.grid.range.min[1])));
    e.push_back(number<double>("range_y_max", ADLJ_REF(c.grid.range.max[1])));
    e.push_back(number<double>("range_z_min", ADLJ_REF(c.grid.range.min[2])));
    e.push_back(number<double>("range_z_max", ADLJ_REF(c.grid.range.max[2])));

    e.push_back({"dataset",
                 [](const TrainConfig& c) {
                   return std::string(c.dataset == DatasetSource::kitti_bin ? "kitti_bin" : "synthetic");
                 },
                 [](TrainConfig& c, const std::string& s) {
                   if (s == "synthetic") c.dataset = DatasetSource::synthetic;
                   else if (s == "kitti_bin") c.dataset = DatasetSource::kitti_bin;
                   else throw ConfigError("config key 'dataset': expected synthetic or kitti_bin, got '" + s + "'");
                 }});
    e.push_back({"dataset_dir", [](const TrainConfig& c) { return c.dataset_dir; },
                 [](TrainConfig& c, const std::string& s) { c.dataset_dir = s; }});
    e.push_back(number<int>("scenes", ADLJ_REF(c.scenes)));
    e.push_back(number<std::uint64_t>("dataset_seed", ADLJ_REF(c.dataset_seed)));

    e.push_back(number<double>("scene_ground_z", ADLJ_REF(c.scene.ground_z)));
    e.push_back(number<double>("scene_ground_band", ADLJ_REF(c.scene.ground_band)));
    e.push_back(number<int>("scene_min_objects", ADLJ_REF(c.scene.min_objects)));
    e.push_back(number<int>("scene_max_objects", ADLJ_REF(c.scene.max_objects)));
    e.push_back(number<int>("scene_min_points_per_object", ADLJ_REF(c.scene.min_points_per_object)));
    e.push_back(number<double>("scene_object_density", ADLJ_REF(c.scene.object_density)));
    e.push_back(number<double>("scene_object_min_distance", ADLJ_REF(c.scene.object_min_distance)));
    e.push_back(number<double>("scene_object_max_distance", ADLJ_REF(c.scene.object_max_distance)));
    e.push_back(number<int>("scene_ring_count", ADLJ_REF(c.scene.ring_count)));
    e.push_back(number<double>("scene_ring_first_radius", ADLJ_REF(c.scene.ring_first_radius)));
    e.push_back(number<double>("scene_ring_growth", ADLJ_REF(c.scene.ring_growth)));
    e.push_back(number<int>("scene_ring_points", ADLJ_REF(c.scene.ring_points)));
    e.push_back(number<int>("scene_ring_sectors", ADLJ_REF(c.scene.ring_sectors)));
    e.push_back(number<double>("scene_sector_dropout", ADLJ_REF(c.scene.sector_dropout)));
    e.push_back(number<int>("scene_noise_points", ADLJ_REF(c.scene.noise_points)));
    e.push_back(number<int>("scene_min_points", ADLJ_REF(c.scene.min_points)));
    e.push_back(number<int>("scene_max_points", ADLJ_REF(c.scene.max_points)));

    e.push_back(number<int>("checkpoint_every", ADLJ_REF(c.checkpoint_every)));
    e.push_back(number<double>("collapse_rank_threshold", ADLJ_REF(c.collapse_rank_threshold)));
    return e;
  }();
  return entries;
}

#undef ADLJ_REF

const Entry& find_entry(const std::string& key) {
  const auto& r = registry();
  const auto it = std::find_if(r.begin(), r.end(), [&](const Entry& e) { return e.key == key; });
  if (it == r.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

void set_config_value(TrainConfig& config, const std::string& key, const std::string& value) {
  find_entry(key).set(config, trim(value));
}

std::string get_config_value(const TrainConfig& config, const std::string& key) {
  return find_entry(key).get(config);
}

void apply_config_text(TrainConfig& config, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value, got '" + t + "'");
    }
    set_config_value(config, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

TrainConfig parse_config_text(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  apply_config_text(c, text);
  return c;
}

std::string format_config(const TrainConfig& config) {
  std::ostringstream os;
  for (const auto& e : registry()) os << e.key << " = " << e.get(config) << '\n';
  return os.str();
}

void validate(const TrainConfig& c) {
  c.grid.validate();
  if (c.grid.downsample != 8) throw ConfigError("grid downsample must be 8 (three stride-2 encoder stages)");
  if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (c.max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(c.schedule.lr_peak > 0)) throw ConfigError("lr_peak must be positive");
  if (!(c.schedule.warmup_fraction >= 0 && c.schedule.warmup_fraction < 1)) {
    throw ConfigError("lr_warmup_fraction must lie in [0, 1)");
  }
  if (!(c.schedule.start_div > 0 && c.schedule.floor_div > 0)) throw ConfigError("lr divisors must be positive");
  if (c.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (!(c.masking_ratio > 0 && c.masking_ratio < 1)) throw ConfigError("masking_ratio must lie strictly in (0, 1)");
  if (!(c.eta0 >= 0 && c.eta0 <= 1)) throw ConfigError("eta0 must lie in [0, 1]");
  const auto& o = c.objective;
  if (o.alpha_empty < 0 || o.alpha_occupied < 0 || o.beta_context < 0 || o.beta_prediction < 0 ||
      o.lambda_jepa < 0 || o.lambda_reg < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(o.var_eps > 0)) throw ConfigError("var_eps must be positive");
  const auto d = c.model.predictor_depth;
  if (d != 1 && d != 3 && d != 6) throw ConfigError("predictor_depth must be one of 1, 3, 6");
  for (auto ch : c.model.encoder_channels)
    if (ch == 0) throw ConfigError("encoder channel counts must be positive");
  if (c.dataset == DatasetSource::synthetic && c.scenes < 1) throw ConfigError("scenes must be >= 1");
  if (c.dataset == DatasetSource::kitti_bin && c.dataset_dir.empty()) {
    throw ConfigError("dataset = kitti_bin requires dataset_dir");
  }
  if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  SceneConfig scene = c.scene;
  scene.range = c.grid.range;
  validate(scene);
}

TrainConfig profile(const std::string& name) {
  TrainConfig c;
  if (name == "kitti_like") return c;
  if (name == "large_like") {
    c.objective.lambda_reg = 10.0;
    return c;
  }
  if (name == "tiny") {
    c.grid.nx = 16;
    c.grid.ny = 16;
    c.grid.nz = 8;
    c.model.encoder_channels = {8, 8, 8};
    c.batch_size = 2;
    c.scenes = 8;
    c.epochs = 1;
    return c;
  }
  if (name == "desk") {
    c.grid.nx = 64;
    c.grid.ny = 64;
    c.grid.nz = 8;
    c.model.encoder_channels = {8, 8, 16};
    c.model.empty_token_on_masked_targets = true;
    c.batch_size = 8;
    c.scenes = 256;
    c.epochs = 32;
    c.max_steps = 1000;
    return c;
  }
  throw ConfigError("unknown profile '" + name + "'");
}

std::vector<std::string> profile_names() { return {"kitti_like", "large_like", "tiny", "desk"}; }

}  // namespace adlj
