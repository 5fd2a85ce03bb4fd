#include "adlj_cli/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "adlj/checkpoint.hpp"
#include "adlj/diagnostics.hpp"
#include "adlj/errors.hpp"
#include "adlj/gradcheck.hpp"
#include "adlj/report.hpp"
#include "adlj/rng.hpp"
#include "adlj/trainer.hpp"

namespace adlj::cli {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kDiagnoseStream = 0xd1a9;

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void echo_config(const CommonOptions& common, const TrainConfig& config) {
  if (common.out_dir.empty()) return;
  fs::create_directories(common.out_dir);
  write_text(fs::path(common.out_dir) / "config.txt", format_config(config));
}

// Checkpoint config with the user's options on top; model tensors must agree.
TrainConfig config_for_checkpoint(const CommonOptions& common, const Checkpoint& cp) {
  if (!common.customized()) return cp.config;
  const auto requested = resolve_config(common, common.profile ? nullptr : &cp.config);
  check_compatible(cp.config, requested);
  return requested;
}

// Held-out scenes: synthetic ones are generated past the training indices,
// a directory dataset contributes its trailing scenes.
Dataset held_out(const TrainConfig& config, std::size_t count, std::size_t offset) {
  if (config.dataset == DatasetSource::synthetic) {
    return synthetic_dataset(config, count, static_cast<std::size_t>(config.scenes) + offset);
  }
  auto all = load_kitti_dir(config.dataset_dir, config.grid.range);
  Dataset d;
  const std::size_t n = all.size();
  const std::size_t begin = n > count + offset ? n - count - offset : 0;
  const std::size_t end = n > offset ? n - offset : 0;
  for (std::size_t i = begin; i < end; ++i) {
    d.clouds.push_back(all.clouds[i]);
    d.annotations.push_back(all.annotations[i]);
  }
  if (d.size() == 0) throw ConfigError("dataset has too few scenes for evaluation");
  return d;
}

void add_common(CLI::App& sub, CommonOptions& common, std::map<std::string, std::string>& values,
                std::map<std::string, CLI::Option*>& flags) {
  sub.add_option("--config", common.config_path, "key = value config file");
  sub.add_option("--out", common.out_dir, "output directory");
  sub.add_option("--seed", common.seed, "global seed");
  sub.add_option_function<std::string>(
      "--profile", [&common](const std::string& p) { common.profile = p; }, "built-in profile");
  for (const auto& key : config_keys()) {
    if (key == "seed") continue;
    flags[key] = sub.add_option("--" + key, values[key], "config key " + key)->group("Config keys");
  }
}

void collect_overrides(CommonOptions& common, const std::map<std::string, std::string>& values,
                       const std::map<std::string, CLI::Option*>& flags) {
  for (const auto& key : config_keys()) {
    const auto it = flags.find(key);
    if (it != flags.end() && it->second->count() > 0) common.overrides.emplace_back(key, values.at(key));
  }
}

}  // namespace

TrainConfig resolve_config(const CommonOptions& options, const TrainConfig* base) {
  TrainConfig config = options.profile ? profile(*options.profile) : (base ? *base : profile("kitti_like"));
  if (!options.config_path.empty()) apply_config_text(config, read_text(options.config_path));
  for (const auto& [key, value] : options.overrides) set_config_value(config, key, value);
  if (options.seed) config.seed = *options.seed;
  validate(config);
  return config;
}

void check_compatible(const TrainConfig& a, const TrainConfig& b) {
  const auto& g = a.grid;
  const auto& h = b.grid;
  if (g.nx != h.nx || g.ny != h.ny || g.nz != h.nz || g.downsample != h.downsample) {
    throw ShapeError("checkpoint grid " + std::to_string(g.nx) + "x" + std::to_string(g.ny) + "x" +
                     std::to_string(g.nz) + " does not match requested grid " + std::to_string(h.nx) + "x" +
                     std::to_string(h.ny) + "x" + std::to_string(h.nz));
  }
  if (g.range.min != h.range.min || g.range.max != h.range.max) {
    throw ShapeError("checkpoint grid range does not match the requested range");
  }
  if (a.model.encoder_channels != b.model.encoder_channels || a.model.predictor_depth != b.model.predictor_depth) {
    throw ShapeError("checkpoint model (encoder_channels " + get_config_value(a, "encoder_channels") +
                     ", predictor_depth " + get_config_value(a, "predictor_depth") +
                     ") does not match the requested model (encoder_channels " +
                     get_config_value(b, "encoder_channels") + ", predictor_depth " +
                     get_config_value(b, "predictor_depth") + ")");
  }
}

int cmd_generate(const GenerateOptions& options, std::ostream& out, std::ostream& err) {
  const auto config = resolve_config(options.common);
  if (options.common.out_dir.empty()) throw ConfigError("generate: --out is required");
  const fs::path dir = options.common.out_dir;
  const int count = options.count.value_or(config.scenes);
  if (count < 1) throw ConfigError("generate: count must be >= 1");
  if (fs::exists(dir) && !fs::is_empty(dir) && !options.force) {
    err << "generate: refusing to write into non-empty directory " << dir.string() << " (use --force)\n";
    return kUsage;
  }
  fs::create_directories(dir);
  const auto scene = scene_config(config);
  nlohmann::ordered_json manifest;
  manifest["dataset_seed"] = config.dataset_seed;
  manifest["config"] = format_config(config);
  auto& scenes = manifest["scenes"] = nlohmann::ordered_json::array();
  for (int i = 0; i < count; ++i) {
    const auto seed = scene_seed(config.dataset_seed, static_cast<std::size_t>(i));
    const auto s = generate_scene(seed, scene);
    char stem[32];
    std::snprintf(stem, sizeof stem, "scene_%06d", i);
    write_kitti_bin(dir / (std::string(stem) + ".bin"), s.cloud);
    write_text(dir / (std::string(stem) + ".ann"), format_annotation(s.annotation));
    scenes.push_back({{"name", stem}, {"seed", seed}, {"points", s.cloud.size()}, {"boxes", s.annotation.boxes.size()}});
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << count << " scenes to " << dir.string() << "\n";
  return kOk;
}

int cmd_pretrain(const PretrainOptions& options, std::ostream& out, std::ostream& err) {
  if (options.common.out_dir.empty()) throw ConfigError("pretrain: --out is required");
  std::optional<Checkpoint> resume;
  TrainConfig config;
  if (!options.resume.empty()) {
    resume = load_checkpoint(options.resume);
    config = config_for_checkpoint(options.common, *resume);
    if (format_config(config) != format_config(resume->config)) {
      throw ConfigError("pretrain: --resume continues the checkpoint's own config; drop the overrides");
    }
  } else {
    config = resolve_config(options.common);
  }
  echo_config(options.common, config);
  const auto data = load_dataset(config);
  auto trainer = resume ? Trainer(std::move(*resume), data) : Trainer(config, data);

  RunOptions run;
  run.out_dir = options.common.out_dir;
  run.stop_at = options.stop_at;
  const auto every = static_cast<std::uint64_t>(std::max(options.progress_every, 1));
  run.on_step = [&](const StepRecord& r) {
    if ((r.step + 1) % every == 0 || r.step + 1 == trainer.total()) {
      out << "step " << r.step + 1 << "/" << trainer.total() << " epoch " << r.epoch << std::setprecision(6)
          << " loss " << r.losses.loss_pretrain << " jepa " << r.losses.loss_jepa << " reg " << r.losses.loss_reg
          << " var_ctx " << r.losses.var_context_context_voxels << " lr " << r.losses.learning_rate << "\n";
    }
  };
  try {
    run_training(trainer, run);
  } catch (const TrainingAborted& e) {
    err << "pretrain aborted: " << e.what() << "\n";
    if (e.last()) err << format_log_line(*e.last()) << "\n";
    return kNumerical;
  }
  out << "finished at step " << trainer.current_step() << "; outputs in " << options.common.out_dir << "\n";
  return kOk;
}

int cmd_diagnose(const DiagnoseOptions& options, std::ostream& out, std::ostream& err) {
  if (options.common.out_dir.empty()) throw ConfigError("diagnose: --out is required");
  TrainConfig config;
  ModelState state;
  if (!options.checkpoint.empty()) {
    auto cp = load_checkpoint(options.checkpoint);
    config = config_for_checkpoint(options.common, cp);
    state = std::move(cp.state);
  } else {
    config = resolve_config(options.common);
    state = init_model(config.grid, config.model, config.seed);
  }
  echo_config(options.common, config);
  if (options.eval_scenes < 2) throw ConfigError("diagnose: --eval-scenes must be >= 2");
  const auto eval = held_out(config, static_cast<std::size_t>(options.eval_scenes), 0);

  ReportInputs report;
  report.spectra.push_back({"model", embedding_spectrum(state, eval.clouds)});
  std::vector<SimilarityMap> maps;
  std::vector<BevMaskPlan> plans;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    auto pred = predict_scene(state, eval.clouds[i], config.masking_ratio,
                              stream_seed({kDiagnoseStream, config.seed, i}), config.mask_empty_cells);
    maps.push_back(occupancy_estimate(pred.predicted, state.tokens.empty, pred.plan));
    if (static_cast<int>(i) < options.map_scenes) report.maps.push_back({"scene" + std::to_string(i), maps.back()});
    plans.push_back(std::move(pred.plan));
  }
  std::optional<double> auc;
  try {
    auc = occupancy_auc(maps, plans);
  } catch (const ShapeError&) {
    err << "diagnose: occupancy AUC undefined (masked cells of a single class)\n";
  }

  const auto& spec = report.spectra.front().spectrum;
  const bool collapsed = spec.effective_rank < config.collapse_rank_threshold;
  const auto written = emit_report(report, options.common.out_dir);
  nlohmann::ordered_json summary;
  summary["rows"] = spec.rows;
  summary["embed_dim"] = spec.dim;
  summary["effective_rank"] = spec.effective_rank;
  summary["collapse_rank_threshold"] = config.collapse_rank_threshold;
  summary["collapsed"] = collapsed;
  summary["occupancy_auc"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
  write_text(fs::path(options.common.out_dir) / "summary.json", summary.dump(2) + "\n");

  out << "effective rank " << spec.effective_rank << " over " << spec.rows << " embeddings\n";
  if (auc) out << "occupancy AUC " << *auc << "\n";
  if (collapsed) {
    out << "COLLAPSE: effective rank " << spec.effective_rank << " is below threshold "
        << config.collapse_rank_threshold << "\n";
  }
  for (const auto& w : written.warnings) err << "warning: " << w << "\n";
  return written.warnings.empty() ? kOk : kUsage;
}

int cmd_probe(const ProbeOptions& options, std::ostream& out, std::ostream&) {
  TrainConfig config;
  ModelState state;
  if (!options.checkpoint.empty()) {
    auto cp = load_checkpoint(options.checkpoint);
    config = config_for_checkpoint(options.common, cp);
    state = std::move(cp.state);
  } else {
    config = resolve_config(options.common);
    state = init_model(config.grid, config.model, config.seed);
  }
  echo_config(options.common, config);
  if (options.train_scenes < 1 || options.test_scenes < 1) throw ConfigError("probe: scene counts must be >= 1");
  const auto test = held_out(config, static_cast<std::size_t>(options.test_scenes), 0);
  const auto train = held_out(config, static_cast<std::size_t>(options.train_scenes),
                              static_cast<std::size_t>(options.test_scenes));
  const auto tr = probe_set(state, train.clouds, train.annotations);
  const auto te = probe_set(state, test.clouds, test.annotations);
  adlj::ProbeOptions po;
  po.seed = config.seed;
  const auto result = linear_probe(tr.features, tr.labels, te.features, te.labels, state.embed_dim(), po);
  const auto json = probe_json(result);
  out << json;
  if (!options.common.out_dir.empty()) write_text(fs::path(options.common.out_dir) / "probe.json", json);
  return kOk;
}

int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err) {
  TrainConfig base = profile("tiny");
  const auto config = resolve_config(options.common, options.common.profile ? nullptr : &base);
  echo_config(options.common, config);
  auto results = op_gradient_suite(1e-4);
  const auto model = model_gradient_suite(config, 1e-3);
  results.insert(results.end(), model.begin(), model.end());
  std::size_t failed = 0;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << " rel_err=" << std::setprecision(3) << r.rel_error
        << " tol=" << r.tolerance << " entries=" << r.entries << "\n";
    failed += !r.passed;
  }
  if (failed) {
    err << failed << " of " << results.size() << " gradient checks failed\n";
    return kNumerical;
  }
  out << "all " << results.size() << " gradient checks passed\n";
  return kOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-supervised BEV pre-training toolkit"};
  app.require_subcommand(1);

  GenerateOptions gen;
  PretrainOptions pre;
  DiagnoseOptions diag;
  ProbeOptions probe;
  GradcheckOptions grad;
  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::map<std::string, CLI::Option*>> flags;

  auto* g = app.add_subcommand("generate", "write synthetic scenes as .bin/.ann files");
  add_common(*g, gen.common, values["generate"], flags["generate"]);
  g->add_option("--count", gen.count, "number of scenes (default: config key scenes)");
  g->add_flag("--force", gen.force, "write into a non-empty directory");

  auto* p = app.add_subcommand("pretrain", "run self-supervised pre-training");
  add_common(*p, pre.common, values["pretrain"], flags["pretrain"]);
  p->add_option("--resume", pre.resume, "checkpoint to continue from");
  p->add_option("--stop-at", pre.stop_at, "stop after this many total steps");
  p->add_option("--progress-every", pre.progress_every, "print every N steps");

  auto* d = app.add_subcommand("diagnose", "spectrum and occupancy-estimation report");
  add_common(*d, diag.common, values["diagnose"], flags["diagnose"]);
  d->add_option("--checkpoint", diag.checkpoint, "trained checkpoint (random init when omitted)");
  d->add_option("--eval-scenes", diag.eval_scenes, "held-out scenes to analyse");
  d->add_option("--map-scenes", diag.map_scenes, "similarity maps to render");

  auto* q = app.add_subcommand("probe", "frozen-encoder linear probe for object presence");
  add_common(*q, probe.common, values["probe"], flags["probe"]);
  q->add_option("--checkpoint", probe.checkpoint, "trained checkpoint (random init when omitted)");
  q->add_option("--train-scenes", probe.train_scenes, "probe training scenes");
  q->add_option("--test-scenes", probe.test_scenes, "probe evaluation scenes");

  auto* c = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_common(*c, grad.common, values["gradcheck"], flags["gradcheck"]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) {
      collect_overrides(gen.common, values["generate"], flags["generate"]);
      return cmd_generate(gen, out, err);
    }
    if (p->parsed()) {
      collect_overrides(pre.common, values["pretrain"], flags["pretrain"]);
      return cmd_pretrain(pre, out, err);
    }
    if (d->parsed()) {
      collect_overrides(diag.common, values["diagnose"], flags["diagnose"]);
      return cmd_diagnose(diag, out, err);
    }
    if (q->parsed()) {
      collect_overrides(probe.common, values["probe"], flags["probe"]);
      return cmd_probe(probe, out, err);
    }
    collect_overrides(grad.common, values["gradcheck"], flags["gradcheck"]);
    return cmd_gradcheck(grad, out, err);
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kIo;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace adlj::cli
