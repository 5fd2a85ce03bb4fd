#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "adlj/config.hpp"

namespace adlj::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

/// Flags shared by every subcommand. Resolution order: profile, config file, flags.
struct CommonOptions {
  std::optional<std::string> profile;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::pair<std::string, std::string>> overrides;  // --<key> value

  bool customized() const { return profile || !config_path.empty() || seed || !overrides.empty(); }
};

/// Applies the options on top of `base` (profile kitti_like when none is given).
TrainConfig resolve_config(const CommonOptions& options, const TrainConfig* base = nullptr);

/// Throws ShapeError when the two configs describe different model tensors.
void check_compatible(const TrainConfig& checkpoint_config, const TrainConfig& requested);

struct GenerateOptions {
  CommonOptions common;
  std::optional<int> count;
  bool force = false;
};

struct PretrainOptions {
  CommonOptions common;
  std::string resume;
  std::uint64_t stop_at = 0;
  int progress_every = 50;
};

struct DiagnoseOptions {
  CommonOptions common;
  std::string checkpoint;
  int eval_scenes = 32;
  int map_scenes = 4;
};

struct ProbeOptions {
  CommonOptions common;
  std::string checkpoint;
  int train_scenes = 64;
  int test_scenes = 32;
};

struct GradcheckOptions {
  CommonOptions common;
};

int cmd_generate(const GenerateOptions& options, std::ostream& out, std::ostream& err);
int cmd_pretrain(const PretrainOptions& options, std::ostream& out, std::ostream& err);
int cmd_diagnose(const DiagnoseOptions& options, std::ostream& out, std::ostream& err);
int cmd_probe(const ProbeOptions& options, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckOptions& options, std::ostream& out, std::ostream& err);

/// Parses argv and dispatches; maps exceptions to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace adlj::cli
