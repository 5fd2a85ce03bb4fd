#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "adlj/autodiff.hpp"
#include "adlj/config.hpp"

namespace adlj {

struct GradCheckOptions {
  double step = 1e-5;            // central-difference half width
  std::size_t max_entries = 48;  // probed entries per tensor (all when smaller)
  std::uint64_t seed = 7;
};

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// over the probed entries of one input tensor.
struct GradCheckResult {
  std::string name;
  double rel_error = 0;
  double tolerance = 0;
  std::size_t entries = 0;
  bool passed = false;
};

/// Builds a scalar loss from the given inputs on `tape`.
using LossBuilder = std::function<ad::Var(ad::Tape&, std::span<const ad::Var>)>;

/// One result per input tensor, named `name` or `name[i]` when there are several.
std::vector<GradCheckResult> check_gradient(const std::string& name, std::vector<Tensor> inputs,
                                            const LossBuilder& build, double tolerance,
                                            const GradCheckOptions& options = {});

/// Every differentiable op and loss term on small random inputs.
std::vector<GradCheckResult> op_gradient_suite(double tolerance = 1e-4, const GradCheckOptions& options = {});

/// The full objective of `config` on a small synthetic batch, one result per
/// trainable tensor.
std::vector<GradCheckResult> model_gradient_suite(const TrainConfig& config, double tolerance = 1e-3,
                                                  const GradCheckOptions& options = {});

}  // namespace adlj
