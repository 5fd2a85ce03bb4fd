#pragma once

#include <cstdint>

namespace adlj {

/// One-cycle learning rate: linear warm-up from peak/start_div to peak over the
/// first `warmup_fraction` of the run, then cosine annealing to peak/floor_div.
struct OneCycle {
  double lr_peak = 3e-4;
  double warmup_fraction = 0.4;
  double start_div = 10.0;
  double floor_div = 1000.0;

  double at(std::uint64_t step, std::uint64_t total_steps) const;
};

double lr_at(std::uint64_t step, std::uint64_t total_steps, double lr_peak);

/// EMA coefficient rising linearly from eta0 at step 0 to 1 at total_steps.
double ema_eta(std::uint64_t step, std::uint64_t total_steps, double eta0);

}  // namespace adlj
