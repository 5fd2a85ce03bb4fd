#include "adlj/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace adlj {

double OneCycle::at(std::uint64_t step, std::uint64_t total_steps) const {
  const double lr_start = lr_peak / start_div;
  const double lr_floor = lr_peak / floor_div;
  if (total_steps == 0) return lr_start;
  if (step >= total_steps) return lr_floor;
  const double t = static_cast<double>(step);
  const double warm = warmup_fraction * static_cast<double>(total_steps);
  if (t < warm) return lr_start + (lr_peak - lr_start) * (t / warm);
  const double progress = (t - warm) / (static_cast<double>(total_steps) - warm);
  return lr_peak - (lr_peak - lr_floor) * 0.5 * (1.0 - std::cos(std::numbers::pi * progress));
}

double lr_at(std::uint64_t step, std::uint64_t total_steps, double lr_peak) {
  return OneCycle{lr_peak}.at(step, total_steps);
}

double ema_eta(std::uint64_t step, std::uint64_t total_steps, double eta0) {
  if (total_steps == 0) return eta0;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return eta0 + (1.0 - eta0) * frac;
}

}  // namespace adlj
