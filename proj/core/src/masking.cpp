#include "adlj/masking.hpp"

#include <cmath>
#include <string>

#include "adlj/errors.hpp"
#include "adlj/rng.hpp"

namespace adlj {

std::size_t masked_count(std::size_t n, double ratio, bool tie_up) {
  const double target = ratio * static_cast<double>(n);
  const double lower = std::floor(target);
  const double frac = target - lower;
  auto count = static_cast<std::size_t>(lower);
  if (frac > 0.5 || (frac == 0.5 && tie_up)) ++count;
  return std::min(count, n);
}

BevMaskPlan make_plan(const BevOccupancy& occupancy, std::vector<char> masked) {
  if (masked.size() != occupancy.cells.size()) {
    throw ShapeError("mask has " + std::to_string(masked.size()) + " cells, occupancy has " +
                     std::to_string(occupancy.cells.size()));
  }
  BevMaskPlan plan;
  plan.occupancy = occupancy;
  plan.masked = std::move(masked);
  for (std::size_t c = 0; c < plan.masked.size(); ++c) {
    const bool occ = occupancy.cells[c] != 0;
    const bool m = plan.masked[c] != 0;
    if (occ) (m ? plan.masked_occupied : plan.visible_occupied).push_back(c);
    else (m ? plan.masked_empty : plan.visible_empty).push_back(c);
  }
  plan.no_occupied_cells = plan.masked_occupied.empty() && plan.visible_occupied.empty();
  return plan;
}

namespace {

void mask_subset(std::vector<std::size_t> candidates, std::size_t count, Rng& rng, std::vector<char>& masked) {
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
    masked[candidates[i]] = 1;
  }
}

}  // namespace

BevMaskPlan sample_mask(const BevOccupancy& occupancy, double ratio, std::uint64_t seed, bool mask_empty_cells) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("masking ratio must lie strictly between 0 and 1");
  std::vector<std::size_t> occupied, empty;
  for (std::size_t c = 0; c < occupancy.cells.size(); ++c) (occupancy.cells[c] ? occupied : empty).push_back(c);

  std::vector<char> masked(occupancy.cells.size(), 0);
  Rng rng(seed);
  const auto n_occ = masked_count(occupied.size(), ratio, true);
  const auto n_empty = mask_empty_cells ? masked_count(empty.size(), ratio, false) : 0;
  mask_subset(std::move(occupied), n_occ, rng, masked);
  mask_subset(std::move(empty), n_empty, rng, masked);
  return make_plan(occupancy, std::move(masked));
}

PointPartition partition_points(const PointCloud& cloud, const BevMaskPlan& plan, const GridSpec& spec) {
  if (plan.occupancy.h != spec.bev_h() || plan.occupancy.w != spec.bev_w()) {
    throw ShapeError("partition_points: plan grid " + std::to_string(plan.occupancy.h) + "x" +
                     std::to_string(plan.occupancy.w) + " does not match spec BEV grid");
  }
  PointPartition out;
  out.visible.scene_id = cloud.scene_id;
  out.hidden.scene_id = cloud.scene_id;
  for (const auto& p : cloud.points) {
    const auto cell = bev_cell_of_point(p, spec);
    const std::size_t c = cell.h * plan.occupancy.w + cell.w;
    if (!plan.occupancy.cells[c]) {
      throw ContractError("partition_points: point maps to BEV cell (" + std::to_string(cell.h) + ", " +
                          std::to_string(cell.w) + ") which the plan records as empty");
    }
    (plan.masked[c] ? out.hidden : out.visible).points.push_back(p);
  }
  return out;
}

BevMaskPlan build_plan(const PointCloud& cloud, const GridSpec& spec, double ratio, std::uint64_t seed,
                       bool mask_empty_cells) {
  const auto occ = bev_occupancy(voxelize(cloud, spec), spec);
  auto plan = sample_mask(occ, ratio, seed, mask_empty_cells);
  auto parts = partition_points(cloud, plan, spec);
  plan.visible_points = std::move(parts.visible);
  plan.hidden_points = std::move(parts.hidden);
  return plan;
}

BevMaskPlan unmasked_plan(const PointCloud& cloud, const GridSpec& spec) {
  const auto occ = bev_occupancy(voxelize(cloud, spec), spec);
  auto plan = make_plan(occ, std::vector<char>(occ.cells.size(), 0));
  plan.visible_points = cloud;
  plan.hidden_points.scene_id = cloud.scene_id;
  return plan;
}

}  // namespace adlj
