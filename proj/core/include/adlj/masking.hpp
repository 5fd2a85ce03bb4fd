#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "adlj/bev_grid.hpp"
#include "adlj/point_cloud.hpp"

namespace adlj {

/// Per-scene masking decision over the BEV grid. Cell index sets, all sorted
/// ascending and pairwise disjoint:
///   visible_occupied (K)  unmasked non-empty
///   masked_occupied  (Q)  masked non-empty
///   masked_empty     (P)  masked empty
///   visible_empty    (U)  unmasked empty
struct BevMaskPlan {
  BevOccupancy occupancy;
  std::vector<char> masked;  // row-major, same layout as occupancy.cells

  std::vector<std::size_t> visible_occupied;
  std::vector<std::size_t> masked_occupied;
  std::vector<std::size_t> masked_empty;
  std::vector<std::size_t> visible_empty;

  /// Set when the scene has no non-empty cell (masked_occupied is then empty).
  bool no_occupied_cells = false;

  PointCloud visible_points;  // x_c
  PointCloud hidden_points;   // x_t

  std::size_t cells() const { return masked.size(); }
};

/// Number of cells masked out of `n` at `ratio`: nearest integer, with an
/// exact .5 tie going up when `tie_up` (non-empty class) and down otherwise.
std::size_t masked_count(std::size_t n, double ratio, bool tie_up);

/// Derives the K/Q/P/U index sets from occupancy and mask flags.
BevMaskPlan make_plan(const BevOccupancy& occupancy, std::vector<char> masked);

/// Masks exactly masked_count() cells of each class, uniformly without
/// replacement. With mask_empty_cells = false only non-empty cells are masked.
/// Throws ConfigError unless 0 < ratio < 1.
BevMaskPlan sample_mask(const BevOccupancy& occupancy, double ratio, std::uint64_t seed,
                        bool mask_empty_cells = true);

struct PointPartition {
  PointCloud visible;  // points of unmasked cells
  PointCloud hidden;   // points of masked non-empty cells
};

/// Splits the cropped cloud by its BEV cells. Throws ContractError if a point
/// falls into a cell the plan records as empty.
PointPartition partition_points(const PointCloud& cloud, const BevMaskPlan& plan, const GridSpec& spec);

/// Full per-scene masking: voxelize for occupancy, sample, partition, and
/// store the point split on the plan.
BevMaskPlan build_plan(const PointCloud& cloud, const GridSpec& spec, double ratio, std::uint64_t seed,
                       bool mask_empty_cells = true);

/// Plan with nothing masked (evaluation-time view of a scene).
BevMaskPlan unmasked_plan(const PointCloud& cloud, const GridSpec& spec);

}  // namespace adlj
