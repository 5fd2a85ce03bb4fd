#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "adlj/point_cloud.hpp"
#include "adlj/tensor.hpp"

namespace adlj {

/// Voxel lattice over a metric range plus the encoder's downsample factor.
/// BEV cell (h, w) covers voxel columns [h*s, (h+1)*s) x [w*s, (w+1)*s) x [0, Z).
struct GridSpec {
  std::size_t nx = 64, ny = 64, nz = 16;
  Range3 range;
  std::size_t downsample = 8;

  std::array<double, 3> voxel_size() const;
  std::size_t bev_h() const { return nx / downsample; }
  std::size_t bev_w() const { return ny / downsample; }
  std::size_t bev_d() const { return nz / downsample; }
  std::size_t bev_cells() const { return bev_h() * bev_w(); }
  std::size_t voxel_count() const { return nx * ny * nz; }

  /// Throws ConfigError unless every extent is a positive multiple of downsample.
  void validate() const;
};

inline constexpr std::size_t kVoxelChannels = 4;
inline constexpr std::size_t kCountSaturation = 16;

/// Dense per-voxel encoder input, channels:
///   0 min(count, 16) / 16, 1 mean intensity, 2 mean relative z in voxel, 3 occupied flag.
struct VoxelFeatures {
  Tensor tensor;                       // [4, X, Y, Z]
  std::vector<std::uint32_t> counts;   // raw point count per voxel, X*Y*Z

  bool occupied(std::size_t voxel) const { return counts[voxel] > 0; }
};

struct BevOccupancy {
  std::size_t h = 0, w = 0;
  std::vector<char> cells;  // row-major h*W + w; 1 = non-empty

  bool at(std::size_t row, std::size_t col) const { return cells[row * w + col] != 0; }
  std::size_t non_empty() const;
  std::size_t empty() const { return cells.size() - non_empty(); }
};

/// Flat voxel index of a point; throws ContractError when outside the range.
std::size_t voxel_index(const Point& p, const GridSpec& spec);

/// Statistics are accumulated in (voxel, x, y, z, intensity) order, so the
/// result is bit-identical under any permutation of the input points.
VoxelFeatures voxelize(const PointCloud& cloud, const GridSpec& spec);

BevOccupancy bev_occupancy(const VoxelFeatures& features, const GridSpec& spec);

struct BevCell {
  std::size_t h = 0, w = 0;
  friend bool operator==(const BevCell&, const BevCell&) = default;
};

BevCell bev_cell_of_point(const Point& p, const GridSpec& spec);

}  // namespace adlj
