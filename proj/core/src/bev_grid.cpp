#include "adlj/bev_grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

#include "adlj/errors.hpp"

namespace adlj {

std::array<double, 3> GridSpec::voxel_size() const {
  return {(range.max[0] - range.min[0]) / static_cast<double>(nx),
          (range.max[1] - range.min[1]) / static_cast<double>(ny),
          (range.max[2] - range.min[2]) / static_cast<double>(nz)};
}

void GridSpec::validate() const {
  if (downsample == 0) throw ConfigError("grid downsample must be positive");
  const std::size_t ext[3] = {nx, ny, nz};
  const char* names[3] = {"X", "Y", "Z"};
  for (int a = 0; a < 3; ++a) {
    if (ext[a] == 0 || ext[a] % downsample != 0) {
      throw ConfigError(std::string("grid extent ") + names[a] + " = " + std::to_string(ext[a]) +
                        " is not a positive multiple of downsample " + std::to_string(downsample));
    }
    if (!(range.max[a] > range.min[a])) throw ConfigError(std::string("grid range on axis ") + names[a] + " is empty");
  }
}

std::size_t BevOccupancy::non_empty() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), char{1}));
}

namespace {

std::array<std::size_t, 3> voxel_coords(const Point& p, const GridSpec& spec) {
  if (!spec.range.contains(p)) {
    throw ContractError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ", " + std::to_string(p.z) +
                        ") lies outside the grid range; crop before voxelizing");
  }
  const auto vs = spec.voxel_size();
  const double c[3] = {p.x, p.y, p.z};
  const std::size_t ext[3] = {spec.nx, spec.ny, spec.nz};
  std::array<std::size_t, 3> idx{};
  for (int a = 0; a < 3; ++a) {
    const auto i = static_cast<std::size_t>(std::floor((c[a] - spec.range.min[a]) / vs[a]));
    idx[a] = std::min(i, ext[a] - 1);  // guards rounding just below max
  }
  return idx;
}

}  // namespace

std::size_t voxel_index(const Point& p, const GridSpec& spec) {
  const auto v = voxel_coords(p, spec);
  return (v[0] * spec.ny + v[1]) * spec.nz + v[2];
}

VoxelFeatures voxelize(const PointCloud& cloud, const GridSpec& spec) {
  const std::size_t nvox = spec.voxel_count();
  VoxelFeatures f;
  f.tensor = Tensor({kVoxelChannels, spec.nx, spec.ny, spec.nz});
  f.counts.assign(nvox, 0);

  const auto n = cloud.points.size();
  std::vector<std::size_t> vox(n);
  for (std::size_t i = 0; i < n; ++i) vox[i] = voxel_index(cloud.points[i], spec);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = cloud.points[a];
    const auto& pb = cloud.points[b];
    return std::tie(vox[a], pa.x, pa.y, pa.z, pa.intensity) < std::tie(vox[b], pb.x, pb.y, pb.z, pb.intensity);
  });

  const double vz = spec.voxel_size()[2];
  std::vector<double> sum_intensity(nvox, 0.0), sum_relz(nvox, 0.0);
  for (auto i : order) {
    const auto v = vox[i];
    const auto& p = cloud.points[i];
    const std::size_t iz = v % spec.nz;
    const double rel = (p.z - (spec.range.min[2] + static_cast<double>(iz) * vz)) / vz;
    ++f.counts[v];
    sum_intensity[v] += p.intensity;
    sum_relz[v] += std::clamp(rel, 0.0, 1.0);
  }

  auto& d = f.tensor.data;
  for (std::size_t v = 0; v < nvox; ++v) {
    const auto c = f.counts[v];
    if (c == 0) continue;
    const double cnt = static_cast<double>(c);
    d[0 * nvox + v] = static_cast<double>(std::min<std::size_t>(c, kCountSaturation)) / kCountSaturation;
    d[1 * nvox + v] = sum_intensity[v] / cnt;
    d[2 * nvox + v] = sum_relz[v] / cnt;
    d[3 * nvox + v] = 1.0;
  }
  return f;
}

BevOccupancy bev_occupancy(const VoxelFeatures& features, const GridSpec& spec) {
  if (features.counts.size() != spec.voxel_count()) {
    throw ShapeError("bev_occupancy: feature grid has " + std::to_string(features.counts.size()) +
                     " voxels, spec expects " + std::to_string(spec.voxel_count()));
  }
  BevOccupancy occ;
  occ.h = spec.bev_h();
  occ.w = spec.bev_w();
  occ.cells.assign(occ.h * occ.w, 0);
  const std::size_t s = spec.downsample;
  for (std::size_t x = 0; x < spec.nx; ++x) {
    for (std::size_t y = 0; y < spec.ny; ++y) {
      const std::size_t base = (x * spec.ny + y) * spec.nz;
      for (std::size_t z = 0; z < spec.nz; ++z) {
        if (features.counts[base + z] > 0) {
          occ.cells[(x / s) * occ.w + y / s] = 1;
          break;
        }
      }
    }
  }
  return occ;
}

BevCell bev_cell_of_point(const Point& p, const GridSpec& spec) {
  const auto v = voxel_coords(p, spec);
  return {v[0] / spec.downsample, v[1] / spec.downsample};
}

}  // namespace adlj
