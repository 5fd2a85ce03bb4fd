#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "adlj/bev_grid.hpp"
#include "adlj/errors.hpp"
#include "adlj/masking.hpp"
#include "adlj/rng.hpp"

using namespace adlj;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.nx = 32;
  g.ny = 24;
  g.nz = 8;
  g.range.min = {-8, -6, -2};
  g.range.max = {8, 6, 2};
  return g;
}

PointCloud random_cloud(const GridSpec& g, Rng& rng, std::size_t n, double spread = 1.0) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    Point p;
    double* v[3] = {&p.x, &p.y, &p.z};
    for (int a = 0; a < 3; ++a) {
      const double mid = (g.range.min[a] + g.range.max[a]) / 2, half = (g.range.max[a] - g.range.min[a]) / 2;
      *v[a] = mid + rng.uniform(-half, half) * spread;
    }
    p.intensity = rng.uniform();
    c.points.push_back(p);
  }
  return c;
}

}  // namespace

TEST(GridSpec, ValidatesDivisibility) {
  GridSpec g = small_grid();
  EXPECT_NO_THROW(g.validate());
  EXPECT_EQ(g.bev_h() * g.downsample, g.nx);
  EXPECT_EQ(g.bev_d() * g.downsample, g.nz);
  g.ny = 20;
  EXPECT_THROW(g.validate(), ConfigError);
}

TEST(Voxelize, SinglePointAtCenter) {
  GridSpec g = small_grid();
  PointCloud c;
  c.points.push_back({0, 0, 0, 0.5});
  const auto f = voxelize(c, g);
  EXPECT_EQ(std::count_if(f.counts.begin(), f.counts.end(), [](auto n) { return n > 0; }), 1);
  const auto v = voxel_index(c.points[0], g);
  EXPECT_EQ(f.counts[v], 1u);
  EXPECT_EQ(f.tensor.data[1 * g.voxel_count() + v], 0.5);
  EXPECT_EQ(f.tensor.data[3 * g.voxel_count() + v], 1.0);
}

TEST(Voxelize, EmptyCloudIsAllZero) {
  const auto f = voxelize(PointCloud{}, small_grid());
  EXPECT_TRUE(std::all_of(f.tensor.data.begin(), f.tensor.data.end(), [](double v) { return v == 0.0; }));
}

TEST(Voxelize, CountsMatchBucketingOracle) {
  const GridSpec g = small_grid();
  const auto vs = g.voxel_size();
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cloud = random_cloud(g, rng, 2000, trial % 2 ? 0.3 : 1.0);
    std::map<std::size_t, std::uint32_t> buckets;
    for (const auto& p : cloud.points) {
      const auto ix = static_cast<std::size_t>((p.x - g.range.min[0]) / vs[0]);
      const auto iy = static_cast<std::size_t>((p.y - g.range.min[1]) / vs[1]);
      const auto iz = static_cast<std::size_t>((p.z - g.range.min[2]) / vs[2]);
      ++buckets[(ix * g.ny + iy) * g.nz + iz];
    }
    const auto f = voxelize(cloud, g);
    for (std::size_t v = 0; v < g.voxel_count(); ++v) {
      const auto it = buckets.find(v);
      ASSERT_EQ(f.counts[v], it == buckets.end() ? 0u : it->second) << "voxel " << v;
    }
  }
}

TEST(Voxelize, ChannelInvariants) {
  const GridSpec g = small_grid();
  Rng rng(2);
  const auto f = voxelize(random_cloud(g, rng, 3000, 0.5), g);
  const std::size_t n = g.voxel_count();
  for (std::size_t v = 0; v < n; ++v) {
    const double flag = f.tensor.data[3 * n + v];
    EXPECT_TRUE(flag == 0.0 || flag == 1.0);
    if (f.counts[v] == 0) {
      for (std::size_t c = 0; c < kVoxelChannels; ++c) EXPECT_EQ(f.tensor.data[c * n + v], 0.0);
    } else {
      EXPECT_EQ(f.tensor.data[v], std::min<double>(f.counts[v], 16) / 16.0);
      EXPECT_GE(f.tensor.data[2 * n + v], 0.0);
      EXPECT_LE(f.tensor.data[2 * n + v], 1.0);
    }
  }
}

TEST(Voxelize, PermutationInvariantBitExact) {
  const GridSpec g = small_grid();
  Rng rng(17);
  auto cloud = random_cloud(g, rng, 1500, 0.2);
  const auto a = voxelize(cloud, g);
  std::reverse(cloud.points.begin(), cloud.points.end());
  std::swap(cloud.points[3], cloud.points[700]);
  const auto b = voxelize(cloud, g);
  EXPECT_EQ(a.tensor.data, b.tensor.data);
}

TEST(Voxelize, PointOutsideRangeIsContractError) {
  PointCloud c;
  c.points.push_back({100, 0, 0, 0});
  EXPECT_THROW(voxelize(c, small_grid()), ContractError);
}

TEST(BevOccupancy, SingleCornerVoxel) {
  const GridSpec g = small_grid();
  PointCloud c;
  c.points.push_back({g.range.min[0], g.range.min[1], g.range.min[2], 0});
  const auto occ = bev_occupancy(voxelize(c, g), g);
  EXPECT_EQ(occ.non_empty(), 1u);
  EXPECT_TRUE(occ.at(0, 0));
  EXPECT_EQ(occ.non_empty() + occ.empty(), g.bev_cells());
}

TEST(BevOccupancy, FullGridAllTrue) {
  const GridSpec g = small_grid();
  VoxelFeatures f;
  f.counts.assign(g.voxel_count(), 1);
  const auto occ = bev_occupancy(f, g);
  EXPECT_EQ(occ.non_empty(), g.bev_cells());
}

TEST(BevOccupancy, MatchesColumnScanOracle) {
  const GridSpec g = small_grid();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    VoxelFeatures f;
    f.counts.assign(g.voxel_count(), 0);
    const double density = rng.uniform(0.0005, 0.01);
    for (auto& c : f.counts) c = rng.uniform() < density;
    const auto occ = bev_occupancy(f, g);
    const std::size_t s = g.downsample;
    for (std::size_t h = 0; h < g.bev_h(); ++h)
      for (std::size_t w = 0; w < g.bev_w(); ++w) {
        bool any = false;
        for (std::size_t x = h * s; x < (h + 1) * s; ++x)
          for (std::size_t y = w * s; y < (w + 1) * s; ++y)
            for (std::size_t z = 0; z < g.nz; ++z) any = any || f.counts[(x * g.ny + y) * g.nz + z] > 0;
        ASSERT_EQ(occ.at(h, w), any);
      }
  }
}

TEST(BevCellOfPoint, CornerCases) {
  const GridSpec g = small_grid();
  EXPECT_EQ(bev_cell_of_point({g.range.min[0], g.range.min[1], 0, 0}, g), (BevCell{0, 0}));
  const auto vs = g.voxel_size();
  const Point last{g.range.max[0] - vs[0] / 2, g.range.max[1] - vs[1] / 2, 0, 0};
  EXPECT_EQ(bev_cell_of_point(last, g), (BevCell{g.bev_h() - 1, g.bev_w() - 1}));
}

TEST(BevCellOfPoint, ConsistentWithOccupancy) {
  const GridSpec g = small_grid();
  Rng rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cloud = random_cloud(g, rng, 60);
    std::vector<char> cells(g.bev_cells(), 0);
    for (const auto& p : cloud.points) {
      const auto c = bev_cell_of_point(p, g);
      cells[c.h * g.bev_w() + c.w] = 1;
    }
    EXPECT_EQ(cells, bev_occupancy(voxelize(cloud, g), g).cells);
  }
}

TEST(Masking, MaskedCountRounding) {
  EXPECT_EQ(masked_count(10, 0.5, true), 5u);
  EXPECT_EQ(masked_count(90, 0.5, false), 45u);
  EXPECT_EQ(masked_count(5, 0.5, true), 3u);
  EXPECT_EQ(masked_count(5, 0.5, false), 2u);
  EXPECT_EQ(masked_count(7, 0.25, true), 2u);
  EXPECT_EQ(masked_count(0, 0.75, true), 0u);
}

TEST(Masking, TenOccupiedNinetyEmpty) {
  BevOccupancy occ{10, 10, std::vector<char>(100, 0)};
  for (int i = 0; i < 10; ++i) occ.cells[static_cast<std::size_t>(i * 7)] = 1;
  const auto plan = sample_mask(occ, 0.5, 123);
  EXPECT_EQ(plan.masked_occupied.size(), 5u);
  EXPECT_EQ(plan.masked_empty.size(), 45u);
}

TEST(Masking, IndexSetsPartitionTheGrid) {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    BevOccupancy occ{8, 8, std::vector<char>(64)};
    for (auto& c : occ.cells) c = rng.uniform() < 0.3;
    const auto plan = sample_mask(occ, 0.5, rng.next_u64());
    std::vector<int> seen(64, 0);
    for (const auto* set : {&plan.visible_occupied, &plan.masked_occupied, &plan.masked_empty, &plan.visible_empty}) {
      EXPECT_TRUE(std::is_sorted(set->begin(), set->end()));
      for (auto c : *set) ++seen[c];
    }
    for (int s : seen) EXPECT_EQ(s, 1);
    for (auto c : plan.masked_occupied) EXPECT_TRUE(occ.cells[c] && plan.masked[c]);
    for (auto c : plan.visible_occupied) EXPECT_TRUE(occ.cells[c] && !plan.masked[c]);
    for (auto c : plan.masked_empty) EXPECT_TRUE(!occ.cells[c] && plan.masked[c]);
    for (auto c : plan.visible_empty) EXPECT_TRUE(!occ.cells[c] && !plan.masked[c]);
  }
}

TEST(Masking, DeterministicForSeed) {
  BevOccupancy occ{8, 8, std::vector<char>(64)};
  for (std::size_t i = 0; i < 64; i += 3) occ.cells[i] = 1;
  EXPECT_EQ(sample_mask(occ, 0.5, 9).masked, sample_mask(occ, 0.5, 9).masked);
  EXPECT_NE(sample_mask(occ, 0.5, 9).masked, sample_mask(occ, 0.5, 10).masked);
}

TEST(Masking, RatioOutOfRangeIsConfigError) {
  BevOccupancy occ{2, 2, std::vector<char>(4, 1)};
  EXPECT_THROW(sample_mask(occ, 0.0, 1), ConfigError);
  EXPECT_THROW(sample_mask(occ, 1.0, 1), ConfigError);
}

TEST(Masking, EmptyCellsCanBeLeftUnmasked) {
  BevOccupancy occ{4, 4, std::vector<char>(16, 0)};
  occ.cells[0] = occ.cells[5] = 1;
  const auto plan = sample_mask(occ, 0.5, 3, false);
  EXPECT_TRUE(plan.masked_empty.empty());
  EXPECT_EQ(plan.masked_occupied.size(), 1u);
}

TEST(Masking, MonteCarloFrequency) {
  BevOccupancy occ{8, 8, std::vector<char>(64, 0)};
  for (std::size_t i = 0; i < 64; i += 4) occ.cells[i] = 1;  // 16 occupied, 48 empty
  std::vector<int> hits(64, 0);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto plan = sample_mask(occ, 0.5, stream_seed({77, static_cast<std::uint64_t>(d)}));
    for (std::size_t c = 0; c < 64; ++c) hits[c] += plan.masked[c];
  }
  for (std::size_t c = 0; c < 64; ++c) EXPECT_NEAR(hits[c] / double(draws), 0.5, 0.02) << "cell " << c;
}

TEST(Partition, NothingMaskedKeepsEverythingVisible) {
  const GridSpec g = small_grid();
  Rng rng(1);
  const auto cloud = random_cloud(g, rng, 400);
  const auto plan = unmasked_plan(cloud, g);
  EXPECT_EQ(plan.visible_points.points, cloud.points);
  EXPECT_TRUE(plan.hidden_points.empty());
}

TEST(Partition, AllOccupiedMaskedHidesEverything) {
  const GridSpec g = small_grid();
  Rng rng(2);
  const auto cloud = random_cloud(g, rng, 400);
  const auto occ = bev_occupancy(voxelize(cloud, g), g);
  const auto plan = make_plan(occ, occ.cells);
  const auto parts = partition_points(cloud, plan, g);
  EXPECT_TRUE(parts.visible.empty());
  EXPECT_EQ(parts.hidden.points, cloud.points);
}

TEST(Partition, MembershipOracle) {
  const GridSpec g = small_grid();
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cloud = random_cloud(g, rng, 300, 0.6);
    const auto plan = build_plan(cloud, g, 0.5, rng.next_u64());
    EXPECT_EQ(plan.visible_points.size() + plan.hidden_points.size(), cloud.size());
    const std::set<std::size_t> q(plan.masked_occupied.begin(), plan.masked_occupied.end());
    for (const auto& p : plan.hidden_points.points) {
      const auto c = bev_cell_of_point(p, g);
      EXPECT_TRUE(q.count(c.h * g.bev_w() + c.w));
    }
    for (const auto& p : plan.visible_points.points) {
      const auto c = bev_cell_of_point(p, g);
      EXPECT_FALSE(plan.masked[c.h * g.bev_w() + c.w]);
    }
    // Every input point appears exactly once across the two sides.
    std::multiset<std::tuple<double, double, double, double>> all, split;
    for (const auto& p : cloud.points) all.insert({p.x, p.y, p.z, p.intensity});
    for (const auto* side : {&plan.visible_points, &plan.hidden_points})
      for (const auto& p : side->points) split.insert({p.x, p.y, p.z, p.intensity});
    EXPECT_EQ(all, split);
  }
}

TEST(Partition, PointInEmptyCellIsContractError) {
  const GridSpec g = small_grid();
  PointCloud c;
  c.points.push_back({0, 0, 0, 0});
  BevOccupancy occ{g.bev_h(), g.bev_w(), std::vector<char>(g.bev_cells(), 0)};
  EXPECT_THROW(partition_points(c, make_plan(occ, std::vector<char>(g.bev_cells(), 0)), g), ContractError);
}
