#include <gtest/gtest.h>

#include <Eigen/SVD>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "adlj/config.hpp"
#include "adlj/diagnostics.hpp"
#include "adlj/errors.hpp"
#include "adlj/report.hpp"
#include "adlj/rng.hpp"
#include "adlj/spectrum.hpp"
#include "adlj/trainer.hpp"
#include "oracles.hpp"

using namespace adlj;

namespace {

std::vector<double> gaussian_rows(std::size_t m, std::size_t e, Rng& rng) {
  std::vector<double> rows(m * e);
  for (auto& v : rows) v = rng.normal();
  return rows;
}

std::vector<double> eigen_singular_values(const std::vector<double>& rows, std::size_t m, std::size_t e) {
  Eigen::MatrixXd x(m, e);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < e; ++j) x(long(i), long(j)) = rows[i * e + j];
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(x);
  const auto& s = svd.singularValues();
  return {s.data(), s.data() + s.size()};
}

}  // namespace

TEST(Spectrum, MatchesBidiagonalizationOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = gaussian_rows(12, 6, rng);
    const auto rep = svd_spectrum(rows, 12, 6);
    const auto ref = eigen_singular_values(rows, 12, 6);
    ASSERT_EQ(rep.singular_values.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(rep.singular_values[i], ref[i], 1e-8);
  }
}

TEST(Spectrum, OrderingAndCumulative) {
  Rng rng(2);
  const auto rows = gaussian_rows(40, 9, rng);
  const auto rep = svd_spectrum(rows, 40, 9);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_GE(rep.singular_values[i], 0.0);
    if (i) EXPECT_LE(rep.singular_values[i], rep.singular_values[i - 1]);
  }
  EXPECT_DOUBLE_EQ(rep.cumulative.back(), 1.0);
  EXPECT_EQ(rep.normalized.front(), 1.0);
}

TEST(Spectrum, RankOneMatrix) {
  Rng rng(3);
  const std::size_t m = 50, e = 8;
  std::vector<double> dir(e), rows(m * e);
  for (auto& d : dir) d = rng.normal();
  for (std::size_t i = 0; i < m; ++i) {
    const double t = rng.normal();
    for (std::size_t j = 0; j < e; ++j) rows[i * e + j] = 3.0 + t * dir[j];
  }
  const auto rep = svd_spectrum(rows, m, e);
  EXPECT_LT(rep.singular_values[1] / rep.singular_values[0], 1e-10);
  EXPECT_NEAR(rep.effective_rank, 1.0, 1e-9);
}

TEST(Spectrum, IsotropicGaussian) {
  Rng rng(4);
  const auto rows = gaussian_rows(5000, 16, rng);
  const auto rep = svd_spectrum(rows, 5000, 16);
  for (double n : rep.normalized) {
    EXPECT_GE(n, 0.9);
    EXPECT_LE(n, 1.0);
  }
  EXPECT_GE(rep.effective_rank, 15.0);
}

TEST(Spectrum, CovarianceReconstruction) {
  Rng rng(5);
  const auto rows = gaussian_rows(30, 5, rng);
  const auto rep = svd_spectrum(rows, 30, 5);
  const auto a = reconstruct_covariance(rep);
  const auto b = covariance(rows, 30, 5);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Spectrum, DegenerateInputs) {
  EXPECT_THROW(svd_spectrum(std::vector<double>(4), 1, 4), ShapeError);
  EXPECT_THROW(svd_spectrum(std::vector<double>(7), 2, 4), ShapeError);
  const auto rep = svd_spectrum(std::vector<double>(12, 2.5), 3, 4);
  EXPECT_EQ(rep.effective_rank, 0.0);
  EXPECT_EQ(rep.cumulative.back(), 1.0);
  EXPECT_NEAR(effective_rank(std::vector<double>{1, 1, 1, 1}), 4.0, 1e-12);
}

TEST(RocAuc, HandCases) {
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<char>{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<char>{0, 0, 1, 1}), 0.0);
  EXPECT_EQ(roc_auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<char>{0, 1, 0, 1}), 0.5);
  EXPECT_EQ(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<char>{0, 0, 1, 1}), 0.75);
  EXPECT_THROW(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<char>{1, 1}), ShapeError);
}

TEST(LinearProbe, ShuffledLabelsAtChance) {
  Rng rng(6);
  const std::size_t dim = 8, n = 2000;
  const auto x = gaussian_rows(n, dim, rng), xt = gaussian_rows(n, dim, rng);
  std::vector<char> y(n), yt(n);
  for (auto& v : y) v = rng.uniform() < 0.3;
  for (auto& v : yt) v = rng.uniform() < 0.3;
  const auto r = linear_probe(x, y, xt, yt, dim);
  EXPECT_NEAR(r.auc, 0.5, 0.05);
}

TEST(LinearProbe, SeparableToyData) {
  Rng rng(7);
  const std::size_t dim = 3, n = 200;
  std::vector<double> x, xt;
  std::vector<char> y, yt;
  for (std::size_t i = 0; i < n; ++i) {
    for (auto* pair : {&x, &xt}) {
      const bool pos = i % 2;
      pair->push_back((pos ? 2.0 : -2.0) + rng.uniform(-0.5, 0.5));
      pair->push_back(rng.normal());
      pair->push_back(rng.normal());
    }
    y.push_back(i % 2);
    yt.push_back(i % 2);
  }
  const auto r = linear_probe(x, y, xt, yt, dim);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.train_auc, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(r.positive_rate, 0.5);
}

TEST(OccupancyEstimate, DefinedOnMaskedCellsOnly) {
  const std::size_t h = 3, w = 3, e = 4;
  Rng rng(8);
  const auto emb = oracle::random_tensor({h, w, e}, rng);
  const auto token = oracle::random_tensor({e}, rng);
  const auto plan = oracle::random_plan(h, w, rng);
  const auto map = occupancy_estimate(emb, token, plan);
  for (std::size_t c = 0; c < h * w; ++c) {
    EXPECT_EQ(map.ignored(c), !plan.masked[c]);
    if (!map.ignored(c)) {
      EXPECT_NEAR(map.values[c], oracle::dot_cos(&emb.data[c * e], token.data.data(), e), 1e-15);
    }
  }
  Tensor scaled = token;
  for (auto& v : scaled.data) v *= 7.5;
  const auto map2 = occupancy_estimate(emb, scaled, plan);
  for (std::size_t c = 0; c < h * w; ++c)
    if (!map.ignored(c)) EXPECT_NEAR(map2.values[c], map.values[c], 1e-14);
}

TEST(OccupancyEstimate, MaskTokenEqualToEmptyTokenGivesConstantMap) {
  auto cfg = profile("tiny");
  auto state = init_model(cfg.grid, cfg.model, 3);
  state.tokens.mask = state.tokens.empty;
  const auto data = synthetic_dataset(cfg, 1);
  std::vector<BevMaskPlan> plans{build_plan(data.clouds[0], cfg.grid, 0.5, 11)};
  const auto batch = make_batch(plans, data.clouds, cfg.grid, TargetInput::hidden_only);
  ad::Tape tape;
  const auto z = encode_bev(bind(tape, state.context, false), tape.constant(batch.context_features));
  const auto t = apply_tokens(z, z, batch.plans, bind(tape, state.tokens, false), state.config);
  const auto map = occupancy_estimate(t.context.value(), state.tokens.empty, batch.plans[0]);
  for (std::size_t c = 0; c < map.values.size(); ++c)
    if (!map.ignored(c)) EXPECT_NEAR(map.values[c], 1.0, 1e-12);
}

TEST(OccupancyAuc, PositivesAreMaskedEmptyCells) {
  BevOccupancy occ{1, 4, {1, 1, 0, 0}};
  const auto plan = make_plan(occ, {1, 1, 1, 1});
  SimilarityMap map{1, 4, {0.1, 0.2, 0.9, 0.8}};
  EXPECT_EQ(occupancy_auc(std::vector{map}, std::vector{plan}), 1.0);
}

TEST(ProbeLabels, OnlyNonEmptyCellsInRowOrder) {
  auto cfg = profile("tiny");
  const auto data = synthetic_dataset(cfg, 3);
  auto state = init_model(cfg.grid, cfg.model, 1);
  const auto set = probe_set(state, data.clouds, data.annotations);
  const auto enc = encode_scenes(state, data.clouds);
  EXPECT_EQ(set.features.size(), set.labels.size() * state.embed_dim());
  std::size_t expected = 0;
  for (const auto& p : enc.plans) expected += p.visible_occupied.size();
  EXPECT_EQ(set.labels.size(), expected);
}

TEST(Report, CsvRoundTrip) {
  Rng rng(9);
  std::vector<NamedSpectrum> spectra;
  for (const char* name : {"default", "no_reg"}) {
    const auto rows = gaussian_rows(20, 5, rng);
    spectra.push_back({name, svd_spectrum(rows, 20, 5)});
  }
  const auto back = parse_spectrum_csv(spectrum_csv(spectra));
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].name, spectra[i].name);
    EXPECT_EQ(back[i].spectrum.singular_values, spectra[i].spectrum.singular_values);
    EXPECT_EQ(back[i].spectrum.normalized, spectra[i].spectrum.normalized);
    EXPECT_EQ(back[i].spectrum.cumulative, spectra[i].spectrum.cumulative);
  }
  SimilarityMap map{2, 3, {0.25, SimilarityMap::kIgnored, -0.5, 1.0 / 3.0, SimilarityMap::kIgnored, 0.0}};
  const auto m2 = parse_similarity_csv(similarity_csv(map));
  EXPECT_EQ(m2.h, 2u);
  EXPECT_EQ(m2.w, 3u);
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(m2.ignored(c), map.ignored(c));
    if (!map.ignored(c)) EXPECT_EQ(m2.values[c], map.values[c]);
  }
}

TEST(Report, SvgDeterministicAndEmptyWarning) {
  Rng rng(10);
  const auto rows = gaussian_rows(20, 4, rng);
  const std::vector<NamedSpectrum> spectra{{"a", svd_spectrum(rows, 20, 4)}};
  EXPECT_EQ(spectrum_svg(spectra, false), spectrum_svg(spectra, false));
  SimilarityMap map{2, 2, {0.1, SimilarityMap::kIgnored, 0.9, -0.3}};
  EXPECT_EQ(similarity_svg(map), similarity_svg(map));
  EXPECT_NE(similarity_svg(map).find("#ffffff"), std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "adlj_test_report";
  std::filesystem::remove_all(dir);
  const auto out = emit_report({}, dir);
  EXPECT_FALSE(out.warnings.empty());
  EXPECT_FALSE(std::filesystem::exists(dir / "spectrum.csv"));
  const auto full = emit_report({spectra, {{"s0", map}}, ProbeResult{0.7, 0.8, 0.75, 10, 5, 0.2}}, dir);
  EXPECT_TRUE(full.warnings.empty());
  for (const char* f : {"spectrum.csv", "spectrum_normalized.svg", "spectrum_cumulative.svg", "similarity_s0.csv",
                        "similarity_s0.svg", "probe.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::filesystem::remove_all(dir);
}
