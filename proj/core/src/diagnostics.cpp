#include "adlj/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adlj/adam.hpp"
#include "adlj/errors.hpp"
#include "adlj/rng.hpp"

namespace adlj {

SimilarityMap occupancy_estimate(const Tensor& embeddings, const Tensor& empty_token, const BevMaskPlan& plan) {
  const auto& s = embeddings.shape;
  const bool batched = s.size() == 4;
  if (!(s.size() == 3 || (batched && s[0] == 1))) {
    throw ShapeError("occupancy_estimate: expected [H,W,E] or [1,H,W,E], got " + shape_str(s));
  }
  const std::size_t h = s[batched ? 1 : 0], w = s[batched ? 2 : 1], e = s[batched ? 3 : 2];
  if (empty_token.numel() != e) throw ShapeError("occupancy_estimate: token length does not match axis E");
  if (plan.occupancy.h != h || plan.occupancy.w != w) throw ShapeError("occupancy_estimate: plan grid mismatch");

  double tn = 0;
  for (double v : empty_token.data) tn += v * v;
  tn = std::sqrt(tn);

  SimilarityMap map;
  map.h = h;
  map.w = w;
  map.values.assign(h * w, SimilarityMap::kIgnored);
  for (const auto* set : {&plan.masked_empty, &plan.masked_occupied}) {
    for (auto cell : *set) {
      const double* x = &embeddings.data[cell * e];
      double dot = 0, xn = 0;
      for (std::size_t k = 0; k < e; ++k) {
        dot += x[k] * empty_token.data[k];
        xn += x[k] * x[k];
      }
      map.values[cell] = dot / std::max(std::sqrt(xn) * tn, ad::kNormEps);
    }
  }
  return map;
}

EncodedScenes encode_scenes(ModelState& state, std::span<const PointCloud> clouds, std::size_t chunk) {
  if (clouds.empty()) throw ShapeError("encode_scenes: no scenes");
  chunk = std::max<std::size_t>(chunk, 1);
  EncodedScenes out;
  const std::size_t h = state.grid.bev_h(), w = state.grid.bev_w(), e = state.embed_dim();
  out.embeddings = Tensor({clouds.size(), h, w, e});
  for (std::size_t first = 0; first < clouds.size(); first += chunk) {
    const std::size_t last = std::min(clouds.size(), first + chunk);
    std::vector<BevMaskPlan> plans;
    std::vector<VoxelFeatures> feats;
    for (std::size_t i = first; i < last; ++i) {
      plans.push_back(unmasked_plan(clouds[i], state.grid));
      feats.push_back(voxelize(clouds[i], state.grid));
    }
    ad::Tape tape;
    const auto enc = bind(tape, state.context, false);
    const auto tok = bind(tape, state.tokens, false);
    const auto z = encode_bev(enc, tape.constant(stack_features(feats)));
    const auto t = apply_tokens(z, z, plans, tok, state.config);
    const auto& v = t.context.value().data;
    std::copy(v.begin(), v.end(), out.embeddings.data.begin() + static_cast<std::ptrdiff_t>(first * h * w * e));
    for (auto& p : plans) out.plans.push_back(std::move(p));
  }
  return out;
}

std::vector<double> non_empty_rows(const EncodedScenes& scenes) {
  const auto& s = scenes.embeddings.shape;
  const std::size_t cells = s[1] * s[2], e = s[3];
  std::vector<double> rows;
  for (std::size_t n = 0; n < scenes.plans.size(); ++n) {
    for (auto cell : scenes.plans[n].visible_occupied) {
      const auto* x = &scenes.embeddings.data[(n * cells + cell) * e];
      rows.insert(rows.end(), x, x + e);
    }
  }
  return rows;
}

MaskedPrediction predict_scene(ModelState& state, const PointCloud& cloud, double ratio, std::uint64_t seed,
                               bool mask_empty_cells) {
  std::vector<BevMaskPlan> plans{build_plan(cloud, state.grid, ratio, seed, mask_empty_cells)};
  const std::vector<PointCloud> full{cloud};
  const auto batch = make_batch(std::move(plans), full, state.grid, state.config.target_input);
  ad::Tape tape;
  const auto enc = bind(tape, state.context, false);
  const auto pred = bind(tape, state.predictor, false);
  const auto tok = bind(tape, state.tokens, false);
  const auto z = encode_bev(enc, tape.constant(batch.context_features));
  const auto t = apply_tokens(z, z, batch.plans, tok, state.config);
  return {predict(pred, t.context).value(), batch.plans.front()};
}

double roc_auc(std::span<const double> scores, std::span<const char> labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]]) {
        rank_sum += avg;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw ShapeError("roc_auc: undefined for a single-class label set");
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1) / 2) / (p * q);
}

double occupancy_auc(std::span<const SimilarityMap> maps, std::span<const BevMaskPlan> plans) {
  if (maps.size() != plans.size()) throw ShapeError("occupancy_auc: one plan per map required");
  std::vector<double> scores;
  std::vector<char> empty;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    for (auto cell : plans[n].masked_empty) {
      scores.push_back(maps[n].values[cell]);
      empty.push_back(1);
    }
    for (auto cell : plans[n].masked_occupied) {
      scores.push_back(maps[n].values[cell]);
      empty.push_back(0);
    }
  }
  return roc_auc(scores, empty);
}

std::vector<char> object_presence_labels(const PointCloud& cloud, const SceneAnnotation& annotation,
                                         const BevMaskPlan& plan, const GridSpec& grid) {
  std::vector<char> hit(plan.cells(), 0);
  for (const auto& p : cloud.points) {
    const bool inside = std::any_of(annotation.boxes.begin(), annotation.boxes.end(),
                                    [&](const Box& b) { return b.contains(p); });
    if (!inside) continue;
    const auto c = bev_cell_of_point(p, grid);
    hit[c.h * plan.occupancy.w + c.w] = 1;
  }
  std::vector<char> labels;
  for (auto cell : plan.visible_occupied) labels.push_back(hit[cell]);
  return labels;
}

ProbeResult linear_probe(std::span<const double> train_x, std::span<const char> train_y,
                         std::span<const double> test_x, std::span<const char> test_y, std::size_t dim,
                         const ProbeOptions& options) {
  if (dim == 0 || train_x.size() != train_y.size() * dim || test_x.size() != test_y.size() * dim) {
    throw ShapeError("linear_probe: feature matrices do not match labels x dim");
  }
  const auto classes = [](std::span<const char> y) {
    const auto pos = std::count(y.begin(), y.end(), char{1});
    return pos > 0 && pos < static_cast<std::ptrdiff_t>(y.size());
  };
  if (!classes(train_y) || !classes(test_y)) {
    throw ShapeError("linear_probe: AUC undefined, labels contain a single class");
  }

  Tensor weight({dim + 1});  // last entry is the bias
  Rng rng{options.seed, 0x9e0be};
  for (std::size_t k = 0; k < dim; ++k) weight.data[k] = 0.01 * rng.normal();
  Adam adam;
  const std::vector<NamedParam> params{{"probe.weight", &weight}};
  adam.attach(params);

  const std::size_t m = train_y.size();
  const auto logit = [&](std::span<const double> x, std::size_t r) {
    double z = weight.data[dim];
    for (std::size_t k = 0; k < dim; ++k) z += weight.data[k] * x[r * dim + k];
    return z;
  };
  for (std::size_t it = 0; it < options.steps; ++it) {
    weight.zero_grad();
    for (std::size_t r = 0; r < m; ++r) {
      const double p = 1.0 / (1.0 + std::exp(-logit(train_x, r)));
      const double g = (p - static_cast<double>(train_y[r])) / static_cast<double>(m);
      for (std::size_t k = 0; k < dim; ++k) weight.grad[k] += g * train_x[r * dim + k];
      weight.grad[dim] += g;
    }
    adam.step(params, options.learning_rate);
  }

  ProbeResult res;
  res.train_rows = m;
  res.test_rows = test_y.size();
  std::vector<double> train_scores(m), test_scores(test_y.size());
  for (std::size_t r = 0; r < m; ++r) train_scores[r] = logit(train_x, r);
  std::size_t correct = 0, positives = 0;
  for (std::size_t r = 0; r < test_y.size(); ++r) {
    test_scores[r] = logit(test_x, r);
    correct += (test_scores[r] > 0) == (test_y[r] != 0);
    positives += test_y[r] != 0;
  }
  res.train_auc = roc_auc(train_scores, train_y);
  res.auc = roc_auc(test_scores, test_y);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(test_y.size());
  res.positive_rate = static_cast<double>(positives) / static_cast<double>(test_y.size());
  return res;
}

ProbeSet probe_set(ModelState& state, std::span<const PointCloud> clouds, std::span<const SceneAnnotation> annotations) {
  if (clouds.size() != annotations.size()) throw ShapeError("probe_set: one annotation per scene required");
  const auto enc = encode_scenes(state, clouds);
  ProbeSet set;
  set.features = non_empty_rows(enc);
  for (std::size_t n = 0; n < clouds.size(); ++n) {
    const auto l = object_presence_labels(clouds[n], annotations[n], enc.plans[n], state.grid);
    set.labels.insert(set.labels.end(), l.begin(), l.end());
  }
  return set;
}

SpectrumReport embedding_spectrum(ModelState& state, std::span<const PointCloud> clouds) {
  const auto enc = encode_scenes(state, clouds);
  const auto rows = non_empty_rows(enc);
  const auto e = state.embed_dim();
  return svd_spectrum(rows, rows.size() / e, e);
}

}  // namespace adlj
