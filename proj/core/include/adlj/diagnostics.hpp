#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "adlj/bev_grid.hpp"
#include "adlj/masking.hpp"
#include "adlj/model.hpp"
#include "adlj/point_cloud.hpp"
#include "adlj/spectrum.hpp"

namespace adlj {

/// Cosine similarity to the empty token on masked cells; every other cell is ignored.
struct SimilarityMap {
  static constexpr double kIgnored = std::numeric_limits<double>::quiet_NaN();

  std::size_t h = 0, w = 0;
  std::vector<double> values;  // row-major, kIgnored outside the masked cells

  bool ignored(std::size_t cell) const { return values[cell] != values[cell]; }
  double at(std::size_t row, std::size_t col) const { return values[row * w + col]; }
};

/// `embeddings` is one scene, [H,W,E] or [1,H,W,E]. For each masked cell
/// (masked_empty and masked_occupied), cos(embedding, empty_token).
SimilarityMap occupancy_estimate(const Tensor& embeddings, const Tensor& empty_token, const BevMaskPlan& plan);

/// Context-branch embeddings without masking, one scene per plan.
struct EncodedScenes {
  Tensor embeddings;  // [N,H,W,E], unit rows
  std::vector<BevMaskPlan> plans;
};

/// Runs the context encoder and tokens on unmasked scenes, `chunk` scenes per pass.
EncodedScenes encode_scenes(ModelState& state, std::span<const PointCloud> clouds, std::size_t chunk = 8);

/// Embeddings of every non-empty cell, row-major [M, E] (scene order, then cell order).
std::vector<double> non_empty_rows(const EncodedScenes& scenes);

/// One masked forward pass per scene, returning the predictor output.
struct MaskedPrediction {
  Tensor predicted;  // [1,H,W,E]
  BevMaskPlan plan;
};
MaskedPrediction predict_scene(ModelState& state, const PointCloud& cloud, double ratio, std::uint64_t seed,
                               bool mask_empty_cells = true);

/// ROC-AUC with tied scores sharing their average rank. Throws ShapeError
/// when only one class is present.
double roc_auc(std::span<const double> scores, std::span<const char> labels);

/// AUC of (similarity, cell is empty) pooled over the masked cells of all maps.
double occupancy_auc(std::span<const SimilarityMap> maps, std::span<const BevMaskPlan> plans);

/// 1 for a non-empty cell holding a point that lies inside an annotated box.
/// Only non-empty cells are listed, in the same order as non_empty_rows.
std::vector<char> object_presence_labels(const PointCloud& cloud, const SceneAnnotation& annotation,
                                         const BevMaskPlan& plan, const GridSpec& grid);

struct ProbeOptions {
  std::size_t steps = 400;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double auc = 0;
  double accuracy = 0;
  double train_auc = 0;
  std::size_t train_rows = 0, test_rows = 0;
  double positive_rate = 0;  // test set
};

/// Logistic regression on frozen features ([M, E] row-major), full-batch Adam
/// on the probe weights only; metrics are reported on the test split.
ProbeResult linear_probe(std::span<const double> train_x, std::span<const char> train_y,
                         std::span<const double> test_x, std::span<const char> test_y, std::size_t dim,
                         const ProbeOptions& options = {});

/// Probe features and labels for a set of scenes under `state`.
struct ProbeSet {
  std::vector<double> features;
  std::vector<char> labels;
};
ProbeSet probe_set(ModelState& state, std::span<const PointCloud> clouds, std::span<const SceneAnnotation> annotations);

/// Spectrum of the non-empty-cell embeddings of `clouds`.
SpectrumReport embedding_spectrum(ModelState& state, std::span<const PointCloud> clouds);

}  // namespace adlj
