#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "adlj/autodiff.hpp"
#include "adlj/masking.hpp"

namespace adlj {

enum class RegNormalization {
  mean_over_batch,  // sum of per-scene v(.) divided by N
  sum_over_batch,   // literal sum over scenes
  pooled_batch,     // one v(.) over rows pooled across the batch (ablation)
};

/// Weights and switches of the pre-training objective.
struct ObjectiveConfig {
  double alpha_empty = 0.25;     // weight of masked empty cells in the prediction loss
  double alpha_occupied = 0.75;  // weight of masked non-empty cells
  double beta_context = 1.0;
  double beta_prediction = 1.0;
  double lambda_jepa = 1.0;
  double lambda_reg = 1.0;
  double gamma = 0.0;  // <= 0 means 1/sqrt(E)
  double var_eps = 1e-8;
  bool use_variance_reg = true;
  RegNormalization reg_normalization = RegNormalization::mean_over_batch;

  double resolved_gamma(std::size_t embed_dim) const;
};

/// The twelve per-step scalars, named as in the training log.
struct LossBreakdown {
  double loss_pretrain = 0;
  double loss_reg = 0;
  double loss_reg_prediction_target_voxels = 0;
  double loss_reg_context_context_voxels = 0;
  double loss_jepa = 0;
  double loss_cos_jepa_target_voxels = 0;
  double loss_cos_jepa_target_empty_voxels = 0;
  double var_target_target_voxels = 0;
  double var_prediction_target_voxels = 0;
  double var_prediction_target_empty_voxels = 0;
  double var_context_context_voxels = 0;
  double learning_rate = 0;

  static constexpr std::array<std::string_view, 12> kFieldNames = {
      "loss_pretrain",
      "loss_reg",
      "loss_reg_prediction_target_voxels",
      "loss_reg_context_context_voxels",
      "loss_jepa",
      "loss_cos_jepa_target_voxels",
      "loss_cos_jepa_target_empty_voxels",
      "var_target_target_voxels",
      "var_prediction_target_voxels",
      "var_prediction_target_empty_voxels",
      "var_context_context_voxels",
      "learning_rate",
  };

  std::array<double, 12> values() const;
  static LossBreakdown from_values(const std::array<double, 12>& v);
  bool all_finite() const;
};

struct HingeResult {
  ad::Var value;
  bool degenerate = false;  // M == 0: value is the constant 0
};

/// v(Y) = mean_j max(0, gamma - sqrt(Var(Y_j) + eps)), population variance.
HingeResult variance_hinge(const ad::Var& y, double gamma, double eps);

struct JepaLoss {
  ad::Var total;
  ad::Var cos_empty;     // mean (1 - cos) over masked empty cells, pooled over the batch
  ad::Var cos_occupied;  // same over masked non-empty cells
  std::size_t n_empty = 0, n_occupied = 0;
};

/// Both embeddings are [B,H,W,E]. A class with no masked cells contributes 0.
JepaLoss jepa_loss(const ad::Var& predicted, const ad::Var& target, std::span<const BevMaskPlan> plans,
                   double alpha_empty, double alpha_occupied);

struct RegLoss {
  ad::Var total;       // beta_c * context + beta_p * prediction
  ad::Var context;     // over visible non-empty cells of the context embeddings
  ad::Var prediction;  // over masked non-empty cells of the predictions
};

RegLoss variance_reg_loss(const ad::Var& context, const ad::Var& predicted, std::span<const BevMaskPlan> plans,
                          double beta_context, double beta_prediction, double gamma, double eps,
                          RegNormalization normalization);

/// lambda_jepa * jepa + lambda_reg * reg. Throws NumericalError on a NaN component.
ad::Var total_loss(const ad::Var& jepa, const ad::Var& reg, double lambda_jepa, double lambda_reg);

/// Mean over columns of sqrt(Var + eps) for a row-major [rows, cols] block;
/// the quantity the hinge compares against gamma.
double embedding_spread(std::span<const double> rows, std::size_t cols, double eps);

/// Per-scene embedding_spread over the selected cells, averaged over scenes
/// holding at least two such cells (0 when none do). `embeddings` is [B,H,W,E].
enum class CellSet { visible_occupied, masked_occupied, masked_empty };
double mean_scene_spread(const Tensor& embeddings, std::span<const BevMaskPlan> plans, CellSet set, double eps);
/// embedding_spread over the selected cells pooled across all scenes.
double pooled_spread(const Tensor& embeddings, std::span<const BevMaskPlan> plans, CellSet set, double eps);

const std::vector<std::size_t>& cells_of(const BevMaskPlan& plan, CellSet set);

}  // namespace adlj
