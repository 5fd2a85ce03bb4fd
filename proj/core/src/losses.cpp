#include "adlj/losses.hpp"

#include <cmath>
#include <string>

#include "adlj/errors.hpp"

namespace adlj {

double ObjectiveConfig::resolved_gamma(std::size_t embed_dim) const {
  return gamma > 0 ? gamma : 1.0 / std::sqrt(static_cast<double>(embed_dim));
}

std::array<double, 12> LossBreakdown::values() const {
  return {loss_pretrain,
          loss_reg,
          loss_reg_prediction_target_voxels,
          loss_reg_context_context_voxels,
          loss_jepa,
          loss_cos_jepa_target_voxels,
          loss_cos_jepa_target_empty_voxels,
          var_target_target_voxels,
          var_prediction_target_voxels,
          var_prediction_target_empty_voxels,
          var_context_context_voxels,
          learning_rate};
}

LossBreakdown LossBreakdown::from_values(const std::array<double, 12>& v) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]};
}

bool LossBreakdown::all_finite() const {
  for (double v : values())
    if (!std::isfinite(v)) return false;
  return true;
}

namespace {

ad::Var zero(ad::Tape& tape) { return tape.constant(Tensor({1}, 0.0)); }

struct RowsView {
  ad::Var rows;
  std::size_t cells_per_scene = 0;
  std::size_t batch = 0;
};

RowsView as_rows(const ad::Var& x, std::span<const BevMaskPlan> plans, const char* what) {
  const auto& s = x.shape();
  if (s.size() != 4) throw ShapeError(std::string(what) + ": expected [B,H,W,E], got " + shape_str(s));
  if (s[0] != plans.size()) {
    throw ShapeError(std::string(what) + ": axis 0 (batch) is " + std::to_string(s[0]) + " but " +
                     std::to_string(plans.size()) + " plans were given");
  }
  const std::size_t cells = s[1] * s[2];
  for (const auto& p : plans) {
    if (p.cells() != cells) throw ShapeError(std::string(what) + ": plan grid does not match axes 1-2");
  }
  return {ad::reshape(x, {s[0] * cells, s[3]}), cells, s[0]};
}

std::vector<std::size_t> global_rows(std::span<const BevMaskPlan> plans, std::size_t cells, CellSet set) {
  std::vector<std::size_t> rows;
  for (std::size_t n = 0; n < plans.size(); ++n)
    for (auto c : cells_of(plans[n], set)) rows.push_back(n * cells + c);
  return rows;
}

ad::Var one_minus_mean_cos(const ad::Var& a, const ad::Var& b, const std::vector<std::size_t>& rows) {
  const auto cos = ad::cosine_similarity(ad::select_rows(a, rows), ad::select_rows(b, rows));
  return ad::add_scalar(ad::scale(ad::mean(cos), -1.0), 1.0);
}

}  // namespace

const std::vector<std::size_t>& cells_of(const BevMaskPlan& plan, CellSet set) {
  switch (set) {
    case CellSet::visible_occupied: return plan.visible_occupied;
    case CellSet::masked_occupied: return plan.masked_occupied;
    case CellSet::masked_empty: return plan.masked_empty;
  }
  throw std::logic_error("unknown cell set");
}

HingeResult variance_hinge(const ad::Var& y, double gamma, double eps) {
  const auto& s = y.shape();
  if (s.size() != 2 || s[1] == 0) throw ShapeError("variance_hinge: expected a [M,C] matrix with C >= 1, got " + shape_str(s));
  if (s[0] == 0) return {zero(y.tape()), true};
  const auto std_dev = ad::column_std(y, eps);
  const auto hinge = ad::relu(ad::add_scalar(ad::scale(std_dev, -1.0), gamma));
  return {ad::mean(hinge), false};
}

JepaLoss jepa_loss(const ad::Var& predicted, const ad::Var& target, std::span<const BevMaskPlan> plans,
                   double alpha_empty, double alpha_occupied) {
  const auto p = as_rows(predicted, plans, "jepa_loss");
  const auto t = as_rows(target, plans, "jepa_loss");
  if (predicted.shape() != target.shape()) throw ShapeError("jepa_loss: prediction and target shapes differ");
  auto& tape = predicted.tape();

  JepaLoss out;
  const auto empty_rows = global_rows(plans, p.cells_per_scene, CellSet::masked_empty);
  const auto occ_rows = global_rows(plans, p.cells_per_scene, CellSet::masked_occupied);
  out.n_empty = empty_rows.size();
  out.n_occupied = occ_rows.size();
  out.cos_empty = empty_rows.empty() ? zero(tape) : one_minus_mean_cos(p.rows, t.rows, empty_rows);
  out.cos_occupied = occ_rows.empty() ? zero(tape) : one_minus_mean_cos(p.rows, t.rows, occ_rows);
  out.total = ad::add(ad::scale(out.cos_empty, alpha_empty), ad::scale(out.cos_occupied, alpha_occupied));
  return out;
}

RegLoss variance_reg_loss(const ad::Var& context, const ad::Var& predicted, std::span<const BevMaskPlan> plans,
                          double beta_context, double beta_prediction, double gamma, double eps,
                          RegNormalization normalization) {
  const auto c = as_rows(context, plans, "variance_reg_loss");
  const auto p = as_rows(predicted, plans, "variance_reg_loss");
  auto& tape = context.tape();

  auto term = [&](const ad::Var& rows, CellSet set) {
    if (normalization == RegNormalization::pooled_batch) {
      const auto idx = global_rows(plans, c.cells_per_scene, set);
      return variance_hinge(ad::select_rows(rows, idx), gamma, eps).value;
    }
    ad::Var acc = zero(tape);
    for (std::size_t n = 0; n < plans.size(); ++n) {
      const auto& cells = cells_of(plans[n], set);
      if (cells.empty()) continue;
      std::vector<std::size_t> idx;
      idx.reserve(cells.size());
      for (auto cell : cells) idx.push_back(n * c.cells_per_scene + cell);
      acc = ad::add(acc, variance_hinge(ad::select_rows(rows, idx), gamma, eps).value);
    }
    if (normalization == RegNormalization::mean_over_batch && !plans.empty()) {
      acc = ad::scale(acc, 1.0 / static_cast<double>(plans.size()));
    }
    return acc;
  };

  RegLoss out;
  out.context = term(c.rows, CellSet::visible_occupied);
  out.prediction = term(p.rows, CellSet::masked_occupied);
  out.total = ad::add(ad::scale(out.context, beta_context), ad::scale(out.prediction, beta_prediction));
  return out;
}

ad::Var total_loss(const ad::Var& jepa, const ad::Var& reg, double lambda_jepa, double lambda_reg) {
  if (std::isnan(jepa.item())) throw NumericalError("total_loss: prediction loss is NaN");
  if (std::isnan(reg.item())) throw NumericalError("total_loss: regularization loss is NaN");
  return ad::add(ad::scale(jepa, lambda_jepa), ad::scale(reg, lambda_reg));
}

double embedding_spread(std::span<const double> rows, std::size_t cols, double eps) {
  if (cols == 0 || rows.empty()) return 0.0;
  const std::size_t m = rows.size() / cols;
  double total = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    double mu = 0.0;
    for (std::size_t r = 0; r < m; ++r) mu += rows[r * cols + j];
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double d = rows[r * cols + j] - mu;
      var += d * d;
    }
    total += std::sqrt(var / static_cast<double>(m) + eps);
  }
  return total / static_cast<double>(cols);
}

namespace {

std::vector<double> gather(const Tensor& emb, std::size_t scene, const std::vector<std::size_t>& cells) {
  const std::size_t e = emb.shape[3];
  const std::size_t per_scene = emb.shape[1] * emb.shape[2];
  std::vector<double> out;
  out.reserve(cells.size() * e);
  for (auto c : cells) {
    const auto* row = emb.data.data() + (scene * per_scene + c) * e;
    out.insert(out.end(), row, row + e);
  }
  return out;
}

}  // namespace

double mean_scene_spread(const Tensor& embeddings, std::span<const BevMaskPlan> plans, CellSet set, double eps) {
  if (embeddings.rank() != 4) throw ShapeError("mean_scene_spread: expected [B,H,W,E]");
  double total = 0.0;
  std::size_t scenes = 0;
  for (std::size_t n = 0; n < plans.size(); ++n) {
    const auto& cells = cells_of(plans[n], set);
    if (cells.size() < 2) continue;
    total += embedding_spread(gather(embeddings, n, cells), embeddings.shape[3], eps);
    ++scenes;
  }
  return scenes ? total / static_cast<double>(scenes) : 0.0;
}

double pooled_spread(const Tensor& embeddings, std::span<const BevMaskPlan> plans, CellSet set, double eps) {
  if (embeddings.rank() != 4) throw ShapeError("pooled_spread: expected [B,H,W,E]");
  std::vector<double> all;
  for (std::size_t n = 0; n < plans.size(); ++n) {
    const auto rows = gather(embeddings, n, cells_of(plans[n], set));
    all.insert(all.end(), rows.begin(), rows.end());
  }
  return embedding_spread(all, embeddings.shape[3], eps);
}

}  // namespace adlj
