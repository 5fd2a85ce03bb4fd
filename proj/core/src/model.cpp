#include "adlj/model.hpp"

#include <cmath>
#include <string>

#include "adlj/errors.hpp"
#include "adlj/rng.hpp"

namespace adlj {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

std::vector<std::size_t> rows_for(std::span<const BevMaskPlan> plans, std::size_t cells,
                                  std::initializer_list<const std::vector<std::size_t> BevMaskPlan::*> sets) {
  std::vector<std::size_t> rows;
  for (std::size_t n = 0; n < plans.size(); ++n)
    for (auto set : sets)
      for (auto c : plans[n].*set) rows.push_back(n * cells + c);
  return rows;
}

}  // namespace

std::vector<NamedParam> ModelState::trainable() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < 3; ++i) {
    out.push_back({"context.conv" + std::to_string(i) + ".weight", &context.weight[i]});
    out.push_back({"context.conv" + std::to_string(i) + ".bias", &context.bias[i]});
  }
  for (std::size_t i = 0; i < predictor.weight.size(); ++i) {
    out.push_back({"predictor.conv" + std::to_string(i) + ".weight", &predictor.weight[i]});
    out.push_back({"predictor.conv" + std::to_string(i) + ".bias", &predictor.bias[i]});
  }
  out.push_back({"tokens.empty", &tokens.empty});
  out.push_back({"tokens.mask", &tokens.mask});
  return out;
}

std::vector<NamedParam> ModelState::target_params() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < 3; ++i) {
    out.push_back({"target.conv" + std::to_string(i) + ".weight", &target.weight[i]});
    out.push_back({"target.conv" + std::to_string(i) + ".bias", &target.bias[i]});
  }
  return out;
}

std::vector<NamedParam> ModelState::all_params() {
  auto out = trainable();
  for (auto& p : target_params()) out.push_back(p);
  return out;
}

ModelState init_model(const GridSpec& grid, const ModelConfig& config, std::uint64_t seed) {
  grid.validate();
  if (grid.downsample != 8) throw ConfigError("the encoder has three stride-2 stages; grid downsample must be 8");
  if (config.predictor_depth == 0) throw ConfigError("predictor_depth must be >= 1");
  for (auto c : config.encoder_channels)
    if (c == 0) throw ConfigError("encoder channel counts must be positive");

  ModelState s;
  s.grid = grid;
  s.config = config;
  Rng rng({seed, 0x1417});

  std::size_t cin = kVoxelChannels;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t cout = config.encoder_channels[i];
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * 27));
    s.context.weight[i] = uniform_tensor({cout, cin, 3, 3, 3}, bound, rng);
    s.context.bias[i] = uniform_tensor({cout}, bound, rng);
    cin = cout;
  }
  s.target = s.context;

  const std::size_t e = s.embed_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(e * 9));
  for (std::size_t i = 0; i < config.predictor_depth; ++i) {
    s.predictor.weight.push_back(uniform_tensor({e, e, 3, 3}, bound, rng));
    s.predictor.bias.push_back(uniform_tensor({e}, bound, rng));
  }

  s.tokens.empty = Tensor({e});
  s.tokens.mask = Tensor({e});
  for (auto& v : s.tokens.empty.data) v = rng.normal();
  for (auto& v : s.tokens.mask.data) v = rng.normal();
  return s;
}

namespace {

ad::Var bind_one(ad::Tape& tape, Tensor& t, bool trainable) {
  return trainable ? tape.parameter(t) : tape.constant(Tensor(t.shape, t.data));
}

}  // namespace

EncoderVars bind(ad::Tape& tape, EncoderParams& params, bool trainable) {
  EncoderVars v;
  for (std::size_t i = 0; i < 3; ++i) {
    v.weight[i] = bind_one(tape, params.weight[i], trainable);
    v.bias[i] = bind_one(tape, params.bias[i], trainable);
  }
  return v;
}

PredictorVars bind(ad::Tape& tape, PredictorParams& params, bool trainable) {
  PredictorVars v;
  for (std::size_t i = 0; i < params.weight.size(); ++i) {
    v.weight.push_back(bind_one(tape, params.weight[i], trainable));
    v.bias.push_back(bind_one(tape, params.bias[i], trainable));
  }
  return v;
}

TokenVars bind(ad::Tape& tape, Tokens& tokens, bool trainable) {
  return {bind_one(tape, tokens.empty, trainable), bind_one(tape, tokens.mask, trainable)};
}

ad::Var encode_bev(const EncoderVars& encoder, const ad::Var& features) {
  const auto& s = features.shape();
  if (s.size() != 5 || s[1] != kVoxelChannels) {
    throw ShapeError("encode_bev: expected [B,4,X,Y,Z] features, got " + shape_str(s));
  }
  ad::Var x = features;
  for (std::size_t i = 0; i < 3; ++i) {
    x = ad::conv3d(x, encoder.weight[i], encoder.bias[i], 2, 1);
    if (i < 2) x = ad::relu(x);
  }
  // [B,C,H,W,D] -> [B,H,W,D,C] -> [B,H,W,D*C]
  const auto& o = x.shape();
  const std::size_t b = o[0], c = o[1], h = o[2], w = o[3], d = o[4];
  return ad::reshape(ad::permute(x, {0, 2, 3, 4, 1}), {b, h, w, d * c});
}

TokenizedEmbeddings apply_tokens(const ad::Var& context, const ad::Var& target, std::span<const BevMaskPlan> plans,
                                 const TokenVars& tokens, const ModelConfig& config) {
  const auto s = context.shape();
  if (s.size() != 4) throw ShapeError("apply_tokens: expected [B,H,W,E], got " + shape_str(s));
  if (target.shape() != s) throw ShapeError("apply_tokens: context and target shapes differ");
  if (s[0] != plans.size()) throw ShapeError("apply_tokens: axis 0 (batch) does not match the number of plans");
  const std::size_t cells = s[1] * s[2];
  for (const auto& p : plans)
    if (p.cells() != cells) throw ShapeError("apply_tokens: plan grid does not match axes 1-2");

  ad::Var zc = ad::reshape(context, {s[0] * cells, s[3]});
  ad::Var st = ad::reshape(target, {s[0] * cells, s[3]});
  if (config.use_empty_token) {
    const auto visible_empty = rows_for(plans, cells, {&BevMaskPlan::visible_empty});
    zc = ad::replace_rows(zc, visible_empty, tokens.empty);
    const auto target_empty = config.empty_token_on_masked_targets
                                  ? rows_for(plans, cells, {&BevMaskPlan::visible_empty, &BevMaskPlan::masked_empty})
                                  : visible_empty;
    st = ad::replace_rows(st, target_empty, tokens.empty);
  }
  if (config.use_mask_token) {
    const auto masked = rows_for(plans, cells, {&BevMaskPlan::masked_empty, &BevMaskPlan::masked_occupied});
    zc = ad::replace_rows(zc, masked, tokens.mask);
  }
  return {ad::reshape(ad::l2_normalize(zc), s), ad::reshape(ad::l2_normalize(st), s)};
}

ad::Var predict(const PredictorVars& predictor, const ad::Var& context) {
  const auto s = context.shape();
  if (s.size() != 4) throw ShapeError("predict: expected [B,H,W,E], got " + shape_str(s));
  ad::Var x = ad::permute(context, {0, 3, 1, 2});
  const std::size_t depth = predictor.weight.size();
  for (std::size_t i = 0; i < depth; ++i) {
    x = ad::conv2d(x, predictor.weight[i], predictor.bias[i], 1, 1);
    if (i + 1 < depth) x = ad::relu(x);
  }
  return ad::l2_normalize(ad::permute(x, {0, 2, 3, 1}));
}

Tensor stack_features(std::span<const VoxelFeatures> features) {
  if (features.empty()) throw ShapeError("stack_features: empty batch");
  Shape shape = features[0].tensor.shape;
  shape.insert(shape.begin(), features.size());
  Tensor out(shape);
  const std::size_t per = features[0].tensor.numel();
  for (std::size_t n = 0; n < features.size(); ++n) {
    if (features[n].tensor.shape != features[0].tensor.shape) {
      throw ShapeError("stack_features: scene " + std::to_string(n) + " has a different grid");
    }
    std::copy(features[n].tensor.data.begin(), features[n].tensor.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(n * per));
  }
  return out;
}

BatchInputs make_batch(std::vector<BevMaskPlan> plans, std::span<const PointCloud> full_clouds, const GridSpec& grid,
                       TargetInput target_input) {
  if (plans.empty()) throw ShapeError("make_batch: empty batch");
  if (target_input == TargetInput::full && full_clouds.size() != plans.size()) {
    throw ShapeError("make_batch: full-cloud target input needs one cloud per plan");
  }
  std::vector<VoxelFeatures> ctx, tgt;
  for (std::size_t n = 0; n < plans.size(); ++n) {
    ctx.push_back(voxelize(plans[n].visible_points, grid));
    tgt.push_back(voxelize(target_input == TargetInput::full ? full_clouds[n] : plans[n].hidden_points, grid));
  }
  return {stack_features(ctx), stack_features(tgt), std::move(plans)};
}

ForwardPass forward_batch(ad::Tape& tape, ModelState& state, const BatchInputs& batch, const ObjectiveConfig& objective) {
  const auto ctx_enc = bind(tape, state.context, true);
  const auto tgt_enc = bind(tape, state.target, false);
  const auto pred = bind(tape, state.predictor, true);
  const auto tok = bind(tape, state.tokens, true);

  const auto xc = tape.constant(batch.context_features);
  const auto xt = tape.constant(batch.target_features);
  const auto zc = encode_bev(ctx_enc, xc);
  const auto st = encode_bev(tgt_enc, xt);
  const auto tokenized = apply_tokens(zc, st, batch.plans, tok, state.config);

  ForwardPass pass;
  pass.context = tokenized.context;
  pass.target = tokenized.target;
  pass.predicted = predict(pred, tokenized.context);
  pass.gamma = objective.resolved_gamma(state.embed_dim());
  pass.jepa = jepa_loss(pass.predicted, pass.target, batch.plans, objective.alpha_empty, objective.alpha_occupied);
  if (objective.use_variance_reg) {
    pass.reg = variance_reg_loss(pass.context, pass.predicted, batch.plans, objective.beta_context,
                                 objective.beta_prediction, pass.gamma, objective.var_eps, objective.reg_normalization);
  } else {
    const auto z = tape.constant(Tensor({1}, 0.0));
    pass.reg = {z, z, z};
  }
  pass.total = total_loss(pass.jepa.total, pass.reg.total, objective.lambda_jepa, objective.lambda_reg);
  return pass;
}

LossBreakdown summarize(const ForwardPass& pass, const ObjectiveConfig& objective, std::span<const BevMaskPlan> plans) {
  LossBreakdown b;
  b.loss_pretrain = pass.total.item();
  b.loss_reg = pass.reg.total.item();
  b.loss_reg_prediction_target_voxels = pass.reg.prediction.item();
  b.loss_reg_context_context_voxels = pass.reg.context.item();
  b.loss_jepa = pass.jepa.total.item();
  b.loss_cos_jepa_target_voxels = pass.jepa.cos_occupied.item();
  b.loss_cos_jepa_target_empty_voxels = pass.jepa.cos_empty.item();
  const double eps = objective.var_eps;
  b.var_target_target_voxels = mean_scene_spread(pass.target.value(), plans, CellSet::masked_occupied, eps);
  b.var_prediction_target_voxels = mean_scene_spread(pass.predicted.value(), plans, CellSet::masked_occupied, eps);
  b.var_prediction_target_empty_voxels = mean_scene_spread(pass.predicted.value(), plans, CellSet::masked_empty, eps);
  b.var_context_context_voxels = mean_scene_spread(pass.context.value(), plans, CellSet::visible_occupied, eps);
  return b;
}

void ema_update(ModelState& state, double eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("EMA coefficient must lie in [0, 1]");
  for (std::size_t i = 0; i < 3; ++i) {
    for (auto [tgt, src] : {std::pair{&state.target.weight[i], &state.context.weight[i]},
                            std::pair{&state.target.bias[i], &state.context.bias[i]}}) {
      for (std::size_t k = 0; k < tgt->numel(); ++k) tgt->data[k] = eta * tgt->data[k] + (1.0 - eta) * src->data[k];
    }
  }
}

}  // namespace adlj
