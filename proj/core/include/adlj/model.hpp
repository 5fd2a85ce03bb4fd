#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "adlj/adam.hpp"
#include "adlj/autodiff.hpp"
#include "adlj/bev_grid.hpp"
#include "adlj/losses.hpp"
#include "adlj/masking.hpp"

namespace adlj {

enum class TargetInput { hidden_only, full };

struct ModelConfig {
  std::array<std::size_t, 3> encoder_channels{32, 64, 128};
  std::size_t predictor_depth = 3;
  bool use_empty_token = true;
  bool use_mask_token = true;
  /// Also put the empty token on masked empty cells of the target branch.
  bool empty_token_on_masked_targets = false;
  TargetInput target_input = TargetInput::hidden_only;
};

/// Three stride-2 conv3d stages (kernel 3, padding 1) with biases.
struct EncoderParams {
  std::array<Tensor, 3> weight;
  std::array<Tensor, 3> bias;
};

/// conv2d stack over the BEV plane, E -> E per layer, ReLU between layers.
struct PredictorParams {
  std::vector<Tensor> weight;
  std::vector<Tensor> bias;
};

struct Tokens {
  Tensor empty;  // [E]
  Tensor mask;   // [E]
};

struct ModelState {
  GridSpec grid;
  ModelConfig config;
  EncoderParams context;
  EncoderParams target;  // EMA copy of `context`, never gradient-trained
  PredictorParams predictor;
  Tokens tokens;

  std::size_t channels() const { return config.encoder_channels[2]; }
  std::size_t embed_dim() const { return grid.bev_d() * channels(); }

  /// Context encoder, predictor and tokens, in a fixed order.
  std::vector<NamedParam> trainable();
  std::vector<NamedParam> target_params();
  /// Every tensor of the state (trainable first, then target).
  std::vector<NamedParam> all_params();
};

/// Fan-in scaled centered-uniform weights; the target starts equal to the context.
ModelState init_model(const GridSpec& grid, const ModelConfig& config, std::uint64_t seed);

struct EncoderVars {
  std::array<ad::Var, 3> weight, bias;
};
struct PredictorVars {
  std::vector<ad::Var> weight, bias;
};
struct TokenVars {
  ad::Var empty, mask;
};

/// Trainable binding records gradients into the tensors; otherwise they are constants.
EncoderVars bind(ad::Tape& tape, EncoderParams& params, bool trainable);
PredictorVars bind(ad::Tape& tape, PredictorParams& params, bool trainable);
TokenVars bind(ad::Tape& tape, Tokens& tokens, bool trainable);

/// [B,4,X,Y,Z] voxel features -> [B,H,W,E] BEV embeddings, e = d*C + c.
ad::Var encode_bev(const EncoderVars& encoder, const ad::Var& features);

struct TokenizedEmbeddings {
  ad::Var context;  // [B,H,W,E], unit rows
  ad::Var target;   // [B,H,W,E], unit rows
};

/// Token replacement then per-cell L2 normalization:
///   context: U -> empty token, P and Q -> mask token, K keeps the encoder output
///   target:  U -> empty token, everything else keeps the target encoder output
TokenizedEmbeddings apply_tokens(const ad::Var& context, const ad::Var& target, std::span<const BevMaskPlan> plans,
                                 const TokenVars& tokens, const ModelConfig& config);

/// [B,H,W,E] -> [B,H,W,E] with unit rows.
ad::Var predict(const PredictorVars& predictor, const ad::Var& context);

/// Batched [B,4,X,Y,Z] tensor from per-scene features.
Tensor stack_features(std::span<const VoxelFeatures> features);

struct BatchInputs {
  Tensor context_features;  // [B,4,X,Y,Z], voxelized x_c
  Tensor target_features;   // [B,4,X,Y,Z], voxelized x_t (or the full cloud)
  std::vector<BevMaskPlan> plans;
};

/// Builds the batch tensors for already-masked scenes.
BatchInputs make_batch(std::vector<BevMaskPlan> plans, std::span<const PointCloud> full_clouds,
                       const GridSpec& grid, TargetInput target_input);

struct ForwardPass {
  ad::Var context;    // z^_c
  ad::Var target;     // s^_t
  ad::Var predicted;  // s^_c
  JepaLoss jepa;
  RegLoss reg;
  ad::Var total;
  double gamma = 0;
};

/// Whole objective on one tape: both encoders, tokens, predictor and losses.
/// The context encoder, predictor and tokens are bound trainable; the target is not.
ForwardPass forward_batch(ad::Tape& tape, ModelState& state, const BatchInputs& batch, const ObjectiveConfig& objective);

/// Fills every LossBreakdown field except learning_rate from a forward pass.
LossBreakdown summarize(const ForwardPass& pass, const ObjectiveConfig& objective, std::span<const BevMaskPlan> plans);

/// target <- eta * target + (1 - eta) * context, every tensor.
void ema_update(ModelState& state, double eta);

}  // namespace adlj
