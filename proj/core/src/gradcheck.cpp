#include "adlj/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adlj/losses.hpp"
#include "adlj/masking.hpp"
#include "adlj/model.hpp"
#include "adlj/rng.hpp"
#include "adlj/trainer.hpp"

namespace adlj {

namespace {

std::vector<std::size_t> probe_entries(std::size_t n, std::size_t max_entries, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n <= max_entries) return idx;
  for (std::size_t i = 0; i < max_entries; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

GradCheckResult compare(const std::string& name, std::span<const double> analytic, std::span<const double> numeric,
                        double tolerance) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  GradCheckResult r;
  r.name = name;
  r.rel_error = (na == 0 && nn == 0) ? 0.0 : std::sqrt(diff) / denom;
  r.tolerance = tolerance;
  r.entries = analytic.size();
  r.passed = r.rel_error < tolerance;
  return r;
}

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, double min_abs = 0.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) {
    do v = scale * rng.normal();
    while (std::abs(v) < min_abs);
  }
  return t;
}

// Weighted sum with fixed random weights, so every output entry matters.
ad::Var project(ad::Tape& tape, const ad::Var& y, std::uint64_t seed) {
  Rng rng{seed, 0x9107};
  return ad::sum(ad::mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

BevMaskPlan random_plan(std::size_t h, std::size_t w, Rng& rng) {
  BevOccupancy occ;
  occ.h = h;
  occ.w = w;
  occ.cells.resize(h * w);
  std::vector<char> masked(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    occ.cells[i] = static_cast<char>(rng.below(2));
    masked[i] = static_cast<char>(rng.below(2));
  }
  // Two cells of every class keep each loss term populated.
  const char pattern[4][2] = {{1, 0}, {1, 1}, {0, 1}, {0, 0}};
  for (std::size_t k = 0; k < 8 && k < h * w; ++k) {
    occ.cells[k] = pattern[k % 4][0];
    masked[k] = pattern[k % 4][1];
  }
  return make_plan(occ, std::move(masked));
}

}  // namespace

std::vector<GradCheckResult> check_gradient(const std::string& name, std::vector<Tensor> inputs,
                                            const LossBuilder& build, double tolerance,
                                            const GradCheckOptions& options) {
  for (auto& t : inputs) t.zero_grad();
  {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& t : inputs) vars.push_back(tape.parameter(t));
    tape.backward(build(tape, vars));
  }
  const auto evaluate = [&]() {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (auto& t : inputs) vars.push_back(tape.constant(t));
    return build(tape, vars).item();
  };

  Rng rng{options.seed, 0x6c4ec};
  std::vector<GradCheckResult> results;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    const auto entries = probe_entries(t.numel(), options.max_entries, rng);
    std::vector<double> analytic, numeric;
    for (auto i : entries) {
      const double saved = t.data[i];
      t.data[i] = saved + options.step;
      const double up = evaluate();
      t.data[i] = saved - options.step;
      const double down = evaluate();
      t.data[i] = saved;
      numeric.push_back((up - down) / (2 * options.step));
      analytic.push_back(t.grad[i]);
    }
    results.push_back(
        compare(inputs.size() == 1 ? name : name + "[" + std::to_string(k) + "]", analytic, numeric, tolerance));
  }
  return results;
}

std::vector<GradCheckResult> op_gradient_suite(double tolerance, const GradCheckOptions& options) {
  Rng rng{options.seed, 0x0b5};
  std::vector<GradCheckResult> all;
  const auto run = [&](const std::string& name, std::vector<Tensor> inputs, const LossBuilder& build) {
    const auto r = check_gradient(name, std::move(inputs), build, tolerance, options);
    all.insert(all.end(), r.begin(), r.end());
  };
  const auto R = [&](Shape s, double min_abs = 0.0) { return random_tensor(std::move(s), rng, 1.0, min_abs); };

  run("add", {R({3, 4}), R({3, 4})}, [](ad::Tape& t, auto v) { return project(t, ad::add(v[0], v[1]), 1); });
  run("sub", {R({3, 4}), R({3, 4})}, [](ad::Tape& t, auto v) { return project(t, ad::sub(v[0], v[1]), 2); });
  run("mul", {R({3, 4}), R({3, 4})}, [](ad::Tape& t, auto v) { return project(t, ad::mul(v[0], v[1]), 3); });
  run("scale", {R({5})}, [](ad::Tape& t, auto v) { return project(t, ad::scale(v[0], -1.7), 4); });
  run("add_scalar", {R({5})}, [](ad::Tape& t, auto v) { return project(t, ad::add_scalar(v[0], 0.3), 5); });
  run("relu", {R({4, 5}, 0.05)}, [](ad::Tape& t, auto v) { return project(t, ad::relu(v[0]), 6); });
  run("sum", {R({3, 2})}, [](ad::Tape&, auto v) { return ad::sum(ad::mul(v[0], v[0])); });
  run("mean", {R({3, 2})}, [](ad::Tape&, auto v) { return ad::mean(ad::mul(v[0], v[0])); });
  run("reshape", {R({2, 6})}, [](ad::Tape& t, auto v) { return project(t, ad::reshape(v[0], {3, 4}), 7); });
  run("permute", {R({2, 3, 4})}, [](ad::Tape& t, auto v) { return project(t, ad::permute(v[0], {2, 0, 1}), 8); });
  run("linear", {R({5, 4}), R({3, 4}), R({3})},
      [](ad::Tape& t, auto v) { return project(t, ad::linear(v[0], v[1], v[2]), 9); });
  run("conv3d_s1p1", {R({2, 3, 5, 4, 6}), R({4, 3, 3, 3, 3}), R({4})},
      [](ad::Tape& t, auto v) { return project(t, ad::conv3d(v[0], v[1], v[2], 1, 1), 10); });
  run("conv3d_s2p1", {R({1, 2, 6, 5, 4}), R({3, 2, 3, 3, 3}), R({3})},
      [](ad::Tape& t, auto v) { return project(t, ad::conv3d(v[0], v[1], v[2], 2, 1), 11); });
  run("conv3d_nobias", {R({1, 2, 5, 5, 5}), R({2, 2, 3, 1, 3})},
      [](ad::Tape& t, auto v) { return project(t, ad::conv3d(v[0], v[1], ad::Var{}, 1, 0), 12); });
  run("conv2d_s1p1", {R({2, 3, 5, 6}), R({4, 3, 3, 3}), R({4})},
      [](ad::Tape& t, auto v) { return project(t, ad::conv2d(v[0], v[1], v[2], 1, 1), 13); });
  run("conv2d_s2p1", {R({1, 2, 6, 7}), R({3, 2, 3, 3}), R({3})},
      [](ad::Tape& t, auto v) { return project(t, ad::conv2d(v[0], v[1], v[2], 2, 1), 14); });
  run("l2_normalize", {R({6, 5})}, [](ad::Tape& t, auto v) { return project(t, ad::l2_normalize(v[0]), 15); });
  run("cosine_similarity", {R({4, 5}), R({4, 5})},
      [](ad::Tape& t, auto v) { return project(t, ad::cosine_similarity(v[0], v[1]), 16); });
  const std::vector<std::size_t> sel{4, 1, 1, 5};
  run("select_rows", {R({6, 3})}, [sel](ad::Tape& t, auto v) { return project(t, ad::select_rows(v[0], sel), 17); });
  const std::vector<std::size_t> rep{0, 3};
  run("replace_rows", {R({6, 3}), R({3})},
      [rep](ad::Tape& t, auto v) { return project(t, ad::replace_rows(v[0], rep, v[1]), 18); });
  run("column_std", {R({7, 4})}, [](ad::Tape& t, auto v) { return project(t, ad::column_std(v[0], 1e-8), 19); });
  std::vector<double> targets;
  for (int i = 0; i < 9; ++i) targets.push_back(static_cast<double>(rng.below(2)));
  run("logistic_loss", {R({9})}, [targets](ad::Tape&, auto v) { return ad::logistic_loss(v[0], targets); });

  // Hinge with gamma between the column spreads so both branches are exercised.
  {
    Tensor y({12, 6});
    for (std::size_t r = 0; r < 12; ++r)
      for (std::size_t c = 0; c < 6; ++c) y.data[r * 6 + c] = (0.15 + 0.12 * static_cast<double>(c)) * rng.normal();
    run("variance_hinge", {y}, [](ad::Tape&, auto v) { return variance_hinge(v[0], 0.45, 1e-8).value; });
  }

  std::vector<BevMaskPlan> plans;
  for (int n = 0; n < 2; ++n) plans.push_back(random_plan(4, 4, rng));
  run("jepa_loss", {R({2, 4, 4, 5}), R({2, 4, 4, 5})}, [plans](ad::Tape&, auto v) {
    return jepa_loss(ad::l2_normalize(v[0]), ad::l2_normalize(v[1]), plans, 0.25, 0.75).total;
  });
  for (auto [mode, label] : {std::pair{RegNormalization::mean_over_batch, "variance_reg_loss_mean"},
                             std::pair{RegNormalization::sum_over_batch, "variance_reg_loss_sum"},
                             std::pair{RegNormalization::pooled_batch, "variance_reg_loss_pooled"}}) {
    run(label, {R({2, 4, 4, 5}), R({2, 4, 4, 5})}, [plans, mode = mode](ad::Tape&, auto v) {
      return variance_reg_loss(ad::l2_normalize(v[0]), ad::l2_normalize(v[1]), plans, 1.0, 1.0, 0.6, 1e-8, mode)
          .total;
    });
  }
  return all;
}

std::vector<GradCheckResult> model_gradient_suite(const TrainConfig& config, double tolerance,
                                                  const GradCheckOptions& options) {
  validate(config);
  const auto data = synthetic_dataset(config, 2);
  std::vector<BevMaskPlan> plans;
  for (std::size_t i = 0; i < data.size(); ++i) {
    plans.push_back(build_plan(data.clouds[i], config.grid, config.masking_ratio, stream_seed({options.seed, i}),
                               config.mask_empty_cells));
  }
  const auto batch = make_batch(plans, data.clouds, config.grid, config.model.target_input);
  auto state = init_model(config.grid, config.model, config.seed);
  // Let the target drift from the context so both branches differ.
  Rng rng{options.seed, 0x7a};
  for (auto& p : state.target_params())
    for (auto& v : p.tensor->data) v += 0.05 * rng.normal();

  auto params = state.trainable();
  for (auto& p : params) p.tensor->zero_grad();
  {
    ad::Tape tape;
    tape.backward(forward_batch(tape, state, batch, config.objective).total);
  }
  const auto evaluate = [&]() {
    ad::Tape tape;
    return forward_batch(tape, state, batch, config.objective).total.item();
  };

  std::vector<GradCheckResult> results;
  for (auto& p : params) {
    auto& t = *p.tensor;
    const auto entries = probe_entries(t.numel(), options.max_entries, rng);
    std::vector<double> analytic, numeric;
    for (auto i : entries) {
      const double saved = t.data[i];
      t.data[i] = saved + options.step;
      const double up = evaluate();
      t.data[i] = saved - options.step;
      const double down = evaluate();
      t.data[i] = saved;
      numeric.push_back((up - down) / (2 * options.step));
      analytic.push_back(t.grad[i]);
    }
    results.push_back(compare("model." + p.name, analytic, numeric, tolerance));
  }
  return results;
}

}  // namespace adlj
