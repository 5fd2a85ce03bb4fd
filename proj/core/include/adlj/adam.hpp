#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adlj/tensor.hpp"

namespace adlj {

/// A trainable tensor with a stable name (used in diagnostics and checkpoints).
struct NamedParam {
  std::string name;
  Tensor* tensor;
};

/// Adam with bias correction followed by decoupled weight decay
/// p <- p - lr * wd * p.
class Adam {
 public:
  struct Hyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  Adam() = default;
  explicit Adam(Hyper hyper) : hyper_(hyper) {}

  /// Allocates zero moments for every parameter (idempotent per name order).
  void attach(const std::vector<NamedParam>& params);

  /// One update using each parameter's `grad`. Throws NumericalError naming the
  /// parameter if any gradient entry is NaN.
  void step(const std::vector<NamedParam>& params, double lr);

  std::uint64_t step_count() const { return t_; }
  const Hyper& hyper() const { return hyper_; }

  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_step_count(std::uint64_t t) { t_ = t; }

 private:
  Hyper hyper_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace adlj
