#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "adlj/tensor.hpp"

namespace adlj::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the owning tape is alive.
class Var {
 public:
  Var() = default;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }
  bool requires_grad() const;
  /// Scalar value; throws unless numel() == 1.
  double item() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only record of operations. Backward visits nodes in strict
/// reverse creation order; each tape owns its own adjoints, so two tapes
/// never share gradient state. Parameters bound with `parameter()` receive
/// their gradient (accumulated) when backward() finishes.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Trainable leaf. `param` must outlive this tape's backward() call.
  Var parameter(Tensor& param);

  /// Records an op result. `backward` is only kept when some input needs grad.
  Var record(Tensor value, bool requires_grad, BackwardFn backward);

  void backward(const Var& loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Adjoint buffer of a node (zero-filled on first access).
  std::vector<double>& grad(std::size_t id);
  std::span<const double> grad_of(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    Tensor* param = nullptr;
    BackwardFn backward;
  };

  // deque: references to recorded values stay valid while the tape grows.
  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Elementwise / shape ops. Operands must live on the same tape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var relu(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& axes);

/// y = x W^T + b with x [M,K], W [N,K], b [N].
Var linear(const Var& x, const Var& weight, const Var& bias);

/// Cross-correlation (no kernel flip). Bias of shape [Cout] is optional
/// (pass a default-constructed Var to omit).
Var conv3d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding);
Var conv2d(const Var& input, const Var& kernel, const Var& bias, int stride, int padding);

inline constexpr double kNormEps = 1e-12;

/// Divides each last-axis slice by max(||x||, eps).
Var l2_normalize(const Var& x, double eps = kNormEps);
/// Per last-axis slice: a.b / (max(|a|,eps) max(|b|,eps)). Output drops the last axis.
Var cosine_similarity(const Var& a, const Var& b, double eps = kNormEps);

/// Rows `rows` of a 2-D tensor, in the given order.
Var select_rows(const Var& x, std::span<const std::size_t> rows);
/// Copy of 2-D `x` with the listed rows overwritten by the 1-D `row`.
Var replace_rows(const Var& x, std::span<const std::size_t> rows, const Var& row);
/// Per-column sqrt(population variance + eps) of a 2-D [M,C] tensor -> [C].
Var column_std(const Var& x, double eps);
/// Mean binary cross-entropy with logits against constant 0/1 targets.
Var logistic_loss(const Var& logits, std::span<const double> targets);

}  // namespace adlj::ad
