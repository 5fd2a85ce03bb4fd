#include "adlj/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "adlj/errors.hpp"

namespace adlj {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
}

namespace ad {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

double Var::item() const {
  const auto& v = value();
  if (v.numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(v.shape));
  return v.data[0];
}

Var Tape::constant(Tensor value) {
  value.grad.clear();
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& param) {
  Tensor copy(param.shape, param.data);
  nodes_.push_back(Node{std::move(copy), {}, true, &param, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  if (backward_done_) throw std::logic_error("tape already consumed by backward()");
  Node node{std::move(value), {}, requires_grad, nullptr, {}};
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.numel(), 0.0);
  return node.grad;
}

std::span<const double> Tape::grad_of(const Var& v) const {
  if (&v.tape() != this) throw std::invalid_argument("variable belongs to a different tape");
  return nodes_[v.id()].grad;
}

void Tape::backward(const Var& loss) {
  if (!loss.valid() || &loss.tape() != this) {
    throw std::invalid_argument("backward(): loss was not recorded on this tape");
  }
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward(): loss must be a scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (backward_done_) throw std::logic_error("backward() called twice on the same tape");
  backward_done_ = true;

  if (nodes_[loss.id()].requires_grad) {
    grad(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
      node.backward(*this, id);
    }
  }

  for (auto& node : nodes_) {
    if (!node.param) continue;
    auto& target = node.param->grad;
    if (target.size() != node.value.numel()) target.assign(node.value.numel(), 0.0);
    if (node.grad.empty()) continue;
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += node.grad[i];
  }
}

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("operation on an unbound variable");
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i] != sb[i]) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(i) + " mismatch " +
                       shape_str(sa) + " vs " + shape_str(sb));
    }
  }
}

template <class Fn>
Var unary(const Var& a, Tensor out, Fn local_grad) {
  auto& tape = a.tape();
  const auto in = a.id();
  return tape.record(std::move(out), a.requires_grad(),
                     [in, local_grad](Tape& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       auto& gi = t.grad(in);
                       const auto& x = t.value(in).data;
                       const auto& y = t.value(self).data;
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * local_grad(x[i], y[i]);
                     });
}

}  // namespace

Var add(const Var& a, const Var& b) {
  auto& tape = common_tape(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bd[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       for (auto id : {ia, ib}) {
                         if (!t.requires_grad(id)) continue;
                         auto& gi = t.grad(id);
                         for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                       }
                     });
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  auto& tape = common_tape(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const auto& bd = b.value().data;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bd[i];
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       const auto& av = t.value(ia).data;
                       const auto& bv = t.value(ib).data;
                       if (t.requires_grad(ia)) {
                         auto& ga = t.grad(ia);
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                       }
                     });
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= factor;
  return unary(a, std::move(out), [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
  Tensor out = a.value();
  for (auto& v : out.data) v += offset;
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return unary(a, std::move(out), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sum(const Var& a) {
  double total = 0.0;
  for (double v : a.value().data) total += v;
  const auto in = a.id();
  return a.tape().record(Tensor({1}, total), a.requires_grad(), [in](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& gi : t.grad(in)) gi += g;
  });
}

Var mean(const Var& a) {
  const auto n = a.numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                     ": element count differs");
  }
  Tensor out(std::move(shape), a.value().data);
  return unary(a, std::move(out), [](double, double) { return 1.0; });
}

Var permute(const Var& a, const std::vector<std::size_t>& axes) {
  const auto& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  if (axes.size() != rank) throw ShapeError("permute: axis list length differs from rank");
  std::vector<bool> seen(rank, false);
  for (auto ax : axes) {
    if (ax >= rank || seen[ax]) throw ShapeError("permute: invalid axis list");
    seen[ax] = true;
  }
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];

  // source[k] = flat input index of output element k
  const std::size_t n = a.numel();
  std::vector<std::size_t> source(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * in_strides[axes[i]];
    source[k] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }

  Tensor out(out_shape);
  const auto& src = a.value().data;
  for (std::size_t k = 0; k < n; ++k) out.data[k] = src[source[k]];
  const auto in = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [in, source = std::move(source)](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           auto& gi = t.grad(in);
                           for (std::size_t k = 0; k < g.size(); ++k) gi[source[k]] += g[k];
                         });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  auto& tape = common_tape(x, weight);
  common_tape(x, bias);
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (xs.size() != 2) throw ShapeError("linear: input must be 2-D, got " + shape_str(xs));
  if (ws.size() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(ws));
  if (ws[1] != xs[1]) throw ShapeError("linear: axis 1 of input and weight differ");
  if (bias.shape() != Shape{ws[0]}) throw ShapeError("linear: bias must have shape [" + std::to_string(ws[0]) + "]");
  const std::size_t m = xs[0], k = xs[1], n = ws[0];
  Tensor out({m, n});
  const auto& xv = x.value().data;
  const auto& wv = weight.value().data;
  const auto& bv = bias.value().data;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double acc = bv[c];
      for (std::size_t j = 0; j < k; ++j) acc += xv[r * k + j] * wv[c * k + j];
      out.data[r * n + c] = acc;
    }
  }
  const auto ix = x.id(), iw = weight.id(), ib = bias.id();
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return tape.record(std::move(out), rg, [ix, iw, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(ix).data;
    const auto& wv = t.value(iw).data;
    if (t.requires_grad(ix)) {
      auto& gx = t.grad(ix);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += g[r * n + c] * wv[c * k + j];
    }
    if (t.requires_grad(iw)) {
      auto& gw = t.grad(iw);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c)
          for (std::size_t j = 0; j < k; ++j) gw[c * k + j] += g[r * n + c] * xv[r * k + j];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

Var l2_normalize(const Var& x, double eps) {
  const auto& shape = x.shape();
  if (shape.empty() || shape.back() == 0) throw ShapeError("l2_normalize: last axis must be non-empty");
  const std::size_t e = shape.back();
  const std::size_t rows = x.numel() / e;
  Tensor out(shape);
  std::vector<double> denom(rows);
  const auto& xv = x.value().data;
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < e; ++j) ss += xv[r * e + j] * xv[r * e + j];
    denom[r] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < e; ++j) out.data[r * e + j] = xv[r * e + j] / denom[r];
  }
  const auto in = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [in, e, rows, eps, denom = std::move(denom)](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           const auto& y = t.value(self).data;
                           auto& gi = t.grad(in);
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double d = denom[r];
                             if (d <= eps) {
                               // Guard active: y = x / eps is linear in x.
                               for (std::size_t j = 0; j < e; ++j) gi[r * e + j] += g[r * e + j] / d;
                               continue;
                             }
                             double gy = 0.0;
                             for (std::size_t j = 0; j < e; ++j) gy += g[r * e + j] * y[r * e + j];
                             for (std::size_t j = 0; j < e; ++j)
                               gi[r * e + j] += (g[r * e + j] - y[r * e + j] * gy) / d;
                           }
                         });
}

Var cosine_similarity(const Var& a, const Var& b, double eps) {
  auto& tape = common_tape(a, b);
  require_same_shape(a, b, "cosine_similarity");
  const auto& shape = a.shape();
  if (shape.empty() || shape.back() == 0) throw ShapeError("cosine_similarity: last axis must be non-empty");
  const std::size_t e = shape.back();
  const std::size_t rows = a.numel() / e;
  Shape out_shape(shape.begin(), shape.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  std::vector<double> na(rows), nb(rows), dot(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (std::size_t j = 0; j < e; ++j) {
      const double x = av[r * e + j], y = bv[r * e + j];
      saa += x * x;
      sbb += y * y;
      sab += x * y;
    }
    na[r] = std::max(std::sqrt(saa), eps);
    nb[r] = std::max(std::sqrt(sbb), eps);
    dot[r] = sab;
    out.data[r] = sab / (na[r] * nb[r]);
  }
  const auto ia = a.id(), ib = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(
      std::move(out), rg,
      [ia, ib, e, rows, eps, na = std::move(na), nb = std::move(nb), dot = std::move(dot)](
          Tape& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& av = t.value(ia).data;
        const auto& bv = t.value(ib).data;
        // d cos / d a = b/(|a||b|) - cos * a / |a|^2 (second term absent when guarded)
        auto side = [&](std::size_t id, const std::vector<double>& self_v,
                        const std::vector<double>& other_v, const std::vector<double>& n_self,
                        const std::vector<double>& n_other) {
          if (!t.requires_grad(id)) return;
          auto& gi = t.grad(id);
          for (std::size_t r = 0; r < rows; ++r) {
            const double inv = 1.0 / (n_self[r] * n_other[r]);
            const double c = dot[r] * inv;
            const double self_term = n_self[r] > eps ? c / (n_self[r] * n_self[r]) : 0.0;
            for (std::size_t j = 0; j < e; ++j)
              gi[r * e + j] += g[r] * (other_v[r * e + j] * inv - self_term * self_v[r * e + j]);
          }
        };
        side(ia, av, bv, na, nb);
        side(ib, bv, av, nb, na);
      });
}

Var select_rows(const Var& x, std::span<const std::size_t> rows) {
  const auto& shape = x.shape();
  if (shape.size() != 2) throw ShapeError("select_rows: input must be 2-D, got " + shape_str(shape));
  const std::size_t m = shape[0], e = shape[1];
  for (auto r : rows) {
    if (r >= m) throw ShapeError("select_rows: row " + std::to_string(r) + " out of range on axis 0");
  }
  Tensor out({rows.size(), e});
  const auto& xv = x.value().data;
  for (std::size_t k = 0; k < rows.size(); ++k)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(rows[k] * e), e,
                out.data.begin() + static_cast<std::ptrdiff_t>(k * e));
  const auto in = x.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape().record(std::move(out), x.requires_grad(),
                         [in, e, idx = std::move(idx)](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           auto& gi = t.grad(in);
                           for (std::size_t k = 0; k < idx.size(); ++k)
                             for (std::size_t j = 0; j < e; ++j) gi[idx[k] * e + j] += g[k * e + j];
                         });
}

Var replace_rows(const Var& x, std::span<const std::size_t> rows, const Var& row) {
  auto& tape = common_tape(x, row);
  const auto& shape = x.shape();
  if (shape.size() != 2) throw ShapeError("replace_rows: input must be 2-D, got " + shape_str(shape));
  const std::size_t m = shape[0], e = shape[1];
  if (row.shape() != Shape{e}) {
    throw ShapeError("replace_rows: replacement row must have shape [" + std::to_string(e) +
                     "] matching axis 1, got " + shape_str(row.shape()));
  }
  std::vector<char> replaced(m, 0);
  for (auto r : rows) {
    if (r >= m) throw ShapeError("replace_rows: row " + std::to_string(r) + " out of range on axis 0");
    replaced[r] = 1;
  }
  Tensor out = x.value();
  const auto& rv = row.value().data;
  for (std::size_t r = 0; r < m; ++r)
    if (replaced[r]) std::copy(rv.begin(), rv.end(), out.data.begin() + static_cast<std::ptrdiff_t>(r * e));
  const auto ix = x.id(), ir = row.id();
  return tape.record(std::move(out), x.requires_grad() || row.requires_grad(),
                     [ix, ir, m, e, replaced = std::move(replaced)](Tape& t, std::size_t self) {
                       const auto& g = t.grad(self);
                       if (t.requires_grad(ix)) {
                         auto& gx = t.grad(ix);
                         for (std::size_t r = 0; r < m; ++r)
                           if (!replaced[r])
                             for (std::size_t j = 0; j < e; ++j) gx[r * e + j] += g[r * e + j];
                       }
                       if (t.requires_grad(ir)) {
                         auto& gr = t.grad(ir);
                         for (std::size_t r = 0; r < m; ++r)
                           if (replaced[r])
                             for (std::size_t j = 0; j < e; ++j) gr[j] += g[r * e + j];
                       }
                     });
}

Var column_std(const Var& x, double eps) {
  const auto& shape = x.shape();
  if (shape.size() != 2) throw ShapeError("column_std: input must be 2-D, got " + shape_str(shape));
  const std::size_t m = shape[0], c = shape[1];
  if (m == 0) throw ShapeError("column_std: axis 0 is empty");
  const auto& xv = x.value().data;
  std::vector<double> mu(c, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < c; ++j) mu[j] += xv[r * c + j];
  for (auto& v : mu) v /= static_cast<double>(m);
  Tensor out({c});
  for (std::size_t j = 0; j < c; ++j) {
    double var = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
      const double d = xv[r * c + j] - mu[j];
      var += d * d;
    }
    out.data[j] = std::sqrt(var / static_cast<double>(m) + eps);
  }
  const auto in = x.id();
  return x.tape().record(std::move(out), x.requires_grad(),
                         [in, m, c, mu = std::move(mu)](Tape& t, std::size_t self) {
                           const auto& g = t.grad(self);
                           const auto& s = t.value(self).data;
                           const auto& xv = t.value(in).data;
                           auto& gi = t.grad(in);
                           // d s_j / d x_rj = (x_rj - mu_j) / (m s_j)
                           for (std::size_t j = 0; j < c; ++j) {
                             const double f = g[j] / (static_cast<double>(m) * s[j]);
                             for (std::size_t r = 0; r < m; ++r) gi[r * c + j] += f * (xv[r * c + j] - mu[j]);
                           }
                         });
}

Var logistic_loss(const Var& logits, std::span<const double> targets) {
  const std::size_t n = logits.numel();
  if (targets.size() != n) throw ShapeError("logistic_loss: target count differs from logit count");
  if (n == 0) throw ShapeError("logistic_loss: empty input");
  const auto& z = logits.value().data;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    // softplus(z) - y z, evaluated stably
    const double zi = z[i];
    const double softplus = zi > 0 ? zi + std::log1p(std::exp(-zi)) : std::log1p(std::exp(zi));
    total += softplus - targets[i] * zi;
  }
  const auto in = logits.id();
  std::vector<double> y(targets.begin(), targets.end());
  return logits.tape().record(Tensor({1}, total / static_cast<double>(n)), logits.requires_grad(),
                              [in, n, y = std::move(y)](Tape& t, std::size_t self) {
                                const double g = t.grad(self)[0] / static_cast<double>(n);
                                const auto& z = t.value(in).data;
                                auto& gi = t.grad(in);
                                for (std::size_t i = 0; i < n; ++i) {
                                  const double p = 1.0 / (1.0 + std::exp(-z[i]));
                                  gi[i] += g * (p - y[i]);
                                }
                              });
}

}  // namespace ad
}  // namespace adlj
