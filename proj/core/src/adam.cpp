#include "adlj/adam.hpp"

#include <cmath>

#include "adlj/errors.hpp"

namespace adlj {

void Adam::attach(const std::vector<NamedParam>& params) {
  m_.clear();
  v_.clear();
  for (const auto& p : params) {
    m_.emplace_back(p.tensor->shape);
    v_.emplace_back(p.tensor->shape);
  }
  t_ = 0;
}

void Adam::step(const std::vector<NamedParam>& params, double lr) {
  if (m_.size() != params.size()) throw std::logic_error("Adam::step: optimizer not attached to these parameters");
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& p = *params[k].tensor;
    if (p.shape != m_[k].shape) {
      throw ShapeError("Adam::step: parameter '" + params[k].name + "' changed shape to " + shape_str(p.shape));
    }
    if (!p.grad.empty() && p.grad.size() != p.numel()) {
      throw ShapeError("Adam::step: gradient of '" + params[k].name + "' has wrong length");
    }
    for (double g : p.grad) {
      if (std::isnan(g)) throw NumericalError("Adam::step: NaN gradient in parameter '" + params[k].name + "'");
    }
  }

  ++t_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k].tensor;
    auto& m = m_[k].data;
    auto& v = v_[k].data;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double g = p.grad.empty() ? 0.0 : p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + hyper_.eps);
      p.data[i] -= lr * hyper_.weight_decay * p.data[i];
    }
  }
}

}  // namespace adlj
