#include "adlj/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adlj/errors.hpp"

namespace adlj {

std::vector<double> covariance(std::span<const double> rows, std::size_t m, std::size_t e) {
  if (rows.size() != m * e) throw ShapeError("covariance: data size does not match [M, E]");
  std::vector<double> mean(e, 0.0), cov(e * e, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < e; ++j) mean[j] += rows[r * e + j];
  for (auto& v : mean) v /= static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < e; ++i)
      for (std::size_t j = 0; j < e; ++j) cov[i * e + j] += (rows[r * e + i] - mean[i]) * (rows[r * e + j] - mean[j]);
  for (auto& v : cov) v /= static_cast<double>(m);
  return cov;
}

double effective_rank(std::span<const double> singular_values) {
  double total = 0;
  for (double s : singular_values) total += s * s;
  if (!(total > 0)) return 0.0;
  double h = 0;
  for (double s : singular_values) {
    const double p = s * s / total;
    if (p > 0) h -= p * std::log(p);
  }
  return std::exp(h);
}

SpectrumReport svd_spectrum(std::span<const double> rows, std::size_t m, std::size_t e, JacobiOptions options) {
  if (e == 0) throw ShapeError("svd_spectrum: embedding dimension is 0");
  if (rows.size() != m * e) {
    throw ShapeError("svd_spectrum: " + std::to_string(rows.size()) + " values do not form [" + std::to_string(m) +
                     ", " + std::to_string(e) + "]");
  }
  if (m < 2) throw ShapeError("svd_spectrum: need at least 2 rows, got " + std::to_string(m));

  // Column-major centered copy: column j is a[j*m .. j*m+m).
  std::vector<double> a(m * e);
  for (std::size_t j = 0; j < e; ++j) {
    double mean = 0;
    for (std::size_t r = 0; r < m; ++r) mean += rows[r * e + j];
    mean /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r) a[j * m + r] = rows[r * e + j] - mean;
  }
  std::vector<double> v(e * e, 0.0);  // column-major as well
  for (std::size_t j = 0; j < e; ++j) v[j * e + j] = 1.0;

  SpectrumReport rep;
  rep.rows = m;
  rep.dim = e;
  for (std::size_t sweep = 0; sweep < options.max_sweeps; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p + 1 < e; ++p) {
      for (std::size_t q = p + 1; q < e; ++q) {
        double alpha = 0, beta = 0, gamma = 0;
        double* ap = &a[p * m];
        double* aq = &a[q * m];
        for (std::size_t r = 0; r < m; ++r) {
          alpha += ap[r] * ap[r];
          beta += aq[r] * aq[r];
          gamma += ap[r] * aq[r];
        }
        if (alpha == 0 || beta == 0 || gamma == 0) continue;
        off += 2 * gamma * gamma / (alpha * beta);
        const double zeta = (beta - alpha) / (2 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1 + zeta * zeta));
        const double c = 1 / std::sqrt(1 + t * t);
        const double s = c * t;
        for (std::size_t r = 0; r < m; ++r) {
          const double x = ap[r], y = aq[r];
          ap[r] = c * x - s * y;
          aq[r] = s * x + c * y;
        }
        double* vp = &v[p * e];
        double* vq = &v[q * e];
        for (std::size_t r = 0; r < e; ++r) {
          const double x = vp[r], y = vq[r];
          vp[r] = c * x - s * y;
          vq[r] = s * x + c * y;
        }
      }
    }
    rep.sweeps = sweep + 1;
    if (std::sqrt(off) < options.tolerance) break;
  }

  std::vector<double> sigma(e);
  for (std::size_t j = 0; j < e; ++j) {
    double n = 0;
    for (std::size_t r = 0; r < m; ++r) n += a[j * m + r] * a[j * m + r];
    sigma[j] = std::sqrt(n);
  }
  std::vector<std::size_t> order(e);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  rep.vectors.assign(e * e, 0.0);
  for (std::size_t k = 0; k < e; ++k) {
    rep.singular_values.push_back(sigma[order[k]]);
    for (std::size_t r = 0; r < e; ++r) rep.vectors[r * e + k] = v[order[k] * e + r];
  }
  const double top = rep.singular_values.front();
  double total = 0;
  for (double s : rep.singular_values) total += s * s;
  double run = 0;
  for (double s : rep.singular_values) {
    rep.normalized.push_back(top > 0 ? s / top : 0.0);
    run += s * s;
    rep.cumulative.push_back(total > 0 ? run / total : 1.0);
  }
  if (total > 0) rep.cumulative.back() = 1.0;
  rep.effective_rank = effective_rank(rep.singular_values);
  return rep;
}

std::vector<double> reconstruct_covariance(const SpectrumReport& report) {
  const auto e = report.dim;
  std::vector<double> cov(e * e, 0.0);
  for (std::size_t k = 0; k < e; ++k) {
    const double lambda = report.singular_values[k] * report.singular_values[k] / static_cast<double>(report.rows);
    for (std::size_t i = 0; i < e; ++i)
      for (std::size_t j = 0; j < e; ++j)
        cov[i * e + j] += lambda * report.vectors[i * e + k] * report.vectors[j * e + k];
  }
  return cov;
}

}  // namespace adlj
