#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace adlj {

/// Singular-value summary of a column-centered [M, E] embedding matrix.
struct SpectrumReport {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> singular_values;  // non-increasing
  std::vector<double> normalized;       // sigma_i / sigma_1 (0 when sigma_1 == 0)
  std::vector<double> cumulative;       // explained variance, last entry 1
  /// exp(entropy of sigma_i^2 / sum sigma_j^2); 0 for a zero matrix.
  double effective_rank = 0;
  /// Right singular vectors, row-major [E, E]; column i pairs with sigma_i.
  std::vector<double> vectors;
  std::size_t sweeps = 0;
};

struct JacobiOptions {
  double tolerance = 1e-10;  // off-diagonal Frobenius norm of the normalized Gram matrix
  std::size_t max_sweeps = 100;
};

/// Centers the columns of `rows` ([M, E], row-major) and diagonalizes the
/// covariance by cyclic Jacobi rotations applied to the columns of the centered
/// matrix, so sigma_i are its singular values without forming X^T X.
/// Throws ShapeError when M < 2 or the size does not match.
SpectrumReport svd_spectrum(std::span<const double> rows, std::size_t m, std::size_t e, JacobiOptions options = {});

/// Population covariance V diag(sigma^2 / M) V^T rebuilt from the report, row-major [E, E].
std::vector<double> reconstruct_covariance(const SpectrumReport& report);

/// Population covariance of the columns of `rows`, row-major [E, E].
std::vector<double> covariance(std::span<const double> rows, std::size_t m, std::size_t e);

/// exp of the Shannon entropy of sigma^2 normalized to sum 1.
double effective_rank(std::span<const double> singular_values);

}  // namespace adlj
