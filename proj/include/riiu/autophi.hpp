#pragma once

// Auto-Phi: the relative spectral residual of a sliding-window state
// covariance,
//
//   phi = ||S - U_r U_r^T S||_F / (||S||_F + eps),
//
// where U_r spans the top-r eigenvectors of S. Only eigenvalues past the
// r-th contribute to the numerator, so phi is 0 whenever the window's
// covariance has rank <= r.

#include <cstddef>
#include <span>
#include <vector>

#include "riiu/tensor.hpp"

namespace riiu::autophi {

enum class Normalization {
  standard,      ///< ||R||_F / (||S||_F + eps)
  /// sum_b ||R_b||_F / (||S_b||_F + eps) over row blocks R_b, S_b of the
  /// residual and the covariance; ranges over [0, number of blocks].
  sum_of_norms,
};

struct PhiConfig {
  std::size_t rank = 16;
  double epsilon = 1e-9;
  Normalization normalization = Normalization::standard;
  /// Row-block sizes for sum_of_norms; empty means one block.
  std::vector<std::size_t> blocks;

  /// Throws std::invalid_argument if inconsistent with a state of width `dim`.
  void validate(std::size_t dim) const;
};

/// Fixed-capacity ring of state snapshots. Entries are plain values: nothing
/// stored here participates in differentiation.
class SlidingBuffer {
 public:
  SlidingBuffer() = default;
  SlidingBuffer(std::size_t capacity, std::size_t dim);

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return count_; }
  bool full() const { return count_ == capacity_; }

  void push(std::span<const double> z);
  void push(const Vector& z) { push(z.span()); }

  /// Current contents, oldest first, one sample per row.
  Matrix window() const;
  /// Contents as they would be after push(z), oldest first; z is the last row.
  Matrix window_with(std::span<const double> z) const;

  /// i-th entry counting from the oldest retained sample.
  std::span<const double> entry(std::size_t i) const;

  void clear();

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::size_t write_ = 0;
  std::size_t count_ = 0;
  Matrix storage_;
};

/// Residual and total Frobenius norms of S under its own top-`rank` subspace.
struct ResidualParts {
  double residual = 0.0;
  double total = 0.0;
};
ResidualParts residual_parts(const Matrix& sigma, std::size_t rank);

/// phi evaluated directly on a covariance matrix.
double auto_phi_cov(const Matrix& sigma, const PhiConfig& cfg);

/// phi over a window of samples (rows). Fewer than two rows gives 0.
double auto_phi_rows(const Matrix& rows, const PhiConfig& cfg);
double auto_phi_rel(std::span<const Vector> samples, const PhiConfig& cfg);

struct PhiEvaluation {
  double value = 0.0;
  /// d phi / d row[current] with U_r held fixed. Zero during warm-up.
  Vector gradient;
  /// lambda_r - lambda_{r+1}; +inf when rank >= dim.
  double eigengap = 0.0;
  bool degenerate = false;
};

/// Value and fixed-subspace gradient with respect to one row, sharing a
/// single eigendecomposition. Requires standard normalization.
PhiEvaluation evaluate(const Matrix& rows, std::size_t current, const PhiConfig& cfg);

Vector grad_auto_phi(std::span<const Vector> samples, std::size_t current_index,
                     const PhiConfig& cfg);

/// 2 * lambda_max(S) / (||S||_F + eps).
double lipschitz_bound(const Matrix& sigma, double epsilon);

struct AscentCheck {
  double phi_before = 0.0;
  double phi_after = 0.0;
  double gradient_norm = 0.0;
};

/// Moves sample `current_index` by eta * grad and re-measures phi.
/// Requires 0 <= eta < 2 / lipschitz_bound (any eta when the bound is 0).
AscentCheck ascent_step_check(std::span<const Vector> samples, std::size_t current_index,
                              const PhiConfig& cfg, double eta);

/// Number of evaluations so far whose r / r+1 eigengap fell below 1e-12.
std::size_t degenerate_spectrum_count();

namespace testing {
/// Multiplies every gradient produced by evaluate(); used to prove that the
/// gradient checks notice a broken rule. Not thread-safe.
class ScopedGradientFault {
 public:
  explicit ScopedGradientFault(double factor);
  ~ScopedGradientFault();
  ScopedGradientFault(const ScopedGradientFault&) = delete;
  ScopedGradientFault& operator=(const ScopedGradientFault&) = delete;

 private:
  double previous_;
};
}  // namespace testing

}  // namespace riiu::autophi
