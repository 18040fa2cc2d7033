#pragma once

// Dense real vectors/matrices and the handful of kernels the RIIU stack needs.
// Everything is double precision and row-major.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace riiu {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {}
  Vector(std::initializer_list<double> values) : data_(values) {}
  explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t dim() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  /// Row-major nested initializer: Matrix{{1, 2}, {3, 4}}.
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Matrix transposed() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Deterministic scalar stream. Uses mt19937_64 (sequence fixed by the
/// standard) and hand-written transforms, so draws do not depend on the
/// standard library's distribution implementations.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t uniform_index(std::size_t n);
  /// Standard normal (Box-Muller, both branches used).
  double normal();
  /// Independent child stream; does not perturb this stream beyond one draw.
  RngStream split();

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Arithmetic -----------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, const Vector& x);
/// aᵀ x without forming the transpose.
Vector matvec_transposed(const Matrix& a, const Vector& x);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Vector add(const Vector& a, const Vector& b);
Vector subtract(const Vector& a, const Vector& b);
Vector scale(const Vector& a, double s);
double dot(const Vector& a, const Vector& b);
double norm2(const Vector& a);
Vector concat(std::initializer_list<const Vector*> parts);

double frobenius_norm(const Matrix& m);
double max_abs_asymmetry(const Matrix& m);

// Statistics -----------------------------------------------------------------

/// Mean-centred covariance with divisor N. Throws InsufficientData for N < 2.
Matrix covariance(std::span<const Vector> samples);
/// Same, with samples stored as the rows of `rows`.
Matrix covariance_rows(const Matrix& rows);
Vector row_mean(const Matrix& rows);

// Symmetric eigendecomposition -------------------------------------------------

struct EigenDecomposition {
  Vector values;  ///< descending
  Matrix vectors; ///< column j pairs with values[j]
};

/// Cyclic Jacobi rotations. Stops once the off-diagonal Frobenius mass drops
/// below tol·‖m‖_F; throws NumericalFailure after 50 sweeps.
EigenDecomposition sym_eig(const Matrix& m, double tol = 1e-10);

/// Householder tridiagonalisation + implicit QL (Eigen). Same ordering and
/// sign convention as sym_eig; used on the training hot path.
EigenDecomposition sym_eig_fast(const Matrix& m);

/// Flip each column so its largest-magnitude entry is non-negative.
void canonicalize_signs(Matrix& vectors);

// Nonlinearities ---------------------------------------------------------------

/// Exact GELU: x·Φ(x) with Φ the standard normal CDF.
double gelu(double x);
double gelu_grad(double x);
double sigmoid(double x);

}  // namespace riiu
