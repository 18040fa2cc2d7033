#include "riiu/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "riiu/error.hpp"

namespace riiu {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ShapeError(what);
}

void sort_descending(EigenDecomposition& eig) {
  const std::size_t n = eig.values.dim();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // stable: equal eigenvalues keep solver order
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return eig.values[a] > eig.values[b]; });
  Vector values(n);
  Matrix vectors(eig.vectors.rows(), n);
  for (std::size_t j = 0; j < n; ++j) {
    values[j] = eig.values[order[j]];
    for (std::size_t i = 0; i < vectors.rows(); ++i) vectors(i, j) = eig.vectors(i, order[j]);
  }
  eig.values = std::move(values);
  eig.vectors = std::move(vectors);
}

}  // namespace

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, "Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

// RngStream ------------------------------------------------------------------

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t RngStream::uniform_index(std::size_t n) {
  auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
  return std::min(k, n - 1);
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

RngStream RngStream::split() {
  // splitmix64 finaliser keeps child seeds decorrelated from the parent
  std::uint64_t z = engine_() + 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return RngStream(z ^ (z >> 31));
}

// Arithmetic -----------------------------------------------------------------

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul: a.cols != b.rows");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
  require(a.cols() == x.dim(), "matvec: a.cols != x.dim");
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto row = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) s += row[j] * x[j];
    out[i] = s;
  }
  return out;
}

Vector matvec_transposed(const Matrix& a, const Vector& x) {
  require(a.rows() == x.dim(), "matvec_transposed: a.rows != x.dim");
  Vector out(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    auto row = a.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) out[j] += row[j] * xi;
  }
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "subtract: shape mismatch");
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.span()) v *= s;
  return out;
}

Vector add(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "add: dim mismatch");
  Vector out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] += b[i];
  return out;
}

Vector subtract(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "subtract: dim mismatch");
  Vector out = a;
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] -= b[i];
  return out;
}

Vector scale(const Vector& a, double s) {
  Vector out = a;
  for (double& v : out) v *= s;
  return out;
}

double dot(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "dot: dim mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

Vector concat(std::initializer_list<const Vector*> parts) {
  std::vector<double> out;
  for (const Vector* p : parts) out.insert(out.end(), p->begin(), p->end());
  return Vector(std::move(out));
}

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double v : m.span()) s += v * v;
  return std::sqrt(s);
}

double max_abs_asymmetry(const Matrix& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j)
      worst = std::max(worst, std::abs(m(i, j) - m(j, i)));
  return worst;
}

// Statistics -----------------------------------------------------------------

Vector row_mean(const Matrix& rows) {
  Vector mean(rows.cols());
  for (std::size_t n = 0; n < rows.rows(); ++n) {
    auto r = rows.row(n);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
  }
  return scale(mean, 1.0 / static_cast<double>(rows.rows()));
}

Matrix covariance_rows(const Matrix& rows) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  if (n < 2) throw InsufficientData("covariance: need at least 2 samples");
  const Vector mean = row_mean(rows);
  Matrix cov(d, d);
  std::vector<double> c(d);
  for (std::size_t s = 0; s < n; ++s) {
    auto r = rows.row(s);
    for (std::size_t j = 0; j < d; ++j) c[j] = r[j] - mean[j];
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = c[i];
      if (ci == 0.0) continue;
      auto crow = cov.row(i);
      for (std::size_t j = i; j < d; ++j) crow[j] += ci * c[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov(i, j) *= inv_n;
      cov(j, i) = cov(i, j);
    }
  }
  return cov;
}

Matrix covariance(std::span<const Vector> samples) {
  if (samples.size() < 2) throw InsufficientData("covariance: need at least 2 samples");
  const std::size_t d = samples.front().dim();
  Matrix rows(samples.size(), d);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    require(samples[s].dim() == d, "covariance: unequal sample dims");
    std::copy(samples[s].begin(), samples[s].end(), rows.row(s).begin());
  }
  return covariance_rows(rows);
}

// Eigen ----------------------------------------------------------------------

void canonicalize_signs(Matrix& vectors) {
  for (std::size_t j = 0; j < vectors.cols(); ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < vectors.rows(); ++i) {
      const double a = std::abs(vectors(i, j));
      if (a > best + 1e-14) {
        best = a;
        arg = i;
      }
    }
    if (vectors(arg, j) < 0.0)
      for (std::size_t i = 0; i < vectors.rows(); ++i) vectors(i, j) = -vectors(i, j);
  }
}

EigenDecomposition sym_eig(const Matrix& m, double tol) {
  require(m.rows() == m.cols(), "sym_eig: matrix not square");
  if (!(tol > 0.0)) throw std::invalid_argument("sym_eig: tol must be positive");
  const std::size_t n = m.rows();
  const double scale_ref = frobenius_norm(m);
  if (max_abs_asymmetry(m) > 1e-9 * std::max(1.0, scale_ref))
    throw std::invalid_argument("sym_eig: matrix not symmetric");

  Matrix a = m;
  Matrix v = Matrix::identity(n);
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  constexpr int kMaxSweeps = 50;
  const double target = tol * scale_ref;
  bool converged = off_norm() <= target;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
    converged = off_norm() <= target;
  }
  if (!converged) throw NumericalFailure("sym_eig: Jacobi did not converge in 50 sweeps");

  EigenDecomposition eig{Vector(n), std::move(v)};
  for (std::size_t i = 0; i < n; ++i) eig.values[i] = a(i, i);
  sort_descending(eig);
  canonicalize_signs(eig.vectors);
  return eig;
}

EigenDecomposition sym_eig_fast(const Matrix& m) {
  require(m.rows() == m.cols(), "sym_eig_fast: matrix not square");
  const auto n = static_cast<Eigen::Index>(m.rows());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> map(
      m.data(), n, n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(map);
  if (solver.info() != Eigen::Success) throw NumericalFailure("sym_eig_fast: QL iteration failed");

  // Eigen returns ascending order; reverse into descending.
  EigenDecomposition eig{Vector(m.rows()), Matrix(m.rows(), m.rows())};
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index src = n - 1 - j;
    eig.values[static_cast<std::size_t>(j)] = solver.eigenvalues()(src);
    for (Eigen::Index i = 0; i < n; ++i)
      eig.vectors(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) =
          solver.eigenvectors()(i, src);
  }
  canonicalize_signs(eig.vectors);
  return eig;
}

// Nonlinearities ---------------------------------------------------------------

double gelu(double x) { return 0.5 * x * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double gelu_grad(double x) {
  const double cdf = 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace riiu
