#include "riiu/autophi.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "riiu/error.hpp"

namespace riiu::autophi {

namespace {

std::atomic<std::size_t> g_degenerate{0};
double g_gradient_factor = 1.0;

constexpr double kDegenerateGap = 1e-12;
// Eigenvalues this far below the largest are rounding noise of a rank-deficient
// covariance and are treated as exact zeros.
constexpr double kRelativeZero = 1e-13;

double clamp_tail_eigenvalue(double lambda, double lambda_scale) {
  return std::abs(lambda) <= kRelativeZero * lambda_scale ? 0.0 : lambda;
}

double lambda_scale(const Vector& values) {
  double s = 0.0;
  for (double v : values) s = std::max(s, std::abs(v));
  return s;
}

Matrix tail_residual(const EigenDecomposition& eig, std::size_t rank) {
  const std::size_t d = eig.values.dim();
  const double scale_ref = lambda_scale(eig.values);
  Matrix r(d, d);
  for (std::size_t k = rank; k < d; ++k) {
    const double lambda = clamp_tail_eigenvalue(eig.values[k], scale_ref);
    if (lambda == 0.0) continue;
    for (std::size_t i = 0; i < d; ++i) {
      const double ui = lambda * eig.vectors(i, k);
      for (std::size_t j = 0; j < d; ++j) r(i, j) += ui * eig.vectors(j, k);
    }
  }
  return r;
}

std::vector<double> block_norms(const Matrix& m, const std::vector<std::size_t>& blocks) {
  std::vector<double> out;
  std::size_t start = 0;
  for (std::size_t b : blocks) {
    double s = 0.0;
    for (std::size_t i = start; i < start + b; ++i)
      for (double v : m.row(i)) s += v * v;
    out.push_back(std::sqrt(s));
    start += b;
  }
  return out;
}

}  // namespace

void PhiConfig::validate(std::size_t dim) const {
  if (rank == 0) throw std::invalid_argument("PhiConfig: rank must be positive");
  if (rank > dim) throw std::invalid_argument("PhiConfig: rank exceeds state dim");
  if (!(epsilon > 0.0)) throw std::invalid_argument("PhiConfig: epsilon must be positive");
  if (!blocks.empty() &&
      std::accumulate(blocks.begin(), blocks.end(), std::size_t{0}) != dim)
    throw std::invalid_argument("PhiConfig: block sizes do not sum to state dim");
}

// SlidingBuffer --------------------------------------------------------------

SlidingBuffer::SlidingBuffer(std::size_t capacity, std::size_t dim)
    : capacity_(capacity), dim_(dim), storage_(capacity, dim) {
  if (capacity == 0 || dim == 0) throw std::invalid_argument("SlidingBuffer: zero size");
}

void SlidingBuffer::push(std::span<const double> z) {
  if (z.size() != dim_) throw ShapeError("SlidingBuffer::push: dim mismatch");
  std::copy(z.begin(), z.end(), storage_.row(write_).begin());
  write_ = (write_ + 1) % capacity_;
  count_ = std::min(count_ + 1, capacity_);
}

std::span<const double> SlidingBuffer::entry(std::size_t i) const {
  if (i >= count_) throw std::out_of_range("SlidingBuffer::entry");
  const std::size_t oldest = full() ? write_ : 0;
  return storage_.row((oldest + i) % capacity_);
}

Matrix SlidingBuffer::window() const {
  Matrix rows(count_, dim_);
  for (std::size_t i = 0; i < count_; ++i) {
    auto src = entry(i);
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  return rows;
}

Matrix SlidingBuffer::window_with(std::span<const double> z) const {
  if (z.size() != dim_) throw ShapeError("SlidingBuffer::window_with: dim mismatch");
  const std::size_t keep = full() ? count_ - 1 : count_;
  const std::size_t skip = count_ - keep;
  Matrix rows(keep + 1, dim_);
  for (std::size_t i = 0; i < keep; ++i) {
    auto src = entry(i + skip);
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  std::copy(z.begin(), z.end(), rows.row(keep).begin());
  return rows;
}

void SlidingBuffer::clear() {
  write_ = 0;
  count_ = 0;
}

// Values ---------------------------------------------------------------------

ResidualParts residual_parts(const Matrix& sigma, std::size_t rank) {
  ResidualParts parts;
  parts.total = frobenius_norm(sigma);
  if (parts.total == 0.0 || rank >= sigma.rows()) return parts;
  const EigenDecomposition eig = sym_eig_fast(sigma);
  const double scale_ref = lambda_scale(eig.values);
  double s = 0.0;
  for (std::size_t k = rank; k < eig.values.dim(); ++k) {
    const double lambda = clamp_tail_eigenvalue(eig.values[k], scale_ref);
    s += lambda * lambda;
  }
  parts.residual = std::sqrt(s);
  return parts;
}

double auto_phi_cov(const Matrix& sigma, const PhiConfig& cfg) {
  if (sigma.rows() != sigma.cols()) throw ShapeError("auto_phi_cov: non-square covariance");
  cfg.validate(sigma.rows());
  const std::size_t rank = std::min(cfg.rank, sigma.rows());

  if (cfg.normalization == Normalization::standard || cfg.blocks.size() <= 1) {
    const ResidualParts parts = residual_parts(sigma, rank);
    return std::clamp(parts.residual / (parts.total + cfg.epsilon), 0.0, 1.0);
  }

  if (rank >= sigma.rows() || frobenius_norm(sigma) == 0.0) return 0.0;
  const std::vector<double> totals = block_norms(sigma, cfg.blocks);
  const std::vector<double> residuals =
      block_norms(tail_residual(sym_eig_fast(sigma), rank), cfg.blocks);
  double phi = 0.0;
  for (std::size_t b = 0; b < totals.size(); ++b) phi += residuals[b] / (totals[b] + cfg.epsilon);
  return phi;
}

double auto_phi_rows(const Matrix& rows, const PhiConfig& cfg) {
  if (rows.rows() < 2) return 0.0;
  return auto_phi_cov(covariance_rows(rows), cfg);
}

double auto_phi_rel(std::span<const Vector> samples, const PhiConfig& cfg) {
  if (samples.size() < 2) return 0.0;
  return auto_phi_cov(covariance(samples), cfg);
}

// Gradient -------------------------------------------------------------------

PhiEvaluation evaluate(const Matrix& rows, std::size_t current, const PhiConfig& cfg) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  if (current >= n) throw std::out_of_range("autophi::evaluate: current index");
  if (cfg.normalization != Normalization::standard && cfg.blocks.size() > 1)
    throw std::invalid_argument("autophi::evaluate: gradient needs standard normalization");
  cfg.validate(d);

  PhiEvaluation out;
  out.gradient = Vector(d);
  out.eigengap = std::numeric_limits<double>::infinity();
  if (n < 2) return out;

  const Matrix sigma = covariance_rows(rows);
  const double total = frobenius_norm(sigma);
  const std::size_t rank = std::min(cfg.rank, d);
  if (total == 0.0 || rank >= d) return out;

  const EigenDecomposition eig = sym_eig_fast(sigma);
  out.eigengap = eig.values[rank - 1] - eig.values[rank];
  if (out.eigengap < kDegenerateGap) {
    out.degenerate = true;
    g_degenerate.fetch_add(1, std::memory_order_relaxed);
  }

  const double scale_ref = lambda_scale(eig.values);
  std::vector<double> tail(d - rank);
  double residual_sq = 0.0;
  for (std::size_t k = rank; k < d; ++k) {
    tail[k - rank] = clamp_tail_eigenvalue(eig.values[k], scale_ref);
    residual_sq += tail[k - rank] * tail[k - rank];
  }
  const double residual = std::sqrt(residual_sq);
  const double denom = total + cfg.epsilon;
  out.value = std::clamp(residual / denom, 0.0, 1.0);

  // d phi / d z_k = (2/N) G (z_k - mean), G the symmetric d phi / d S:
  //   G = P S / (a (b + eps)) - a S / (b (b + eps)^2),  P S = sum_{i>r} l_i u_i u_i^T
  const Vector mean = row_mean(rows);
  Vector centred(d);
  for (std::size_t j = 0; j < d; ++j) centred[j] = rows(current, j) - mean[j];

  Vector grad(d);
  if (residual > 0.0) {
    for (std::size_t k = rank; k < d; ++k) {
      const double lambda = tail[k - rank];
      if (lambda == 0.0) continue;
      double proj = 0.0;
      for (std::size_t i = 0; i < d; ++i) proj += eig.vectors(i, k) * centred[i];
      const double coeff = lambda * proj / (residual * denom);
      for (std::size_t i = 0; i < d; ++i) grad[i] += coeff * eig.vectors(i, k);
    }
  }
  const Vector sigma_c = matvec(sigma, centred);
  const double norm_coeff = residual / (total * denom * denom);
  const double outer = 2.0 / static_cast<double>(n) * g_gradient_factor;
  for (std::size_t i = 0; i < d; ++i) out.gradient[i] = outer * (grad[i] - norm_coeff * sigma_c[i]);
  return out;
}

Vector grad_auto_phi(std::span<const Vector> samples, std::size_t current_index,
                     const PhiConfig& cfg) {
  if (samples.empty()) throw InsufficientData("grad_auto_phi: no samples");
  const std::size_t d = samples.front().dim();
  Matrix rows(samples.size(), d);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (samples[s].dim() != d) throw ShapeError("grad_auto_phi: unequal sample dims");
    std::copy(samples[s].begin(), samples[s].end(), rows.row(s).begin());
  }
  return evaluate(rows, current_index, cfg).gradient;
}

double lipschitz_bound(const Matrix& sigma, double epsilon) {
  const double total = frobenius_norm(sigma);
  if (total == 0.0) return 0.0;
  const EigenDecomposition eig = sym_eig_fast(sigma);
  return 2.0 * eig.values[0] / (total + epsilon);
}

AscentCheck ascent_step_check(std::span<const Vector> samples, std::size_t current_index,
                              const PhiConfig& cfg, double eta) {
  if (samples.size() < 2) throw InsufficientData("ascent_step_check: need >= 2 samples");
  const Matrix sigma = covariance(samples);
  const double bound = lipschitz_bound(sigma, cfg.epsilon);
  if (eta < 0.0 || (bound > 0.0 && eta >= 2.0 / bound))
    throw std::invalid_argument("ascent_step_check: eta outside [0, 2/L)");

  std::vector<Vector> moved(samples.begin(), samples.end());
  const Vector grad = grad_auto_phi(samples, current_index, cfg);
  AscentCheck out;
  out.phi_before = auto_phi_cov(sigma, cfg);
  out.gradient_norm = norm2(grad);
  for (std::size_t i = 0; i < grad.dim(); ++i) moved[current_index][i] += eta * grad[i];
  out.phi_after = auto_phi_rel(moved, cfg);
  return out;
}

std::size_t degenerate_spectrum_count() { return g_degenerate.load(std::memory_order_relaxed); }

namespace testing {
ScopedGradientFault::ScopedGradientFault(double factor) : previous_(g_gradient_factor) {
  g_gradient_factor = factor;
}
ScopedGradientFault::~ScopedGradientFault() { g_gradient_factor = previous_; }
}  // namespace testing

}  // namespace riiu::autophi
