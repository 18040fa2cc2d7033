#include "riiu/oracle.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "riiu/autophi.hpp"
#include "riiu/error.hpp"

namespace riiu::oracle {

namespace {

Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(r, c);
  return out;
}

double log_det(const Eigen::MatrixXd& m) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw IllConditioned("log_det: matrix is not positive definite");
  const auto& l = llt.matrixL();
  double s = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j)
      out(i, j) = m(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
  return out;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

GaussianSystem::GaussianSystem(Matrix s) : sigma(std::move(s)) {
  if (sigma.rows() != sigma.cols() || sigma.rows() == 0)
    throw ShapeError("GaussianSystem: covariance must be square and non-empty");
  if (max_abs_asymmetry(sigma) > 1e-12 * std::max(1.0, frobenius_norm(sigma)))
    throw IllConditioned("GaussianSystem: covariance is not symmetric");
  const EigenDecomposition eig = sym_eig(sigma);
  if (!(eig.values[eig.values.dim() - 1] > 1e-10))
    throw IllConditioned("GaussianSystem: covariance is not positive definite");
}

double bipartition_mi(const GaussianSystem& sys, const std::vector<std::size_t>& part) {
  const std::size_t d = sys.dim();
  std::vector<bool> in_a(d, false);
  for (std::size_t i : part) {
    if (i >= d) throw std::invalid_argument("bipartition_mi: index out of range");
    if (in_a[i]) throw std::invalid_argument("bipartition_mi: duplicate index");
    in_a[i] = true;
  }
  if (part.empty() || part.size() == d)
    throw std::invalid_argument("bipartition_mi: part must be a nonempty proper subset");
  std::vector<std::size_t> a, b;
  for (std::size_t i = 0; i < d; ++i) (in_a[i] ? a : b).push_back(i);
  const Eigen::MatrixXd s = to_eigen(sys.sigma);
  const double mi = 0.5 * (log_det(submatrix(s, a)) + log_det(submatrix(s, b)) - log_det(s));
  // Rounding can push an exact zero slightly negative.
  return std::max(0.0, mi);
}

double oracle_phi(const GaussianSystem& sys) {
  const std::size_t d = sys.dim();
  if (d > kMaxOracleDim) throw std::invalid_argument("oracle_phi: dim exceeds combinatorial guard");
  if (d < 2) throw std::invalid_argument("oracle_phi: need at least two dimensions");
  const Eigen::MatrixXd s = to_eigen(sys.sigma);
  const double full = log_det(s);
  double best = std::numeric_limits<double>::infinity();
  // The last index always sits in B, so each cut is visited once.
  const std::uint32_t n_masks = 1u << (d - 1);
  for (std::uint32_t mask = 1; mask < n_masks; ++mask) {
    std::vector<std::size_t> a, b;
    for (std::size_t i = 0; i < d; ++i) ((i + 1 < d && (mask >> i) & 1u) ? a : b).push_back(i);
    const double mi =
        std::max(0.0, 0.5 * (log_det(submatrix(s, a)) + log_det(submatrix(s, b)) - full));
    best = std::min(best, mi / static_cast<double>(std::min(a.size(), b.size())));
  }
  return best;
}

GaussianSystem random_system(RngStream& rng, std::size_t dim) {
  Matrix a(dim, dim);
  for (double& v : a.span()) v = rng.normal();
  Matrix s = matmul(a, a.transposed());
  for (std::size_t i = 0; i < dim; ++i) s(i, i) += 0.1;
  // Symmetrize exactly; the product is symmetric only up to rounding order.
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i + 1; j < dim; ++j) s(j, i) = s(i, j);
  return GaussianSystem(std::move(s));
}

std::vector<Vector> sample_gaussian(RngStream& rng, const GaussianSystem& sys, std::size_t n) {
  const std::size_t d = sys.dim();
  Eigen::LLT<Eigen::MatrixXd> llt(to_eigen(sys.sigma));
  if (llt.info() != Eigen::Success) throw IllConditioned("sample_gaussian: Cholesky failed");
  const Eigen::MatrixXd l = llt.matrixL();
  std::vector<Vector> out;
  out.reserve(n);
  Eigen::VectorXd z(d);
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < d; ++i) z(static_cast<Eigen::Index>(i)) = rng.normal();
    const Eigen::VectorXd x = l * z;
    Vector v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = x(static_cast<Eigen::Index>(i));
    out.push_back(std::move(v));
  }
  return out;
}

void CalibrationConfig::validate() const {
  if (n_systems < 30) throw std::invalid_argument("calibrate: need at least 30 systems");
  if (min_dim < 2 || min_dim > max_dim || max_dim > kMaxOracleDim)
    throw std::invalid_argument("calibrate: bad dimension range");
  if (samples < 2) throw std::invalid_argument("calibrate: need at least 2 samples");
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman: need paired samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

CalibrationReport calibrate(const CalibrationConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed);
  CalibrationReport report;
  std::vector<double> oracle_values, auto_values;
  for (std::size_t id = 0; id < cfg.n_systems; ++id) {
    RngStream sys_rng = rng.split();
    const std::size_t d = cfg.min_dim + sys_rng.uniform_index(cfg.max_dim - cfg.min_dim + 1);
    const GaussianSystem sys = random_system(sys_rng, d);
    const auto samples = sample_gaussian(sys_rng, sys, cfg.samples);
    autophi::PhiConfig pc;
    pc.rank = d / 2;
    ScatterRow row{id, d, oracle_phi(sys), autophi::auto_phi_rel(samples, pc)};
    oracle_values.push_back(row.oracle_phi);
    auto_values.push_back(row.auto_phi_rel);
    report.rows.push_back(row);
  }
  report.spearman = spearman(oracle_values, auto_values);
  return report;
}

}  // namespace riiu::oracle
