#pragma once

// Gaussian minimum-information-partition proxy for small systems, and the
// calibration study comparing it with Auto-Phi on sampled data.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "riiu/tensor.hpp"

namespace riiu::oracle {

inline constexpr std::size_t kMaxOracleDim = 12;

/// Positive-definite covariance of a small Gaussian system.
struct GaussianSystem {
  Matrix sigma;

  /// Throws IllConditioned unless sigma is symmetric with min eigenvalue > 1e-10.
  explicit GaussianSystem(Matrix sigma);
  std::size_t dim() const { return sigma.rows(); }
};

/// I(A;B) = 0.5 ln(det S_A det S_B / det S) for the cut A | complement(A).
double bipartition_mi(const GaussianSystem& sys, const std::vector<std::size_t>& part);

/// Minimum over all nontrivial bipartitions of I(A;B) / min(|A|,|B|).
/// Throws std::invalid_argument for dim > kMaxOracleDim.
double oracle_phi(const GaussianSystem& sys);

/// A * A^T + 0.1 I with standard normal entries.
GaussianSystem random_system(RngStream& rng, std::size_t dim);

/// `n` draws from N(0, sigma).
std::vector<Vector> sample_gaussian(RngStream& rng, const GaussianSystem& sys, std::size_t n);

struct ScatterRow {
  std::size_t system_id = 0;
  std::size_t dim = 0;
  double oracle_phi = 0.0;
  double auto_phi_rel = 0.0;
};

struct CalibrationConfig {
  std::size_t n_systems = 100;
  std::size_t min_dim = 8;
  std::size_t max_dim = 10;
  std::size_t samples = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

struct CalibrationReport {
  double spearman = 0.0;
  std::vector<ScatterRow> rows;
};

/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

CalibrationReport calibrate(const CalibrationConfig& cfg);

}  // namespace riiu::oracle
