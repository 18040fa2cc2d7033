#pragma once

// Property suites backing `riiu verify`: tape gradients against central
// differences, block additivity of Auto-Phi, and the ascent-step property.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace riiu::verify {

struct SuiteResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t failures = 0;
  double tolerance = 0.0;
  /// Worst error seen (for the ascent suite: the fraction of increases).
  double worst = 0.0;
  /// Description of the first failing case, empty when none failed.
  std::string counterexample;
  bool passed = true;
};

struct VerifyConfig {
  std::uint64_t seed = 1;
  std::size_t e2e_weights = 10;
  std::size_t e2e_steps = 5;
  std::size_t e2e_layers = 2;
  /// Bonus weight used by the end-to-end check; larger than the training
  /// default so the Auto-Phi path carries a visible share of the gradient.
  double e2e_bonus_weight = 1.0;
  double e2e_tolerance = 1e-3;
  std::size_t primitive_trials = 5;
  double primitive_tolerance = 1e-6;
  std::size_t additivity_pairs = 100;
  double additivity_tolerance = 1e-9;
  std::size_t ascent_buffers = 1000;
  double ascent_min_gradient = 1e-6;
  double ascent_required_fraction = 0.99;
};

/// Each tape primitive against a fourth-order central difference.
SuiteResult primitive_gradients(const VerifyConfig& cfg);
/// grad_auto_phi against central differences of auto_phi_rel (eigengap > 1e-6),
/// error measured as ||analytic - numeric|| / ||numeric||.
SuiteResult autophi_gradient(const VerifyConfig& cfg, std::size_t buffers = 100,
                             double tolerance = 1e-4);
/// Whole-episode loss gradient of a miniature stack against central differences.
SuiteResult end_to_end_gradient(const VerifyConfig& cfg);
/// Joint sum_of_norms Auto-Phi of a block-diagonal covariance equals the sum
/// of the per-block values.
SuiteResult block_additivity(const VerifyConfig& cfg);
/// Under standard normalization the joint value composes as a root-sum-square.
SuiteResult root_sum_square(const VerifyConfig& cfg);
/// One ascent step of size 1/L raises Auto-Phi.
SuiteResult ascent_step(const VerifyConfig& cfg);

std::vector<SuiteResult> run_all(const VerifyConfig& cfg);

/// Relative error with a floor on the denominator.
double relative_error(double a, double b, double floor = 1e-7);

std::string format_report(const std::vector<SuiteResult>& results);

}  // namespace riiu::verify
