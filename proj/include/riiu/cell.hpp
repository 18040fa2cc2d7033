#pragma once

// The Reflexive Integrated Information Unit and the baseline cells it is
// compared against.
//
// One RIIU step (Integrate -> Reflect -> Measure -> Broadcast):
//
//   h'  = gelu(W_x x + W_h h + W_b w)
//   mu' = g([h'; mu; grad_h phi(window + [h'; mu])])      g: Linear-GELU-Linear
//   push [h'; mu'] into the sliding buffer
//   phi'= phi(window)
//   B'  = W_o [h'; mu'; phi']

#include <cstddef>
#include <string>
#include <vector>

#include "riiu/autophi.hpp"
#include "riiu/grad.hpp"
#include "riiu/tensor.hpp"

namespace riiu::cell {

struct CellConfig {
  std::size_t in_dim = 18;
  std::size_t h_dim = 32;
  std::size_t mu_dim = 16;
  std::size_t buf_len = 64;
  autophi::PhiConfig phi{};
  bool meta_enabled = true;
  bool phi_bonus_enabled = true;

  std::size_t state_dim() const { return h_dim + mu_dim; }
  std::size_t g_in_dim() const { return h_dim + mu_dim + h_dim; }
  std::size_t g_hidden_dim() const { return 2 * mu_dim; }
  void validate() const;
};

struct RiiuParams {
  Matrix W_x;   ///< h_dim x in_dim
  Matrix W_h;   ///< h_dim x h_dim
  Matrix W_b;   ///< h_dim x h_dim
  Matrix g_w1;  ///< 2 mu_dim x (2 h_dim + mu_dim)
  Vector g_b1;  ///< 2 mu_dim
  Matrix g_w2;  ///< mu_dim x 2 mu_dim
  Vector g_b2;  ///< mu_dim
  Matrix W_o;   ///< h_dim x (h_dim + mu_dim + 1)

  static RiiuParams zeros(const CellConfig& cfg);
  /// Views over every tensor, names prefixed with `prefix`.
  std::vector<ad::TensorView> views(const std::string& prefix);
};

std::size_t param_count(const RiiuParams& p);

/// Weights uniform in +-1/sqrt(fan_in), biases zero.
RiiuParams init_params(RngStream& rng, const CellConfig& cfg);

struct RiiuState {
  Vector h;
  Vector mu;
  double phi_hat = 0.0;
  Vector broadcast;
  autophi::SlidingBuffer buffer;

  static RiiuState initial(const CellConfig& cfg);
};

/// Supplies the values that the graph treats as constants (buffer snapshots
/// and the gradient fed to g). Recording them on one pass and replaying them on
/// another makes a perturbed forward pass differentiate the same function the
/// tape does, which is what finite-difference checks need.
class DetachedTrace {
 public:
  enum class Mode { live, record, replay };

  DetachedTrace() = default;
  explicit DetachedTrace(Mode mode) : mode_(mode) {}

  Mode mode() const { return mode_; }
  void start_replay();
  Vector take(Vector live);

 private:
  Mode mode_ = Mode::live;
  std::vector<Vector> values_;
  std::size_t cursor_ = 0;
};

struct CellNodes {
  ad::NodeId h;
  ad::NodeId mu;
  ad::NodeId phi;
  ad::NodeId broadcast;
};

struct StepDiagnostics {
  std::size_t degenerate_spectra = 0;
};

/// Places the state's current h, mu, phi and B on the tape as constants.
CellNodes constant_nodes(ad::Tape& tape, const RiiuState& state);

/// Recorded RIIU step. `grad` (may be null) receives parameter gradients on
/// backward. `buffer` is pushed with the detached new joint state.
CellNodes riiu_step(ad::Tape& tape, const RiiuParams& params, RiiuParams* grad,
                    const CellConfig& cfg, const CellNodes& prev, autophi::SlidingBuffer& buffer,
                    ad::NodeId x, ad::NodeId w, DetachedTrace* trace = nullptr,
                    StepDiagnostics* diag = nullptr);

/// Value-only RIIU step; `w` is the workspace message (zeros when absent).
RiiuState riiu_step(const RiiuParams& params, const CellConfig& cfg, const RiiuState& state,
                    const Vector& x, const Vector& w);

/// Same step with the reflexive network removed: mu passes through unchanged.
RiiuState riiu_step_no_meta(const RiiuParams& params, const CellConfig& cfg,
                            const RiiuState& state, const Vector& x, const Vector& w);

// Baselines --------------------------------------------------------------------

/// tanh(W_x x + W_h h)
Vector elman_step(const Matrix& W_x, const Matrix& W_h, const Vector& h, const Vector& x);

struct GruParams {
  Matrix W_z, U_z, W_r, U_r, W_h, U_h;
  Vector b_z, b_r, b_h;

  static GruParams zeros(std::size_t in_dim, std::size_t hidden);
  std::vector<ad::TensorView> views(const std::string& prefix);
};

GruParams init_gru_params(RngStream& rng, std::size_t in_dim, std::size_t hidden);
std::size_t param_count(const GruParams& p);

/// z = s(W_z x + U_z h + b_z), r = s(W_r x + U_r h + b_r),
/// c = tanh(W_h x + U_h (r*h) + b_h), h' = (1 - z)*h + z*c
Vector gru_step(const GruParams& p, const Vector& h, const Vector& x);
ad::NodeId gru_step(ad::Tape& tape, const GruParams& p, GruParams* grad, ad::NodeId h,
                    ad::NodeId x);

struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::vector<ad::TensorView> views(const std::string& prefix);
};

/// `sizes` = {in, hidden..., out}.
MlpParams init_mlp_params(RngStream& rng, const std::vector<std::size_t>& sizes);
std::size_t param_count(const MlpParams& p);
/// GELU between layers, linear output.
ad::NodeId mlp_forward(ad::Tape& tape, const MlpParams& p, MlpParams* grad, ad::NodeId x);

/// Parameter count of an MLP with the given layer sizes (weights + biases).
std::size_t mlp_param_count(const std::vector<std::size_t>& sizes);
/// Parameter count of a GRU cell plus a linear policy head.
std::size_t gru_agent_param_count(std::size_t in_dim, std::size_t hidden, std::size_t out_dim);

/// Two equal-width hidden layers whose total count is within +-5% of target.
/// Throws NoMatch when no width qualifies.
std::vector<std::size_t> matched_mlp_config(std::size_t target_count, std::size_t in_dim,
                                            std::size_t out_dim);
/// GRU hidden width (cell + linear head) within +-5% of target, else NoMatch.
std::size_t matched_gru_config(std::size_t target_count, std::size_t in_dim,
                               std::size_t out_dim);

}  // namespace riiu::cell
