#pragma once

// Four-layer RIIU agent with broadcast chaining and a shared workspace, plus
// parameter-matched GRU/MLP baselines, episode rollout, the REINFORCE +
// Auto-Phi bonus objective and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

#include "riiu/cell.hpp"
#include "riiu/grad.hpp"
#include "riiu/gridworld.hpp"

namespace riiu::agent {

enum class Variant { riiu, riiu_no_meta, gru, mlp };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct StackConfig {
  std::size_t layers = 4;
  /// Template for every layer; in_dim applies to layer 1 only, deeper layers
  /// read the previous broadcast (width h_dim).
  cell::CellConfig cell{};
  std::size_t topk = 8;
  std::size_t n_actions = env::kNumActions;
  bool workspace_enabled = true;
  bool workspace_include_layer1 = true;
  Variant variant = Variant::riiu;
  /// Hidden width for the GRU baseline (0: parameter-matched to the RIIU stack).
  std::size_t gru_hidden = 0;
  /// Hidden widths for the MLP baseline (empty: parameter-matched).
  std::vector<std::size_t> mlp_hidden;

  cell::CellConfig layer_config(std::size_t layer) const;
  void validate() const;
};

struct TrainConfig {
  std::size_t episodes = 150;
  double gamma = 0.99;
  double lr = 5e-4;
  double clip = 1.0;
  double phi_bonus_weight = 0.02;
  std::uint64_t seed = 1;
  /// true: bonus uses the mean phi over layers; false: last layer only.
  bool phi_mean_over_layers = true;
  /// Subtract a running mean of episode returns from G_t.
  bool running_baseline = false;

  void validate() const;
};

struct AgentParams {
  std::vector<cell::RiiuParams> layers;
  cell::GruParams gru;
  cell::MlpParams mlp;
  Matrix W_pi;  ///< n_actions x head input
  Vector b_pi;

  /// Zero tensors shaped like `cfg` for the configured variant.
  static AgentParams zeros(const StackConfig& cfg);
  std::vector<ad::TensorView> views(Variant variant);
};

AgentParams init_agent(RngStream& rng, const StackConfig& cfg);
std::size_t param_count(const StackConfig& cfg);

/// Recurrent state of one agent instance; persists across episodes.
struct AgentState {
  std::vector<cell::RiiuState> layers;
  Vector gru_h;

  static AgentState initial(const StackConfig& cfg);
};

struct StackNodes {
  std::vector<cell::CellNodes> layers;
  ad::NodeId gru_h = 0;
  ad::NodeId workspace = 0;
};

StackNodes constant_nodes(ad::Tape& tape, const StackConfig& cfg, const AgentState& state,
                          const Vector& workspace);

struct ForwardNodes {
  ad::NodeId logits;
  StackNodes next;
  std::vector<ad::NodeId> phi;  ///< one per RIIU layer
};

/// One timestep of the agent on the tape. Layer 1 reads `obs`, layer i > 1
/// reads B^(i-1), every layer reads the workspace in `prev`, and the logits
/// are a linear map of the last layer's broadcast. The returned workspace is
/// computed from this step's broadcasts for use at the next step.
ForwardNodes stack_forward(ad::Tape& tape, const AgentParams& params, AgentParams* grad,
                           const StackConfig& cfg, const StackNodes& prev, AgentState& state,
                           ad::NodeId obs, cell::DetachedTrace* trace = nullptr);

struct ForwardValues {
  Vector logits;
  AgentState state;
  Vector workspace;
  std::vector<double> phi;
};

/// Value-only convenience wrapper around stack_forward.
ForwardValues stack_forward(const AgentParams& params, const StackConfig& cfg,
                            const AgentState& state, const Vector& obs, const Vector& workspace);

/// Elementwise mean of the broadcasts, keeping the `topk` largest magnitudes
/// (ties to the lowest index) and zeroing the rest.
Vector workspace_update(std::span<const Vector> broadcasts, std::size_t topk);
/// Indicator of the entries workspace_update keeps.
std::vector<double> topk_mask(std::span<const double> values, std::size_t topk);

std::vector<double> softmax(std::span<const double> logits);

using ActionPicker = std::function<env::Action(std::size_t env_index, std::span<const double> probs)>;

/// Samples from the policy distribution using `rng`.
ActionPicker sampling_picker(RngStream& rng);
/// Always picks the most probable action.
ActionPicker greedy_picker();

struct StepStats {
  std::size_t global_step = 0;
  double mean_reward = 0.0;
  double mean_phi = 0.0;
  bool damaged = false;
};

struct Trajectory {
  ad::Tape tape;
  /// [env][t] log-probability nodes of the chosen actions.
  std::vector<std::vector<ad::NodeId>> log_probs;
  std::vector<std::vector<env::Action>> actions;
  std::vector<std::vector<double>> rewards;
  /// Phi nodes entering the bonus term.
  std::vector<ad::NodeId> bonus_phi;
  /// Every emitted phi value (all layers, envs, steps).
  std::vector<double> phi_values;
  std::vector<StepStats> steps;
  bool damaged = false;

  double mean_return() const;
  double mean_phi() const;
  std::size_t length() const { return steps.size(); }
};

/// Collects one episode in every environment instance. Finished instances
/// idle until all are done or max_len is reached.
Trajectory rollout(const AgentParams& params, AgentParams* grad, const StackConfig& cfg,
                   std::vector<AgentState>& states, env::VecEnv& env, const ActionPicker& pick,
                   cell::DetachedTrace* trace = nullptr, bool bonus_mean_over_layers = true);

/// L = -(1/n_envs) sum_e sum_t log pi(a_t) (G_t - baseline) - w * mean(bonus phi).
ad::NodeId loss(Trajectory& traj, const TrainConfig& cfg, double baseline = 0.0);

/// Discounted return-to-go.
std::vector<double> returns_to_go(std::span<const double> rewards, double gamma);

struct EpisodeRow {
  std::size_t episode = 0;
  double mean_return = 0.0;
  double phi_rel_percent = 0.0;
  std::size_t first_global_step = 0;
  std::size_t last_global_step = 0;
  bool damaged = false;
};

struct TrainResult {
  std::vector<EpisodeRow> episodes;
  std::vector<StepStats> steps;
  AgentParams params;
  /// Recurrent state of every env instance after the last episode.
  std::vector<AgentState> final_states;
  std::size_t degenerate_spectra = 0;
};

/// Thrown when the loss or gradients stop being finite.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using EpisodeCallback = std::function<void(const EpisodeRow&)>;

/// rollout -> backward -> clip -> Adam, once per episode.
TrainResult train(const TrainConfig& cfg, const StackConfig& stack_cfg,
                  const env::EnvConfig& env_cfg, const EpisodeCallback& on_episode = {});

struct RepairLatency {
  std::size_t steps = 0;
  bool recovered = false;
  double pre_damage_return = 0.0;
};

/// Expands episode returns into a per-global-step series (each step carries
/// the mean return of the episode it belongs to).
std::vector<double> step_return_series(std::span<const EpisodeRow> episodes);

/// Steps after `damage_step` until the forward `window`-step average of the
/// series first reaches 90% of its mean before damage. Throws
/// std::invalid_argument when the series does not span the damage.
RepairLatency repair_latency(std::span<const double> step_returns, std::size_t damage_step,
                             std::size_t window = 5);

}  // namespace riiu::agent
