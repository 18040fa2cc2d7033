#pragma once

// Vectorised 4x4 grid world with a permanent move-right actuator failure.
//
// Observation (18 values): one-hot of the agent cell (index y*width + x),
// the health flag, and one reserved slot that is always 0.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riiu/tensor.hpp"

namespace riiu::env {

enum class Action { up = 0, down = 1, left = 2, right = 3 };
inline constexpr std::size_t kNumActions = 4;

enum class DamageMode {
  noop_right,                ///< Right becomes a no-op.
  noop_right_and_move_goal,  ///< ... and the goal moves to damaged_goal.
};

std::string to_string(DamageMode mode);
DamageMode damage_mode_from_string(const std::string& s);

struct Cell {
  int x = 0;
  int y = 0;
  bool operator==(const Cell&) const = default;
};

struct EnvConfig {
  int width = 4;
  int height = 4;
  Cell start{0, 0};
  Cell goal{3, 3};
  Cell damaged_goal{0, 3};
  std::size_t damage_step = 50;
  std::size_t max_len = 16;
  std::size_t n_envs = 8;
  DamageMode damage_mode = DamageMode::noop_right_and_move_goal;
  /// false disables the failure entirely.
  bool damage_enabled = true;

  std::size_t obs_dim() const { return static_cast<std::size_t>(width * height) + 2; }
  void validate() const;
};

struct GridState {
  Cell agent;
  Cell goal;
  bool healthy = true;
  bool done = false;
  std::size_t episode_step = 0;
};

struct StepResult {
  std::vector<Vector> observations;
  std::vector<double> rewards;
  std::vector<bool> dones;
};

class VecEnv {
 public:
  explicit VecEnv(EnvConfig cfg);

  const EnvConfig& config() const { return cfg_; }
  std::size_t size() const { return envs_.size(); }
  std::size_t global_step() const { return global_step_; }
  bool damaged() const { return damaged_; }
  const GridState& state(std::size_t i) const { return envs_[i]; }

  /// Starts a new episode in every instance.
  std::vector<Vector> reset();

  /// Advances all instances one step. `actions[i]` must be set exactly for the
  /// instances that are not done; acting in a done instance throws
  /// std::logic_error. Done instances report reward 0 and their last
  /// observation. Increments the global step once per call.
  StepResult step(std::span<const std::optional<Action>> actions);

  Vector observe(std::size_t i) const;

 private:
  void apply_damage();

  EnvConfig cfg_;
  std::vector<GridState> envs_;
  std::size_t global_step_ = 0;
  bool damaged_ = false;
};

/// Moves one cell, clamped at walls; Right is a no-op when `right_disabled`.
Cell move(const EnvConfig& cfg, Cell at, Action a, bool right_disabled);

/// Best undiscounted return reachable in at most max_len steps from the
/// start cell, found by breadth-first search over cells.
double optimal_return(const EnvConfig& cfg, bool damaged);

/// Length of a shortest path start -> goal, or nullopt when unreachable.
std::optional<std::size_t> shortest_path(const EnvConfig& cfg, bool damaged);

}  // namespace riiu::env
