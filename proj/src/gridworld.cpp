#include "riiu/gridworld.hpp"

#include <algorithm>
#include <deque>
#include <stdexcept>

#include "riiu/error.hpp"

namespace riiu::env {

std::string to_string(DamageMode mode) {
  switch (mode) {
    case DamageMode::noop_right:
      return "noop_right";
    case DamageMode::noop_right_and_move_goal:
      return "noop_right_and_move_goal";
  }
  return "unknown";
}

DamageMode damage_mode_from_string(const std::string& s) {
  if (s == "noop_right") return DamageMode::noop_right;
  if (s == "noop_right_and_move_goal") return DamageMode::noop_right_and_move_goal;
  throw std::invalid_argument("unknown damage_mode: " + s);
}

void EnvConfig::validate() const {
  auto inside = [&](Cell c) { return c.x >= 0 && c.y >= 0 && c.x < width && c.y < height; };
  if (width <= 0 || height <= 0) throw std::invalid_argument("EnvConfig: empty grid");
  if (!inside(start) || !inside(goal) || !inside(damaged_goal))
    throw std::invalid_argument("EnvConfig: start/goal outside grid");
  if (n_envs == 0) throw std::invalid_argument("EnvConfig: n_envs must be positive");
}

Cell move(const EnvConfig& cfg, Cell at, Action a, bool right_disabled) {
  switch (a) {
    case Action::up:
      at.y = std::max(0, at.y - 1);
      break;
    case Action::down:
      at.y = std::min(cfg.height - 1, at.y + 1);
      break;
    case Action::left:
      at.x = std::max(0, at.x - 1);
      break;
    case Action::right:
      if (!right_disabled) at.x = std::min(cfg.width - 1, at.x + 1);
      break;
  }
  return at;
}

VecEnv::VecEnv(EnvConfig cfg) : cfg_(std::move(cfg)), envs_(cfg_.n_envs) {
  cfg_.validate();
  reset();
}

void VecEnv::apply_damage() {
  damaged_ = true;
  for (auto& e : envs_) {
    e.healthy = false;
    if (cfg_.damage_mode == DamageMode::noop_right_and_move_goal) e.goal = cfg_.damaged_goal;
  }
}

std::vector<Vector> VecEnv::reset() {
  if (cfg_.damage_enabled && !damaged_ && global_step_ >= cfg_.damage_step) apply_damage();
  std::vector<Vector> obs;
  for (auto& e : envs_) {
    e.agent = cfg_.start;
    e.goal = damaged_ && cfg_.damage_mode == DamageMode::noop_right_and_move_goal
                 ? cfg_.damaged_goal
                 : cfg_.goal;
    e.healthy = !damaged_;
    e.done = false;
    e.episode_step = 0;
  }
  for (std::size_t i = 0; i < envs_.size(); ++i) obs.push_back(observe(i));
  return obs;
}

Vector VecEnv::observe(std::size_t i) const {
  const GridState& e = envs_[i];
  Vector obs(cfg_.obs_dim());
  obs[static_cast<std::size_t>(e.agent.y * cfg_.width + e.agent.x)] = 1.0;
  obs[cfg_.obs_dim() - 2] = e.healthy ? 1.0 : 0.0;
  return obs;
}

StepResult VecEnv::step(std::span<const std::optional<Action>> actions) {
  if (actions.size() != envs_.size()) throw ShapeError("VecEnv::step: one action slot per env");
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    if (envs_[i].done && actions[i]) throw std::logic_error("VecEnv::step: env is done; reset first");
    if (!envs_[i].done && !actions[i]) throw std::logic_error("VecEnv::step: missing action");
  }
  if (cfg_.damage_enabled && !damaged_ && global_step_ >= cfg_.damage_step) apply_damage();

  StepResult out;
  out.rewards.assign(envs_.size(), 0.0);
  out.dones.assign(envs_.size(), false);
  for (std::size_t i = 0; i < envs_.size(); ++i) {
    GridState& e = envs_[i];
    if (!e.done) {
      e.agent = move(cfg_, e.agent, *actions[i], !e.healthy);
      ++e.episode_step;
      if (e.agent == e.goal) {
        out.rewards[i] = 1.0;
        e.done = true;
      } else if (e.episode_step >= cfg_.max_len) {
        e.done = true;
      }
    }
    out.dones[i] = e.done;
    out.observations.push_back(observe(i));
  }
  ++global_step_;
  return out;
}

std::optional<std::size_t> shortest_path(const EnvConfig& cfg, bool damaged) {
  cfg.validate();
  const Cell goal =
      damaged && cfg.damage_mode == DamageMode::noop_right_and_move_goal ? cfg.damaged_goal : cfg.goal;
  const auto index = [&](Cell c) { return static_cast<std::size_t>(c.y * cfg.width + c.x); };
  std::vector<std::optional<std::size_t>> dist(static_cast<std::size_t>(cfg.width * cfg.height));
  // Frontier holds cells reached after >= 1 step, so start == goal needs a move too.
  std::deque<Cell> frontier;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    const Cell next = move(cfg, cfg.start, static_cast<Action>(a), damaged);
    if (!dist[index(next)]) {
      dist[index(next)] = 1;
      frontier.push_back(next);
    }
  }
  while (!frontier.empty()) {
    const Cell at = frontier.front();
    frontier.pop_front();
    if (at == goal) return dist[index(at)];
    for (std::size_t a = 0; a < kNumActions; ++a) {
      const Cell next = move(cfg, at, static_cast<Action>(a), damaged);
      if (!dist[index(next)]) {
        dist[index(next)] = *dist[index(at)] + 1;
        frontier.push_back(next);
      }
    }
  }
  return std::nullopt;
}

double optimal_return(const EnvConfig& cfg, bool damaged) {
  if (cfg.max_len == 0) return 0.0;
  const auto len = shortest_path(cfg, damaged);
  return len && *len <= cfg.max_len ? 1.0 : 0.0;
}

}  // namespace riiu::env
