#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <optional>

#include "riiu/error.hpp"
#include "riiu/gridworld.hpp"

using namespace riiu;
using namespace riiu::env;

namespace {

std::vector<std::optional<Action>> all(const VecEnv& env, Action a) {
  std::vector<std::optional<Action>> out;
  for (std::size_t i = 0; i < env.size(); ++i)
    out.push_back(env.state(i).done ? std::nullopt : std::optional<Action>(a));
  return out;
}

double one_hot_sum(const Vector& obs) { return std::accumulate(obs.begin(), obs.begin() + 16, 0.0); }

}  // namespace

TEST_CASE("reset: encoding of the start cell") {
  VecEnv env(EnvConfig{});
  const auto obs = env.reset();
  REQUIRE(obs.size() == 8);
  for (const auto& o : obs) {
    CHECK(o.dim() == 18);
    CHECK(o[0] == 1.0);
    CHECK(one_hot_sum(o) == 1.0);
    CHECK(o[16] == 1.0);
    CHECK(o[17] == 0.0);
  }
}

TEST_CASE("moves, wall clamping and goal reward") {
  EnvConfig cfg;
  cfg.damage_enabled = false;
  VecEnv env(cfg);
  StepResult r = env.step(all(env, Action::up));
  CHECK(env.state(0).agent == Cell{0, 0});
  r = env.step(all(env, Action::left));
  CHECK(env.state(0).agent == Cell{0, 0});
  r = env.step(all(env, Action::right));
  CHECK(env.state(0).agent == Cell{1, 0});
  CHECK(r.observations[0][1] == 1.0);
  for (Action a : {Action::right, Action::right, Action::down, Action::down}) {
    r = env.step(all(env, a));
    CHECK(r.rewards[0] == 0.0);
  }
  r = env.step(all(env, Action::down));
  CHECK(env.state(0).agent == Cell{3, 3});
  CHECK(r.rewards[0] == 1.0);
  CHECK(r.dones[0]);
  CHECK(env.global_step() == 8);
  CHECK_THROWS_AS(env.step(std::vector<std::optional<Action>>(8, Action::up)), std::logic_error);
  CHECK_THROWS_AS(env.step(std::vector<std::optional<Action>>(3)), ShapeError);
}

TEST_CASE("episode ends at max_len") {
  EnvConfig cfg;
  cfg.max_len = 3;
  VecEnv env(cfg);
  for (int t = 0; t < 3; ++t) {
    const StepResult r = env.step(all(env, Action::up));
    CHECK(r.dones[0] == (t == 2));
  }
  env.reset();
  CHECK(env.state(0).episode_step == 0);
  CHECK(env.global_step() == 3);
}

TEST_CASE("damage: Right becomes a no-op, health clears, permanently and everywhere") {
  EnvConfig cfg;
  cfg.max_len = 1000;
  VecEnv env(cfg);
  for (std::size_t t = 0; t < cfg.damage_step; ++t) env.step(all(env, Action::up));
  CHECK_FALSE(env.damaged());
  const StepResult r = env.step(all(env, Action::right));
  CHECK(env.damaged());
  for (std::size_t i = 0; i < env.size(); ++i) {
    CHECK(env.state(i).agent == Cell{0, 0});
    CHECK(r.observations[i][16] == 0.0);
    CHECK(env.state(i).goal == cfg.damaged_goal);
  }
  for (int ep = 0; ep < 5; ++ep) {
    for (const auto& o : env.reset()) {
      CHECK(o[16] == 0.0);
      CHECK(one_hot_sum(o) == 1.0);
      CHECK(o[17] == 0.0);
    }
    for (int t = 0; t < 4; ++t) {
      const StepResult s = env.step(all(env, Action::right));
      for (const auto& o : s.observations) CHECK(o[16] == 0.0);
    }
  }
}

TEST_CASE("noop_right keeps the goal in place") {
  EnvConfig cfg;
  cfg.damage_mode = DamageMode::noop_right;
  cfg.damage_step = 0;
  VecEnv env(cfg);
  env.step(all(env, Action::down));
  CHECK(env.state(0).goal == cfg.goal);
  CHECK_FALSE(optimal_return(cfg, true) > 0.0);
}

TEST_CASE("optimal return and shortest paths") {
  EnvConfig cfg;
  CHECK(shortest_path(cfg, false) == 6u);
  CHECK(optimal_return(cfg, false) == 1.0);
  CHECK(shortest_path(cfg, true) == 3u);
  CHECK(optimal_return(cfg, true) == 1.0);
  cfg.max_len = 5;
  CHECK(optimal_return(cfg, false) == 0.0);
  cfg.max_len = 0;
  CHECK(optimal_return(cfg, false) == 0.0);

  EnvConfig blocked;
  blocked.damage_mode = DamageMode::noop_right;
  CHECK_FALSE(shortest_path(blocked, true).has_value());
}

TEST_CASE("deterministic given the action sequence") {
  auto run = [] {
    VecEnv env(EnvConfig{});
    std::vector<Vector> trace;
    const Action seq[] = {Action::down, Action::right, Action::down, Action::left, Action::right};
    for (int ep = 0; ep < 12; ++ep) {
      env.reset();
      for (Action a : seq) {
        if (env.state(0).done) break;
        for (auto& o : env.step(all(env, a)).observations) trace.push_back(o);
      }
    }
    return trace;
  };
  CHECK(run() == run());
}

TEST_CASE("config validation") {
  EnvConfig cfg;
  cfg.goal = {4, 0};
  CHECK_THROWS_AS(VecEnv{cfg}, std::invalid_argument);
  CHECK_THROWS_AS(damage_mode_from_string("teleport"), std::invalid_argument);
  CHECK(damage_mode_from_string(to_string(DamageMode::noop_right)) == DamageMode::noop_right);
}
