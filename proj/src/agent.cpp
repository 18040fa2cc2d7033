#include "riiu/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "riiu/error.hpp"

namespace riiu::agent {

namespace {

bool is_riiu(Variant v) { return v == Variant::riiu || v == Variant::riiu_no_meta; }

std::size_t riiu_stack_param_count(const StackConfig& cfg) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < cfg.layers; ++l)
    n += cell::param_count(cell::RiiuParams::zeros(cfg.layer_config(l)));
  return n + cfg.n_actions * cfg.cell.h_dim + cfg.n_actions;
}

std::size_t gru_width(const StackConfig& cfg) {
  if (cfg.gru_hidden) return cfg.gru_hidden;
  return cell::matched_gru_config(riiu_stack_param_count(cfg), cfg.cell.in_dim, cfg.n_actions);
}

std::vector<std::size_t> mlp_sizes(const StackConfig& cfg) {
  if (cfg.mlp_hidden.empty())
    return cell::matched_mlp_config(riiu_stack_param_count(cfg), cfg.cell.in_dim, cfg.n_actions);
  std::vector<std::size_t> sizes{cfg.cell.in_dim};
  sizes.insert(sizes.end(), cfg.mlp_hidden.begin(), cfg.mlp_hidden.end());
  sizes.push_back(cfg.n_actions);
  return sizes;
}

bool all_finite(std::span<const ad::TensorView> views) {
  for (const auto& v : views)
    for (double x : v.data)
      if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::riiu:
      return "riiu";
    case Variant::riiu_no_meta:
      return "riiu_no_meta";
    case Variant::gru:
      return "gru";
    case Variant::mlp:
      return "mlp";
  }
  return "unknown";
}

Variant variant_from_string(const std::string& s) {
  if (s == "riiu") return Variant::riiu;
  if (s == "riiu_no_meta" || s == "no_meta") return Variant::riiu_no_meta;
  if (s == "gru") return Variant::gru;
  if (s == "mlp") return Variant::mlp;
  throw std::invalid_argument("unknown variant: " + s);
}

cell::CellConfig StackConfig::layer_config(std::size_t layer) const {
  cell::CellConfig c = cell;
  if (layer > 0) c.in_dim = cell.h_dim;
  if (variant == Variant::riiu_no_meta) c.meta_enabled = false;
  return c;
}

void StackConfig::validate() const {
  if (layers == 0) throw std::invalid_argument("StackConfig: need at least one layer");
  if (topk == 0 || topk > cell.h_dim) throw std::invalid_argument("StackConfig: topk out of range");
  if (n_actions == 0) throw std::invalid_argument("StackConfig: n_actions must be positive");
  if (layers == 1 && !workspace_include_layer1 && workspace_enabled)
    throw std::invalid_argument("StackConfig: workspace has no contributing layer");
  for (std::size_t l = 0; l < layers; ++l) layer_config(l).validate();
}

void TrainConfig::validate() const {
  if (episodes == 0) throw std::invalid_argument("TrainConfig: episodes must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("TrainConfig: gamma in (0,1]");
  if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be positive");
  if (!(clip > 0.0)) throw std::invalid_argument("TrainConfig: clip must be positive");
  if (phi_bonus_weight < 0.0) throw std::invalid_argument("TrainConfig: bonus weight >= 0");
}

// Parameters -------------------------------------------------------------------

AgentParams AgentParams::zeros(const StackConfig& cfg) {
  AgentParams p;
  switch (cfg.variant) {
    case Variant::riiu:
    case Variant::riiu_no_meta:
      for (std::size_t l = 0; l < cfg.layers; ++l)
        p.layers.push_back(cell::RiiuParams::zeros(cfg.layer_config(l)));
      p.W_pi = Matrix(cfg.n_actions, cfg.cell.h_dim);
      p.b_pi = Vector(cfg.n_actions);
      break;
    case Variant::gru: {
      const std::size_t h = gru_width(cfg);
      p.gru = cell::GruParams::zeros(cfg.cell.in_dim, h);
      p.W_pi = Matrix(cfg.n_actions, h);
      p.b_pi = Vector(cfg.n_actions);
      break;
    }
    case Variant::mlp: {
      const auto sizes = mlp_sizes(cfg);
      for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        p.mlp.weights.emplace_back(sizes[l + 1], sizes[l]);
        p.mlp.biases.emplace_back(sizes[l + 1]);
      }
      break;
    }
  }
  return p;
}

std::vector<ad::TensorView> AgentParams::views(Variant variant) {
  std::vector<ad::TensorView> out;
  auto append = [&](std::vector<ad::TensorView> more) {
    out.insert(out.end(), more.begin(), more.end());
  };
  if (is_riiu(variant)) {
    for (std::size_t l = 0; l < layers.size(); ++l)
      append(layers[l].views("layer" + std::to_string(l + 1) + "."));
  } else if (variant == Variant::gru) {
    append(gru.views("gru."));
  } else {
    append(mlp.views("mlp."));
    return out;
  }
  out.push_back({"head.W_pi", W_pi.span(), W_pi.rows(), W_pi.cols()});
  out.push_back({"head.b_pi", b_pi.span(), b_pi.dim(), 1});
  return out;
}

AgentParams init_agent(RngStream& rng, const StackConfig& cfg) {
  cfg.validate();
  AgentParams p = AgentParams::zeros(cfg);
  switch (cfg.variant) {
    case Variant::riiu:
    case Variant::riiu_no_meta:
      for (std::size_t l = 0; l < cfg.layers; ++l)
        p.layers[l] = cell::init_params(rng, cfg.layer_config(l));
      break;
    case Variant::gru:
      p.gru = cell::init_gru_params(rng, cfg.cell.in_dim, p.W_pi.cols());
      break;
    case Variant::mlp:
      p.mlp = cell::init_mlp_params(rng, mlp_sizes(cfg));
      return p;
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(p.W_pi.cols()));
  for (double& v : p.W_pi.span()) v = rng.uniform(-bound, bound);
  return p;
}

std::size_t param_count(const StackConfig& cfg) {
  AgentParams p = AgentParams::zeros(cfg);
  std::size_t n = 0;
  for (const auto& v : p.views(cfg.variant)) n += v.data.size();
  return n;
}

AgentState AgentState::initial(const StackConfig& cfg) {
  AgentState s;
  if (is_riiu(cfg.variant))
    for (std::size_t l = 0; l < cfg.layers; ++l)
      s.layers.push_back(cell::RiiuState::initial(cfg.layer_config(l)));
  if (cfg.variant == Variant::gru) s.gru_h = Vector(gru_width(cfg));
  return s;
}

// Forward ----------------------------------------------------------------------

std::vector<double> topk_mask(std::span<const double> values, std::size_t topk) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(values[a]) > std::abs(values[b]);
  });
  std::vector<double> mask(values.size(), 0.0);
  for (std::size_t i = 0; i < std::min(topk, order.size()); ++i) mask[order[i]] = 1.0;
  return mask;
}

Vector workspace_update(std::span<const Vector> broadcasts, std::size_t topk) {
  if (broadcasts.empty()) throw ShapeError("workspace_update: no broadcasts");
  Vector mean(broadcasts.front().dim());
  for (const Vector& b : broadcasts) mean = add(mean, b);
  mean = scale(mean, 1.0 / static_cast<double>(broadcasts.size()));
  const auto mask = topk_mask(mean.span(), topk);
  for (std::size_t i = 0; i < mean.dim(); ++i) mean[i] *= mask[i];
  return mean;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double zmax = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(logits[i] - zmax);
  for (double& v : p) v /= sum;
  return p;
}

StackNodes constant_nodes(ad::Tape& tape, const StackConfig& cfg, const AgentState& state,
                          const Vector& workspace) {
  StackNodes n;
  for (const auto& layer : state.layers) n.layers.push_back(cell::constant_nodes(tape, layer));
  if (cfg.variant == Variant::gru) n.gru_h = tape.constant(state.gru_h);
  n.workspace = tape.constant(workspace);
  return n;
}

ForwardNodes stack_forward(ad::Tape& tape, const AgentParams& params, AgentParams* grad,
                           const StackConfig& cfg, const StackNodes& prev, AgentState& state,
                           ad::NodeId obs, cell::DetachedTrace* trace) {
  ForwardNodes out;
  out.next = prev;
  switch (cfg.variant) {
    case Variant::riiu:
    case Variant::riiu_no_meta: {
      if (prev.layers.size() != cfg.layers || state.layers.size() != cfg.layers)
        throw ShapeError("stack_forward: layer count mismatch");
      const ad::NodeId w = cfg.workspace_enabled
                               ? prev.workspace
                               : tape.constant(Vector(cfg.cell.h_dim));
      ad::NodeId input = obs;
      for (std::size_t l = 0; l < cfg.layers; ++l) {
        out.next.layers[l] =
            cell::riiu_step(tape, params.layers[l], grad ? &grad->layers[l] : nullptr,
                            cfg.layer_config(l), prev.layers[l], state.layers[l].buffer, input,
                            w, trace);
        out.phi.push_back(out.next.layers[l].phi);
        input = out.next.layers[l].broadcast;
      }
      out.logits = tape.add_bias(tape.matvec(params.W_pi, grad ? &grad->W_pi : nullptr, input),
                                 params.b_pi, grad ? &grad->b_pi : nullptr);

      std::vector<ad::NodeId> contributors;
      for (std::size_t l = cfg.workspace_include_layer1 ? 0 : 1; l < cfg.layers; ++l)
        contributors.push_back(out.next.layers[l].broadcast);
      const ad::NodeId mean = tape.mean(contributors);
      out.next.workspace = tape.mask(mean, topk_mask(tape.value(mean), cfg.topk));
      break;
    }
    case Variant::gru: {
      const ad::NodeId h = cell::gru_step(tape, params.gru, grad ? &grad->gru : nullptr,
                                          prev.gru_h, obs);
      out.next.gru_h = h;
      out.logits = tape.add_bias(tape.matvec(params.W_pi, grad ? &grad->W_pi : nullptr, h),
                                 params.b_pi, grad ? &grad->b_pi : nullptr);
      break;
    }
    case Variant::mlp:
      out.logits = cell::mlp_forward(tape, params.mlp, grad ? &grad->mlp : nullptr, obs);
      break;
  }
  return out;
}

ForwardValues stack_forward(const AgentParams& params, const StackConfig& cfg,
                            const AgentState& state, const Vector& obs, const Vector& workspace) {
  ad::Tape tape;
  ForwardValues v;
  v.state = state;
  const StackNodes prev = constant_nodes(tape, cfg, state, workspace);
  const ForwardNodes out =
      stack_forward(tape, params, nullptr, cfg, prev, v.state, tape.constant(obs));
  v.logits = tape.value_vector(out.logits);
  for (std::size_t l = 0; l < out.phi.size(); ++l) {
    auto& layer = v.state.layers[l];
    const auto& nodes = out.next.layers[l];
    layer.h = tape.value_vector(nodes.h);
    layer.mu = tape.value_vector(nodes.mu);
    layer.phi_hat = tape.scalar(nodes.phi);
    layer.broadcast = tape.value_vector(nodes.broadcast);
    v.phi.push_back(layer.phi_hat);
  }
  if (cfg.variant == Variant::gru) v.state.gru_h = tape.value_vector(out.next.gru_h);
  v.workspace = is_riiu(cfg.variant) ? tape.value_vector(out.next.workspace) : workspace;
  return v;
}

// Rollout ----------------------------------------------------------------------

ActionPicker sampling_picker(RngStream& rng) {
  return [&rng](std::size_t, std::span<const double> probs) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      acc += probs[a];
      if (u < acc) return static_cast<env::Action>(a);
    }
    return static_cast<env::Action>(probs.size() - 1);
  };
}

ActionPicker greedy_picker() {
  return [](std::size_t, std::span<const double> probs) {
    const auto it = std::max_element(probs.begin(), probs.end());
    return static_cast<env::Action>(std::distance(probs.begin(), it));
  };
}

double Trajectory::mean_return() const {
  if (rewards.empty()) return 0.0;
  double total = 0.0;
  for (const auto& r : rewards) total += std::accumulate(r.begin(), r.end(), 0.0);
  return total / static_cast<double>(rewards.size());
}

double Trajectory::mean_phi() const {
  if (phi_values.empty()) return 0.0;
  return std::accumulate(phi_values.begin(), phi_values.end(), 0.0) /
         static_cast<double>(phi_values.size());
}

Trajectory rollout(const AgentParams& params, AgentParams* grad, const StackConfig& cfg,
                   std::vector<AgentState>& states, env::VecEnv& env, const ActionPicker& pick,
                   cell::DetachedTrace* trace, bool bonus_mean_over_layers) {
  const std::size_t n = env.size();
  if (states.size() != n) throw ShapeError("rollout: one agent state per env");

  Trajectory traj;
  traj.log_probs.resize(n);
  traj.actions.resize(n);
  traj.rewards.resize(n);

  std::vector<Vector> obs = env.reset();
  std::vector<StackNodes> nodes;
  for (std::size_t e = 0; e < n; ++e)
    nodes.push_back(constant_nodes(traj.tape, cfg, states[e], Vector(cfg.cell.h_dim)));
  std::vector<bool> active(n, true);

  for (std::size_t t = 0; t < env.config().max_len; ++t) {
    if (std::none_of(active.begin(), active.end(), [](bool a) { return a; })) break;
    std::vector<std::optional<env::Action>> actions(n);
    double phi_sum = 0.0;
    std::size_t phi_count = 0;
    for (std::size_t e = 0; e < n; ++e) {
      if (!active[e]) continue;
      ForwardNodes f = stack_forward(traj.tape, params, grad, cfg, nodes[e], states[e],
                                     traj.tape.constant(obs[e]), trace);
      const auto probs = softmax(traj.tape.value(f.logits));
      const env::Action a = pick(e, probs);
      actions[e] = a;
      traj.actions[e].push_back(a);
      traj.log_probs[e].push_back(
          traj.tape.log_softmax_at(f.logits, static_cast<std::size_t>(a)));

      for (std::size_t l = 0; l < f.phi.size(); ++l) {
        const double v = traj.tape.scalar(f.phi[l]);
        traj.phi_values.push_back(v);
        phi_sum += v;
        ++phi_count;
        const bool last = l + 1 == f.phi.size();
        if (cfg.layer_config(l).phi_bonus_enabled && (bonus_mean_over_layers || last))
          traj.bonus_phi.push_back(f.phi[l]);
      }
      nodes[e] = std::move(f.next);
    }

    StepStats stats;
    stats.global_step = env.global_step();
    const env::StepResult res = env.step(actions);
    for (std::size_t e = 0; e < n; ++e) {
      if (!active[e]) continue;
      traj.rewards[e].push_back(res.rewards[e]);
      stats.mean_reward += res.rewards[e];
      if (res.dones[e]) active[e] = false;
    }
    obs = res.observations;
    stats.mean_reward /= static_cast<double>(n);
    stats.mean_phi = phi_count ? phi_sum / static_cast<double>(phi_count) : 0.0;
    stats.damaged = env.damaged();
    traj.damaged = traj.damaged || stats.damaged;
    traj.steps.push_back(stats);
  }

  // Carry the recurrent state into the next episode as plain values.
  for (std::size_t e = 0; e < n; ++e) {
    for (std::size_t l = 0; l < states[e].layers.size(); ++l) {
      auto& layer = states[e].layers[l];
      const auto& ln = nodes[e].layers[l];
      layer.h = traj.tape.value_vector(ln.h);
      layer.mu = traj.tape.value_vector(ln.mu);
      layer.phi_hat = traj.tape.scalar(ln.phi);
      layer.broadcast = traj.tape.value_vector(ln.broadcast);
    }
    if (cfg.variant == Variant::gru) states[e].gru_h = traj.tape.value_vector(nodes[e].gru_h);
  }
  return traj;
}

std::vector<double> returns_to_go(std::span<const double> rewards, double gamma) {
  std::vector<double> g(rewards.size());
  double acc = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    acc = rewards[t] + gamma * acc;
    g[t] = acc;
  }
  return g;
}

ad::NodeId loss(Trajectory& traj, const TrainConfig& cfg, double baseline) {
  std::vector<ad::NodeId> terms;
  std::vector<double> weights;
  const double n = static_cast<double>(traj.log_probs.size());
  for (std::size_t e = 0; e < traj.log_probs.size(); ++e) {
    const auto g = returns_to_go(traj.rewards[e], cfg.gamma);
    for (std::size_t t = 0; t < traj.log_probs[e].size(); ++t) {
      terms.push_back(traj.log_probs[e][t]);
      weights.push_back(-(g[t] - baseline) / n);
    }
  }
  if (terms.empty()) throw std::invalid_argument("loss: empty trajectory");
  if (cfg.phi_bonus_weight > 0.0 && !traj.bonus_phi.empty()) {
    const double w = -cfg.phi_bonus_weight / static_cast<double>(traj.bonus_phi.size());
    for (ad::NodeId id : traj.bonus_phi) {
      terms.push_back(id);
      weights.push_back(w);
    }
  }
  return traj.tape.weighted_sum(terms, weights);
}

// Training ---------------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const StackConfig& stack_cfg,
                  const env::EnvConfig& env_cfg, const EpisodeCallback& on_episode) {
  cfg.validate();
  stack_cfg.validate();
  if (env_cfg.obs_dim() != stack_cfg.cell.in_dim)
    throw ShapeError("train: observation width does not match layer-1 in_dim");

  RngStream root(cfg.seed);
  RngStream init_rng = root.split();
  RngStream sample_rng = root.split();

  TrainResult result;
  result.params = init_agent(init_rng, stack_cfg);
  AgentParams grads = AgentParams::zeros(stack_cfg);
  const auto pviews = result.params.views(stack_cfg.variant);
  const auto gviews = grads.views(stack_cfg.variant);
  ad::AdamState adam(pviews);

  env::VecEnv env(env_cfg);
  std::vector<AgentState> states(env.size(), AgentState::initial(stack_cfg));
  const ActionPicker pick = sampling_picker(sample_rng);
  const std::size_t degenerate_before = autophi::degenerate_spectrum_count();

  double baseline = 0.0;
  for (std::size_t ep = 1; ep <= cfg.episodes; ++ep) {
    for (const auto& g : gviews) std::fill(g.data.begin(), g.data.end(), 0.0);
    const std::size_t first_step = env.global_step();
    std::optional<Trajectory> collected;
    try {
      collected.emplace(rollout(result.params, &grads, stack_cfg, states, env, pick, nullptr,
                                cfg.phi_mean_over_layers));
    } catch (const NumericalFailure& e) {
      throw Divergence("train: recurrent state blew up at episode " + std::to_string(ep) + " (" +
                       e.what() + ")");
    }
    Trajectory& traj = *collected;

    const ad::NodeId objective = loss(traj, cfg, cfg.running_baseline ? baseline : 0.0);
    const double value = traj.tape.scalar(objective);
    if (!std::isfinite(value))
      throw Divergence("train: non-finite loss at episode " + std::to_string(ep));
    traj.tape.backward(objective);
    if (!all_finite(gviews))
      throw Divergence("train: non-finite gradient at episode " + std::to_string(ep));
    ad::clip_global_norm(gviews, cfg.clip);
    adam.update(pviews, gviews, cfg.lr);
    if (!all_finite(pviews))
      throw Divergence("train: non-finite parameters at episode " + std::to_string(ep));

    EpisodeRow row;
    row.episode = ep;
    row.mean_return = traj.mean_return();
    row.phi_rel_percent = 100.0 * traj.mean_phi();
    row.first_global_step = first_step;
    row.last_global_step = env.global_step() - 1;
    row.damaged = traj.damaged;
    result.episodes.push_back(row);
    result.steps.insert(result.steps.end(), traj.steps.begin(), traj.steps.end());
    baseline += (row.mean_return - baseline) / static_cast<double>(ep);
    if (on_episode) on_episode(row);
  }
  result.degenerate_spectra = autophi::degenerate_spectrum_count() - degenerate_before;
  result.final_states = std::move(states);
  return result;
}

// Metrics ----------------------------------------------------------------------

std::vector<double> step_return_series(std::span<const EpisodeRow> episodes) {
  std::vector<double> series;
  for (const auto& row : episodes) {
    if (row.first_global_step != series.size())
      throw std::invalid_argument("step_return_series: episodes are not contiguous");
    for (std::size_t s = row.first_global_step; s <= row.last_global_step; ++s)
      series.push_back(row.mean_return);
  }
  return series;
}

RepairLatency repair_latency(std::span<const double> step_returns, std::size_t damage_step,
                             std::size_t window) {
  if (window == 0) throw std::invalid_argument("repair_latency: window must be positive");
  if (damage_step == 0 || step_returns.size() <= damage_step)
    throw std::invalid_argument("repair_latency: log does not span the damage step");

  RepairLatency out;
  out.pre_damage_return =
      std::accumulate(step_returns.begin(), step_returns.begin() + static_cast<std::ptrdiff_t>(damage_step),
                      0.0) /
      static_cast<double>(damage_step);
  const double threshold = 0.9 * out.pre_damage_return;
  const std::size_t n = step_returns.size();
  for (std::size_t s = damage_step; s < n; ++s) {
    const std::size_t end = std::min(n, s + window);
    double avg = 0.0;
    for (std::size_t k = s; k < end; ++k) avg += step_returns[k];
    avg /= static_cast<double>(end - s);
    if (avg >= threshold) {
      out.steps = s - damage_step;
      out.recovered = true;
      return out;
    }
  }
  out.steps = n - damage_step;
  return out;
}

}  // namespace riiu::agent
