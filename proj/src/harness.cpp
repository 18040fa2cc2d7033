#include "riiu/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "riiu/autophi.hpp"
#include "riiu/checkpoint.hpp"
#include "riiu/plot.hpp"

namespace riiu::harness {

using nlohmann::json;

namespace {

// JSON -----------------------------------------------------------------------

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& field, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

json cell_json(env::Cell c) { return json::array({c.x, c.y}); }

void read_cell(const json& j, const char* key, env::Cell& c, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw ConfigError(where + "." + key + ": expected [x, y]");
  c = {v[0].get<int>(), v[1].get<int>()};
}

// Formatting -----------------------------------------------------------------

std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string cache_label(const agent::StackConfig& stack) { return agent::to_string(stack.variant); }

void write_config(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out / "config.json", to_json(cfg));
}

std::vector<double> episode_axis(std::size_t n) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = static_cast<double>(i + 1);
  return x;
}

/// Per-episode median across seeds of one episode field.
template <typename F>
std::vector<double> median_curve(const std::vector<SeedRun>& runs, F field) {
  std::vector<double> out;
  if (runs.empty()) return out;
  const std::size_t n = runs.front().result.episodes.size();
  for (std::size_t e = 0; e < n; ++e) {
    std::vector<double> v;
    for (const auto& r : runs)
      if (e < r.result.episodes.size()) v.push_back(field(r.result.episodes[e]));
    out.push_back(median(v));
  }
  return out;
}

/// First episode whose steps include the damage step, if any.
std::optional<double> damage_episode(const std::vector<SeedRun>& runs, const env::EnvConfig& env) {
  if (!env.damage_enabled || runs.empty()) return std::nullopt;
  for (const auto& row : runs.front().result.episodes)
    if (row.last_global_step >= env.damage_step) return static_cast<double>(row.episode);
  return std::nullopt;
}

std::string return_phi_svg(const std::vector<SeedRun>& runs, const RunConfig& cfg) {
  const auto ret = median_curve(runs, [](const agent::EpisodeRow& r) { return r.mean_return; });
  const auto phi = median_curve(runs, [](const agent::EpisodeRow& r) { return r.phi_rel_percent; });
  const auto x = episode_axis(ret.size());
  const auto marker = damage_episode(runs, cfg.env);
  const std::string mlabel = "damage (step " + std::to_string(cfg.env.damage_step) + ")";
  plot::Panel top{"Episode return (median over seeds)", "episode", "return",
                  {{"return", "#1f77b4", x, ret, false, 1.0},
                   {"10-ep average", "#1f77b4", x, plot::moving_average(ret, 10), true, 2.0}},
                  marker, mlabel};
  plot::Panel bottom{"Auto-Phi (median over seeds)", "episode", "phi_rel (%)",
                     {{"phi_rel", "#ff7f0e", x, phi, false, 1.0},
                      {"10-ep average", "#ff7f0e", x, plot::moving_average(phi, 10), true, 2.0}},
                     marker, mlabel};
  return plot::render_svg({top, bottom});
}

void save_checkpoints(const std::vector<SeedRun>& runs, const RunConfig& cfg,
                      const agent::StackConfig& stack) {
  for (const auto& r : runs) {
    agent::AgentParams params = r.result.params;
    save_checkpoint(cfg.out / ("checkpoint_" + r.variant + "_seed" + std::to_string(r.seed) + ".txt"),
                    params.views(stack.variant));
  }
}

double safe_ratio(double num, double den) {
  if (den == 0.0) return num == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                                    : std::numeric_limits<double>::infinity();
  return num / den;
}

}  // namespace

// Config -----------------------------------------------------------------------

void RunConfig::resolve() {
  stack.cell.in_dim = env.obs_dim();
  env.validate();
  stack.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("config: seed list is empty");
  if (buffers.empty()) throw ConfigError("config: buffer list is empty");
  if (metrics.late_first == 0 || metrics.late_first > metrics.late_last)
    throw ConfigError("config: bad late-phase range");
  if (metrics.latency_window == 0) throw ConfigError("config: latency_window must be positive");
  calibrate.validate();
}

std::string to_json(const RunConfig& c) {
  const auto& cell = c.stack.cell;
  json j;
  j["seeds"] = c.seeds;
  j["out"] = c.out.string();
  j["train"] = {{"episodes", c.train.episodes},
                {"gamma", c.train.gamma},
                {"lr", c.train.lr},
                {"clip", c.train.clip},
                {"phi_bonus_weight", c.train.phi_bonus_weight},
                {"phi_mean_over_layers", c.train.phi_mean_over_layers},
                {"running_baseline", c.train.running_baseline}};
  j["stack"] = {{"layers", c.stack.layers},
                {"topk", c.stack.topk},
                {"workspace_enabled", c.stack.workspace_enabled},
                {"workspace_include_layer1", c.stack.workspace_include_layer1},
                {"variant", agent::to_string(c.stack.variant)},
                {"gru_hidden", c.stack.gru_hidden},
                {"mlp_hidden", c.stack.mlp_hidden},
                {"cell",
                 {{"h_dim", cell.h_dim},
                  {"mu_dim", cell.mu_dim},
                  {"buf_len", cell.buf_len},
                  {"rank", cell.phi.rank},
                  {"epsilon", cell.phi.epsilon},
                  {"meta_enabled", cell.meta_enabled},
                  {"phi_bonus_enabled", cell.phi_bonus_enabled}}}};
  j["env"] = {{"width", c.env.width},
              {"height", c.env.height},
              {"start", cell_json(c.env.start)},
              {"goal", cell_json(c.env.goal)},
              {"damaged_goal", cell_json(c.env.damaged_goal)},
              {"damage_step", c.env.damage_step},
              {"max_len", c.env.max_len},
              {"n_envs", c.env.n_envs},
              {"damage_mode", env::to_string(c.env.damage_mode)},
              {"damage_enabled", c.env.damage_enabled}};
  j["ablate_buffer"] = {{"buffers", c.buffers}};
  j["metrics"] = {{"late_first", c.metrics.late_first},
                  {"late_last", c.metrics.late_last},
                  {"latency_window", c.metrics.latency_window}};
  j["calibrate"] = {{"n_systems", c.calibrate.n_systems},
                    {"min_dim", c.calibrate.min_dim},
                    {"max_dim", c.calibrate.max_dim},
                    {"samples", c.calibrate.samples},
                    {"seed", c.calibrate.seed},
                    {"min_spearman", c.min_spearman}};
  const auto& v = c.verify;
  j["verify"] = {{"seed", v.seed},
                 {"e2e_weights", v.e2e_weights},
                 {"e2e_steps", v.e2e_steps},
                 {"e2e_layers", v.e2e_layers},
                 {"e2e_bonus_weight", v.e2e_bonus_weight},
                 {"e2e_tolerance", v.e2e_tolerance},
                 {"primitive_trials", v.primitive_trials},
                 {"primitive_tolerance", v.primitive_tolerance},
                 {"additivity_pairs", v.additivity_pairs},
                 {"additivity_tolerance", v.additivity_tolerance},
                 {"ascent_buffers", v.ascent_buffers},
                 {"ascent_min_gradient", v.ascent_min_gradient},
                 {"ascent_required_fraction", v.ascent_required_fraction}};
  return j.dump(2) + "\n";
}

RunConfig config_from_json(const std::string& text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(j, "config",
             {"seeds", "out", "train", "stack", "env", "ablate_buffer", "metrics", "calibrate", "verify"});
  read(j, "seeds", c.seeds, "config");
  if (j.contains("out")) c.out = j.at("out").get<std::string>();

  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train", {"episodes", "gamma", "lr", "clip", "phi_bonus_weight",
                            "phi_mean_over_layers", "running_baseline"});
    read(t, "episodes", c.train.episodes, "train");
    read(t, "gamma", c.train.gamma, "train");
    read(t, "lr", c.train.lr, "train");
    read(t, "clip", c.train.clip, "train");
    read(t, "phi_bonus_weight", c.train.phi_bonus_weight, "train");
    read(t, "phi_mean_over_layers", c.train.phi_mean_over_layers, "train");
    read(t, "running_baseline", c.train.running_baseline, "train");
  }
  if (j.contains("stack")) {
    const json& s = j.at("stack");
    check_keys(s, "stack", {"layers", "topk", "workspace_enabled", "workspace_include_layer1",
                            "variant", "gru_hidden", "mlp_hidden", "cell"});
    read(s, "layers", c.stack.layers, "stack");
    read(s, "topk", c.stack.topk, "stack");
    read(s, "workspace_enabled", c.stack.workspace_enabled, "stack");
    read(s, "workspace_include_layer1", c.stack.workspace_include_layer1, "stack");
    if (s.contains("variant")) {
      try {
        c.stack.variant = agent::variant_from_string(s.at("variant").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("stack.variant: ") + e.what());
      }
    }
    read(s, "gru_hidden", c.stack.gru_hidden, "stack");
    read(s, "mlp_hidden", c.stack.mlp_hidden, "stack");
    if (s.contains("cell")) {
      const json& k = s.at("cell");
      check_keys(k, "stack.cell", {"h_dim", "mu_dim", "buf_len", "rank", "epsilon", "meta_enabled",
                                   "phi_bonus_enabled"});
      read(k, "h_dim", c.stack.cell.h_dim, "stack.cell");
      read(k, "mu_dim", c.stack.cell.mu_dim, "stack.cell");
      read(k, "buf_len", c.stack.cell.buf_len, "stack.cell");
      read(k, "rank", c.stack.cell.phi.rank, "stack.cell");
      read(k, "epsilon", c.stack.cell.phi.epsilon, "stack.cell");
      read(k, "meta_enabled", c.stack.cell.meta_enabled, "stack.cell");
      read(k, "phi_bonus_enabled", c.stack.cell.phi_bonus_enabled, "stack.cell");
    }
  }
  if (j.contains("env")) {
    const json& e = j.at("env");
    check_keys(e, "env", {"width", "height", "start", "goal", "damaged_goal", "damage_step",
                          "max_len", "n_envs", "damage_mode", "damage_enabled"});
    read(e, "width", c.env.width, "env");
    read(e, "height", c.env.height, "env");
    read_cell(e, "start", c.env.start, "env");
    read_cell(e, "goal", c.env.goal, "env");
    read_cell(e, "damaged_goal", c.env.damaged_goal, "env");
    read(e, "damage_step", c.env.damage_step, "env");
    read(e, "max_len", c.env.max_len, "env");
    read(e, "n_envs", c.env.n_envs, "env");
    if (e.contains("damage_mode")) {
      try {
        c.env.damage_mode = env::damage_mode_from_string(e.at("damage_mode").get<std::string>());
      } catch (const std::invalid_argument& ex) {
        throw ConfigError(std::string("env.damage_mode: ") + ex.what());
      }
    }
    read(e, "damage_enabled", c.env.damage_enabled, "env");
  }
  if (j.contains("ablate_buffer")) {
    check_keys(j.at("ablate_buffer"), "ablate_buffer", {"buffers"});
    read(j.at("ablate_buffer"), "buffers", c.buffers, "ablate_buffer");
  }
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    check_keys(m, "metrics", {"late_first", "late_last", "latency_window"});
    read(m, "late_first", c.metrics.late_first, "metrics");
    read(m, "late_last", c.metrics.late_last, "metrics");
    read(m, "latency_window", c.metrics.latency_window, "metrics");
  }
  if (j.contains("calibrate")) {
    const json& k = j.at("calibrate");
    check_keys(k, "calibrate", {"n_systems", "min_dim", "max_dim", "samples", "seed", "min_spearman"});
    read(k, "n_systems", c.calibrate.n_systems, "calibrate");
    read(k, "min_dim", c.calibrate.min_dim, "calibrate");
    read(k, "max_dim", c.calibrate.max_dim, "calibrate");
    read(k, "samples", c.calibrate.samples, "calibrate");
    read(k, "seed", c.calibrate.seed, "calibrate");
    read(k, "min_spearman", c.min_spearman, "calibrate");
  }
  if (j.contains("verify")) {
    const json& v = j.at("verify");
    check_keys(v, "verify", {"seed", "e2e_weights", "e2e_steps", "e2e_layers", "e2e_bonus_weight",
                             "e2e_tolerance", "primitive_trials", "primitive_tolerance", "additivity_pairs",
                             "additivity_tolerance", "ascent_buffers", "ascent_min_gradient", "ascent_required_fraction"});
    auto& o = c.verify;
    read(v, "seed", o.seed, "verify");
    read(v, "e2e_weights", o.e2e_weights, "verify");
    read(v, "e2e_steps", o.e2e_steps, "verify");
    read(v, "e2e_layers", o.e2e_layers, "verify");
    read(v, "e2e_bonus_weight", o.e2e_bonus_weight, "verify");
    read(v, "e2e_tolerance", o.e2e_tolerance, "verify");
    read(v, "primitive_trials", o.primitive_trials, "verify");
    read(v, "primitive_tolerance", o.primitive_tolerance, "verify");
    read(v, "additivity_pairs", o.additivity_pairs, "verify");
    read(v, "additivity_tolerance", o.additivity_tolerance, "verify");
    read(v, "ascent_buffers", o.ascent_buffers, "verify");
    read(v, "ascent_min_gradient", o.ascent_min_gradient, "verify");
    read(v, "ascent_required_fraction", o.ascent_required_fraction, "verify");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot read " + path.string());
  std::ostringstream buf;
  buf << f.rdbuf();
  return config_from_json(buf.str());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

// Runs -------------------------------------------------------------------------

SeedRun run_seed(const RunConfig& cfg, const agent::StackConfig& stack, const std::string& label,
                 std::uint64_t seed, RunCache* cache) {
  const RunKey key{cache_label(stack), stack.cell.buf_len, seed};
  if (cache) {
    auto it = cache->find(key);
    if (it != cache->end()) return {label, seed, it->second};
  }
  agent::TrainConfig tc = cfg.train;
  tc.seed = seed;
  SeedRun run{label, seed, agent::train(tc, stack, cfg.env)};
  if (cache) cache->emplace(key, run.result);
  return run;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double final_return(const std::vector<agent::EpisodeRow>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("final_return: no episodes");
  return episodes.back().mean_return;
}

double late_phase_phi(const std::vector<agent::EpisodeRow>& episodes, const MetricsConfig& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : episodes)
    if (row.episode >= m.late_first && row.episode <= m.late_last) {
      sum += row.phi_rel_percent;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("late_phase_phi: no episodes in the late phase");
  return sum / static_cast<double>(n);
}

std::string episodes_csv(const std::vector<SeedRun>& runs) {
  std::string out = "variant,seed,episode,mean_return,phi_rel_percent\n";
  for (const auto& r : runs)
    for (const auto& row : r.result.episodes)
      out += r.variant + ',' + std::to_string(r.seed) + ',' + std::to_string(row.episode) + ',' +
             fmt(row.mean_return) + ',' + fmt(row.phi_rel_percent) + '\n';
  return out;
}

std::string steps_csv(const std::vector<SeedRun>& runs) {
  std::string out = "variant,seed,global_step,mean_reward,phi_rel_percent,damaged\n";
  for (const auto& r : runs)
    for (const auto& s : r.result.steps)
      out += r.variant + ',' + std::to_string(r.seed) + ',' + std::to_string(s.global_step) + ',' +
             fmt(s.mean_reward) + ',' + fmt(100.0 * s.mean_phi) + ',' + (s.damaged ? "1" : "0") + '\n';
  return out;
}

std::string scatter_csv(const oracle::CalibrationReport& report) {
  std::string out = "system_id,oracle_phi,auto_phi_rel\n";
  for (const auto& r : report.rows)
    out += std::to_string(r.system_id) + ',' + fmt(r.oracle_phi) + ',' + fmt(r.auto_phi_rel) + '\n';
  return out;
}

// Commands ---------------------------------------------------------------------

TrainOutcome cmd_train(const RunConfig& cfg, RunCache* cache) {
  write_config(cfg);
  TrainOutcome out;
  std::vector<double> finals, lates;
  const std::string label = agent::to_string(cfg.stack.variant);
  for (std::uint64_t seed : cfg.seeds) {
    out.runs.push_back(run_seed(cfg, cfg.stack, label, seed, cache));
    finals.push_back(final_return(out.runs.back().result.episodes));
    lates.push_back(late_phase_phi(out.runs.back().result.episodes, cfg.metrics));
  }
  out.median_final_return = median(finals);
  out.median_late_phi = median(lates);
  write_text(cfg.out / "episodes.csv", episodes_csv(out.runs));
  write_text(cfg.out / "steps.csv", steps_csv(out.runs));
  write_text(cfg.out / "return_phi.svg", return_phi_svg(out.runs, cfg));
  save_checkpoints(out.runs, cfg, cfg.stack);
  return out;
}

BufferOutcome cmd_ablate_buffer(const RunConfig& cfg, RunCache* cache) {
  write_config(cfg);
  BufferOutcome out;
  std::vector<SeedRun> all;
  std::string comparison = "buf_len,seed,final_return,late_phi_percent\n";
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  plot::Panel ret{"Return by buffer length (median over seeds)", "episode", "return", {}, {}, {}};
  plot::Panel phi{"Auto-Phi by buffer length (median over seeds)", "episode", "phi_rel (%)", {}, {}, {}};
  std::size_t color = 0;
  for (std::size_t buf : cfg.buffers) {
    agent::StackConfig stack = cfg.stack;
    stack.cell.buf_len = buf;
    const std::string label = agent::to_string(stack.variant) + "_buf" + std::to_string(buf);
    std::vector<double> finals, lates;
    for (std::uint64_t seed : cfg.seeds) {
      SeedRun run = run_seed(cfg, stack, label, seed, cache);
      finals.push_back(final_return(run.result.episodes));
      lates.push_back(late_phase_phi(run.result.episodes, cfg.metrics));
      comparison += std::to_string(buf) + ',' + std::to_string(seed) + ',' + fmt(finals.back()) + ',' +
                    fmt(lates.back()) + '\n';
      out.runs[buf].push_back(run);
      all.push_back(std::move(run));
    }
    out.median_final_return[buf] = median(finals);
    out.median_late_phi[buf] = median(lates);
    const auto& runs = out.runs[buf];
    const auto r = median_curve(runs, [](const agent::EpisodeRow& e) { return e.mean_return; });
    const auto p = median_curve(runs, [](const agent::EpisodeRow& e) { return e.phi_rel_percent; });
    const std::string c = colors[color++ % 5];
    const std::string name = "buffer " + std::to_string(buf);
    ret.series.push_back({name, c, episode_axis(r.size()), plot::moving_average(r, 10), false, 1.5});
    phi.series.push_back({name, c, episode_axis(p.size()), plot::moving_average(p, 10), false, 1.5});
    ret.marker = phi.marker = damage_episode(runs, cfg.env);
  }
  ret.title += ", 10-ep average";
  phi.title += ", 10-ep average";
  write_text(cfg.out / "episodes.csv", episodes_csv(all));
  write_text(cfg.out / "steps.csv", steps_csv(all));
  write_text(cfg.out / "buffer_comparison.csv", comparison);
  write_text(cfg.out / "buffer_ablation.svg", plot::render_svg({ret, phi}));
  return out;
}

MetaOutcome cmd_ablate_meta(const RunConfig& cfg, RunCache* cache) {
  write_config(cfg);
  MetaOutcome out;
  agent::StackConfig full = cfg.stack;
  full.variant = agent::Variant::riiu;
  agent::StackConfig no_meta = cfg.stack;
  no_meta.variant = agent::Variant::riiu_no_meta;

  std::vector<double> lat_full, lat_nm, phi_full, phi_nm;
  for (std::uint64_t seed : cfg.seeds) {
    out.full.push_back(run_seed(cfg, full, "riiu", seed, cache));
    out.no_meta.push_back(run_seed(cfg, no_meta, "riiu_no_meta", seed, cache));
    for (const SeedRun* run : {&out.full.back(), &out.no_meta.back()}) {
      LatencyRow row{run->variant, seed,
                     agent::repair_latency(agent::step_return_series(run->result.episodes),
                                           cfg.env.damage_step, cfg.metrics.latency_window),
                     late_phase_phi(run->result.episodes, cfg.metrics)};
      const bool is_full = run == &out.full.back();
      (is_full ? lat_full : lat_nm).push_back(static_cast<double>(row.latency.steps));
      (is_full ? phi_full : phi_nm).push_back(row.late_phi);
      out.latencies.push_back(row);
    }
  }
  out.median_latency_full = median(lat_full);
  out.median_latency_no_meta = median(lat_nm);
  out.latency_ratio = safe_ratio(out.median_latency_no_meta, out.median_latency_full);
  out.median_late_phi_full = median(phi_full);
  out.median_late_phi_no_meta = median(phi_nm);
  out.phi_ratio = safe_ratio(out.median_late_phi_full, out.median_late_phi_no_meta);

  std::string csv = "variant,seed,latency_steps,recovered,pre_damage_return,late_phi_percent,latency_window\n";
  for (const auto& r : out.latencies)
    csv += r.variant + ',' + std::to_string(r.seed) + ',' + std::to_string(r.latency.steps) + ',' +
           (r.latency.recovered ? "1" : "0") + ',' + fmt(r.latency.pre_damage_return) + ',' +
           fmt(r.late_phi) + ',' + std::to_string(cfg.metrics.latency_window) + '\n';
  write_text(cfg.out / "meta_comparison.csv", csv);

  std::string summary = "median_latency_full," + fmt(out.median_latency_full) + "\n" +
                        "median_latency_no_meta," + fmt(out.median_latency_no_meta) + "\n" +
                        "latency_ratio," + fmt(out.latency_ratio) + "\n" +
                        "median_late_phi_full," + fmt(out.median_late_phi_full) + "\n" +
                        "median_late_phi_no_meta," + fmt(out.median_late_phi_no_meta) + "\n" +
                        "phi_ratio," + fmt(out.phi_ratio) + "\n";
  write_text(cfg.out / "meta_summary.csv", "metric,value\n" + summary);

  std::vector<SeedRun> all = out.full;
  all.insert(all.end(), out.no_meta.begin(), out.no_meta.end());
  write_text(cfg.out / "episodes.csv", episodes_csv(all));
  write_text(cfg.out / "steps.csv", steps_csv(all));

  const auto x = episode_axis(cfg.train.episodes);
  auto curve = [&](const std::vector<SeedRun>& runs, bool phi) {
    return plot::moving_average(
        median_curve(runs, [phi](const agent::EpisodeRow& e) { return phi ? e.phi_rel_percent : e.mean_return; }),
        10);
  };
  const auto marker = damage_episode(out.full, cfg.env);
  plot::Panel ret{"Return, full vs no-meta (median, 10-ep average)", "episode", "return",
                  {{"full", "#1f77b4", x, curve(out.full, false), false, 1.5},
                   {"no-meta", "#d62728", x, curve(out.no_meta, false), false, 1.5}},
                  marker, "damage"};
  plot::Panel phi{"Auto-Phi, full vs no-meta (median, 10-ep average)", "episode", "phi_rel (%)",
                  {{"full", "#1f77b4", x, curve(out.full, true), false, 1.5},
                   {"no-meta", "#d62728", x, curve(out.no_meta, true), false, 1.5}},
                  marker, "damage"};
  write_text(cfg.out / "meta_ablation.svg", plot::render_svg({ret, phi}));
  return out;
}

bool VerifyOutcome::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const auto& s) { return s.passed; }) &&
         !mutation.passed;
}

VerifyOutcome cmd_verify(const RunConfig& cfg, double gradient_fault) {
  write_config(cfg);
  VerifyOutcome out;
  {
    autophi::testing::ScopedGradientFault fault(gradient_fault);
    out.suites = verify::run_all(cfg.verify);
  }
  {
    autophi::testing::ScopedGradientFault fault(-1.0);
    out.mutation = verify::end_to_end_gradient(cfg.verify);
    out.mutation.name = "end_to_end_negated_gradient";
  }
  std::string report = verify::format_report(out.suites);
  report += std::string("mutation check (negated Auto-Phi gradient must be detected): ") +
            (out.mutation.passed ? "NOT DETECTED" : "detected") + ", " +
            std::to_string(out.mutation.failures) + "/" + std::to_string(out.mutation.cases) +
            " weights flagged\n";
  report += std::string("overall: ") + (out.passed() ? "PASS" : "FAIL") + "\n";
  write_text(cfg.out / "verify_report.txt", report);
  return out;
}

oracle::CalibrationReport cmd_calibrate(const RunConfig& cfg) {
  write_config(cfg);
  const oracle::CalibrationReport report = oracle::calibrate(cfg.calibrate);
  write_text(cfg.out / "scatter.csv", scatter_csv(report));
  write_text(cfg.out / "calibration.csv",
             "metric,value\nn_systems," + std::to_string(report.rows.size()) + "\nspearman," +
                 fmt(report.spearman) + "\nmin_spearman," + fmt(cfg.min_spearman) + "\n");

  std::vector<double> xs, ys;
  for (const auto& r : report.rows) {
    xs.push_back(r.oracle_phi);
    ys.push_back(r.auto_phi_rel);
  }
  std::ostringstream svg;
  const double w = 560, h = 420, l = 70, rt = 20, t = 30, b = 50;
  const auto [xmin, xmax] = std::minmax_element(xs.begin(), xs.end());
  const auto [ymin, ymax] = std::minmax_element(ys.begin(), ys.end());
  const double x0 = xs.empty() ? 0 : *xmin, x1 = xs.empty() ? 1 : std::max(*xmax, x0 + 1e-9);
  const double y0 = ys.empty() ? 0 : *ymin, y1 = ys.empty() ? 1 : std::max(*ymax, y0 + 1e-9);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\""
      << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << l << "\" y=\"18\" font-size=\"13\">Auto-Phi vs Gaussian MIP proxy (Spearman "
      << fmt(std::round(report.spearman * 1000) / 1000) << ")</text>\n"
      << "<rect x=\"" << l << "\" y=\"" << t << "\" width=\"" << w - l - rt << "\" height=\"" << h - t - b
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double px = l + (xs[i] - x0) / (x1 - x0) * (w - l - rt);
    const double py = t + (1 - (ys[i] - y0) / (y1 - y0)) * (h - t - b);
    svg << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>\n";
  }
  svg << "<text x=\"" << (w + l) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">oracle phi ("
      << fmt(x0) << " .. " << fmt(x1) << ")</text>\n"
      << "<text transform=\"translate(16," << h / 2 << ") rotate(-90)\" text-anchor=\"middle\">auto_phi_rel ("
      << fmt(std::round(y0 * 1e4) / 1e4) << " .. " << fmt(std::round(y1 * 1e4) / 1e4) << ")</text>\n</svg>\n";
  write_text(cfg.out / "scatter.svg", svg.str());
  return report;
}

}  // namespace riiu::harness
