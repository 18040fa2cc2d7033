#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include "riiu/harness.hpp"
#include "riiu/plot.hpp"

using namespace riiu;
using namespace riiu::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Tag balance check: every element is closed in order and there is one root.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  int roots = 0;
  for (std::size_t i = s.find('<'); i != std::string::npos; i = s.find('<', i + 1)) {
    const std::size_t end = s.find('>', i);
    if (end == std::string::npos) return false;
    const std::string tag = s.substr(i + 1, end - i - 1);
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      const std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      continue;
    }
    const std::string name = tag.substr(0, tag.find_first_of(" \t\n/"));
    if (stack.empty()) ++roots;
    if (tag.back() != '/') stack.push_back(name);
  }
  return stack.empty() && roots == 1;
}

RunConfig small_config(const std::string& dir) {
  RunConfig c;
  c.train.episodes = 6;
  c.seeds = {1, 2};
  c.env.damage_step = 30;
  c.metrics.late_first = 3;
  c.metrics.late_last = 6;
  c.buffers = {8, 16};
  c.out = fs::temp_directory_path() / ("riiu_harness_test_" + dir);
  fs::remove_all(c.out);
  return c;
}

}  // namespace

TEST_CASE("config round trip and strict keys") {
  RunConfig c;
  c.train.lr = 1e-3;
  c.seeds = {7, 9};
  c.env.damage_mode = env::DamageMode::noop_right;
  c.stack.cell.buf_len = 32;
  c.buffers = {4, 8};
  const std::string text = to_json(c);
  const RunConfig back = config_from_json(text);
  CHECK(to_json(back) == text);
  CHECK(back.train.lr == 1e-3);
  CHECK(back.seeds == std::vector<std::uint64_t>{7, 9});

  CHECK_THROWS_AS(config_from_json(R"({"train": {"learning_rate": 1}})"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"bogus": 1})"), ConfigError);
  CHECK_THROWS_AS(config_from_json("{not json"), ConfigError);
  CHECK_THROWS_AS(config_from_json(R"({"env": {"damage_mode": "melt"}})"), ConfigError);

  const RunConfig partial = config_from_json(R"({"train": {"episodes": 12}})");
  CHECK(partial.train.episodes == 12);
  CHECK(partial.train.lr == 5e-4);
}

TEST_CASE("defaults match the published hyperparameters") {
  RunConfig c;
  c.resolve();
  CHECK(c.train.episodes == 150);
  CHECK(c.train.gamma == 0.99);
  CHECK(c.train.lr == 5e-4);
  CHECK(c.train.clip == 1.0);
  CHECK(c.train.phi_bonus_weight == 0.02);
  CHECK(c.stack.cell.h_dim == 32);
  CHECK(c.stack.cell.mu_dim == 16);
  CHECK(c.stack.cell.buf_len == 64);
  CHECK(c.stack.cell.phi.rank == 16);
  CHECK(c.stack.topk == 8);
  CHECK(c.env.n_envs == 8);
  CHECK(c.env.damage_step == 50);
  CHECK(c.stack.cell.in_dim == 18);
}

TEST_CASE("metric helpers") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  std::vector<agent::EpisodeRow> rows(4);
  for (std::size_t i = 0; i < 4; ++i) {
    rows[i].episode = i + 1;
    rows[i].phi_rel_percent = double(i);
    rows[i].mean_return = 0.25 * double(i);
  }
  CHECK(final_return(rows) == 0.75);
  MetricsConfig m;
  m.late_first = 2;
  m.late_last = 3;
  CHECK(late_phase_phi(rows, m) == 1.5);
}

TEST_CASE("train writes reproducible CSVs, a checkpoint and a well-formed plot") {
  const RunConfig c = small_config("train");
  const TrainOutcome a = cmd_train(c);
  REQUIRE(a.runs.size() == 2);
  for (const char* f : {"config.json", "episodes.csv", "steps.csv", "return_phi.svg",
                        "checkpoint_riiu_seed1.txt", "checkpoint_riiu_seed2.txt"})
    CHECK_MESSAGE(fs::exists(c.out / f), f);

  const auto ep = lines(slurp(c.out / "episodes.csv"));
  CHECK(ep.front() == "variant,seed,episode,mean_return,phi_rel_percent");
  CHECK(ep.size() == 1 + 2 * 6);
  CHECK(ep[1].rfind("riiu,1,1,", 0) == 0);
  const auto st = lines(slurp(c.out / "steps.csv"));
  CHECK(st.front() == "variant,seed,global_step,mean_reward,phi_rel_percent,damaged");
  CHECK(st.size() > 1);

  CHECK(well_formed_xml(slurp(c.out / "return_phi.svg")));
  const RunConfig reloaded = load_config(c.out / "config.json");
  CHECK(to_json(reloaded) == slurp(c.out / "config.json"));

  const std::string first = slurp(c.out / "episodes.csv");
  cmd_train(c);
  CHECK(slurp(c.out / "episodes.csv") == first);
}

TEST_CASE("ablations share cached runs and write comparison files") {
  RunConfig c = small_config("ablate");
  c.buffers = {8, 64};
  RunCache cache;
  const BufferOutcome buf = cmd_ablate_buffer(c, &cache);
  CHECK(buf.runs.size() == 2);
  CHECK(cache.size() == 4);
  CHECK(fs::exists(c.out / "buffer_comparison.csv"));
  CHECK(well_formed_xml(slurp(c.out / "buffer_ablation.svg")));
  CHECK(lines(slurp(c.out / "buffer_comparison.csv")).front() ==
        "buf_len,seed,final_return,late_phi_percent");

  const MetaOutcome meta = cmd_ablate_meta(c, &cache);
  CHECK(meta.full.size() == 2);
  CHECK(meta.no_meta.size() == 2);
  CHECK(meta.latencies.size() == 4);
  // The full variant at the default buffer length comes from the buffer sweep.
  CHECK(cache.size() == 6);
  CHECK(fs::exists(c.out / "meta_comparison.csv"));
  CHECK(fs::exists(c.out / "meta_summary.csv"));
  CHECK(well_formed_xml(slurp(c.out / "meta_ablation.svg")));
}

TEST_CASE("calibration writes one scatter row per system") {
  RunConfig c = small_config("calibrate");
  c.calibrate.n_systems = 30;
  const oracle::CalibrationReport r = cmd_calibrate(c);
  const auto rows = lines(slurp(c.out / "scatter.csv"));
  CHECK(rows.front() == "system_id,oracle_phi,auto_phi_rel");
  CHECK(rows.size() == 31);
  CHECK(r.rows.size() == 30);
  CHECK(well_formed_xml(slurp(c.out / "scatter.svg")));
}

TEST_CASE("svg renderer output is well formed") {
  plot::Panel p;
  p.title = "a < b & c";
  p.series.push_back({"s", "#000", {0, 1, 2}, {1, 3, 2}});
  p.marker = 1.0;
  CHECK(well_formed_xml(plot::render_svg({p})));
  CHECK(plot::moving_average({1, 2, 3, 4}, 2) == std::vector<double>{1, 1.5, 2.5, 3.5});
}
