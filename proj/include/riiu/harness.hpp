#pragma once

// Experiment harness behind the `riiu` CLI: run configuration, training
// sweeps over seeds, the two ablations, calibration and the verification
// suites, with CSV/SVG outputs.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "riiu/agent.hpp"
#include "riiu/gridworld.hpp"
#include "riiu/oracle.hpp"
#include "riiu/verify.hpp"

namespace riiu::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct MetricsConfig {
  std::size_t late_first = 100;  ///< first episode of the late phase (1-based)
  std::size_t late_last = 150;
  std::size_t latency_window = 5;
};

struct RunConfig {
  agent::TrainConfig train;
  agent::StackConfig stack;
  env::EnvConfig env;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<std::size_t> buffers{8, 32, 64};
  MetricsConfig metrics;
  oracle::CalibrationConfig calibrate;
  double min_spearman = 0.5;
  verify::VerifyConfig verify;
  std::filesystem::path out = "runs";

  /// Ties layer-1 in_dim to the observation width and validates everything.
  void resolve();
};

/// JSON text of every field; load_config(to_json(c)) reproduces c.
std::string to_json(const RunConfig& cfg);
/// Overlays the keys present in `text` on `base`. Unknown keys throw ConfigError.
RunConfig config_from_json(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

struct SeedRun {
  std::string variant;
  std::uint64_t seed = 0;
  agent::TrainResult result;
};

/// Identifies a training run for reuse between commands.
using RunKey = std::tuple<std::string, std::size_t, std::uint64_t>;
using RunCache = std::map<RunKey, agent::TrainResult>;

/// Trains one seed of `stack`, or returns the cached result for the same
/// variant, buffer length and seed. The cache assumes every other setting is
/// shared by the callers.
SeedRun run_seed(const RunConfig& cfg, const agent::StackConfig& stack, const std::string& label,
                 std::uint64_t seed, RunCache* cache = nullptr);

double median(std::vector<double> v);
double final_return(const std::vector<agent::EpisodeRow>& episodes);
/// Mean phi (percent) over episodes [first, last], 1-based and inclusive.
double late_phase_phi(const std::vector<agent::EpisodeRow>& episodes, const MetricsConfig& m);

std::string episodes_csv(const std::vector<SeedRun>& runs);
std::string steps_csv(const std::vector<SeedRun>& runs);
std::string scatter_csv(const oracle::CalibrationReport& report);

struct TrainOutcome {
  std::vector<SeedRun> runs;
  double median_final_return = 0.0;
  double median_late_phi = 0.0;
};

struct BufferOutcome {
  std::map<std::size_t, std::vector<SeedRun>> runs;
  std::map<std::size_t, double> median_late_phi;
  std::map<std::size_t, double> median_final_return;
};

struct LatencyRow {
  std::string variant;
  std::uint64_t seed = 0;
  agent::RepairLatency latency;
  double late_phi = 0.0;
};

struct MetaOutcome {
  std::vector<SeedRun> full;
  std::vector<SeedRun> no_meta;
  std::vector<LatencyRow> latencies;
  double median_latency_full = 0.0;
  double median_latency_no_meta = 0.0;
  /// median latency (no-meta) / median latency (full); NaN when both are 0.
  double latency_ratio = 0.0;
  double median_late_phi_full = 0.0;
  double median_late_phi_no_meta = 0.0;
  /// NaN when both are 0.
  double phi_ratio = 0.0;
};

struct VerifyOutcome {
  std::vector<verify::SuiteResult> suites;
  /// The end-to-end check rerun with the Auto-Phi gradient negated; it must fail.
  verify::SuiteResult mutation;
  bool passed() const;
};

/// Each command writes its resolved config and outputs under cfg.out.
TrainOutcome cmd_train(const RunConfig& cfg, RunCache* cache = nullptr);
BufferOutcome cmd_ablate_buffer(const RunConfig& cfg, RunCache* cache = nullptr);
MetaOutcome cmd_ablate_meta(const RunConfig& cfg, RunCache* cache = nullptr);
/// `gradient_fault` != 1 scales every Auto-Phi gradient for the main suites.
VerifyOutcome cmd_verify(const RunConfig& cfg, double gradient_fault = 1.0);
oracle::CalibrationReport cmd_calibrate(const RunConfig& cfg);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace riiu::harness
