// riiu: train | ablate-buffer | ablate-meta | verify | calibrate
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 property failure,
// 3 numerical divergence.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "riiu/harness.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kProperty = 2, kDivergence = 3 };

struct Options {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  double gradient_fault = 1.0;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seeds, "Comma-separated seed list")->delimiter(',');
  sub->add_option("--out", o.out, "Output directory");
}

riiu::harness::RunConfig resolve(const Options& o) {
  riiu::harness::RunConfig cfg =
      o.config.empty() ? riiu::harness::RunConfig{} : riiu::harness::load_config(o.config);
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.out.empty()) cfg.out = o.out;
  cfg.resolve();
  return cfg;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reflexive integrated-information agents: training, ablations, checks"};
  app.require_subcommand(1);
  Options o;
  CLI::App* train = app.add_subcommand("train", "Train the agent over the seed list");
  CLI::App* buffer = app.add_subcommand("ablate-buffer", "Sweep the sliding-buffer length");
  CLI::App* meta = app.add_subcommand("ablate-meta", "Compare the full unit with the no-meta ablation");
  CLI::App* verify = app.add_subcommand("verify", "Run the gradient, additivity and ascent suites");
  CLI::App* calibrate = app.add_subcommand("calibrate", "Rank-correlate Auto-Phi with the Gaussian MIP proxy");
  for (CLI::App* sub : {train, buffer, meta, verify, calibrate}) add_common(sub, o);
  verify->add_option("--inject-gradient-fault", o.gradient_fault)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    const riiu::harness::RunConfig cfg = resolve(o);
    if (train->parsed()) {
      const auto r = riiu::harness::cmd_train(cfg);
      std::cout << "median final return " << num(r.median_final_return) << ", median late-phase phi "
                << num(r.median_late_phi) << "%\n";
    } else if (buffer->parsed()) {
      const auto r = riiu::harness::cmd_ablate_buffer(cfg);
      for (const auto& [buf, phi] : r.median_late_phi)
        std::cout << "buffer " << buf << ": median late-phase phi " << num(phi) << "%, final return "
                  << num(r.median_final_return.at(buf)) << "\n";
    } else if (meta->parsed()) {
      const auto r = riiu::harness::cmd_ablate_meta(cfg);
      std::cout << "median repair latency: full " << num(r.median_latency_full) << ", no-meta "
                << num(r.median_latency_no_meta) << " (ratio " << num(r.latency_ratio) << ")\n"
                << "median late-phase phi: full " << num(r.median_late_phi_full) << "%, no-meta "
                << num(r.median_late_phi_no_meta) << "% (ratio " << num(r.phi_ratio) << ")\n";
    } else if (verify->parsed()) {
      const auto r = riiu::harness::cmd_verify(cfg, o.gradient_fault);
      std::cout << riiu::verify::format_report(r.suites)
                << "mutation check: " << (r.mutation.passed ? "NOT DETECTED" : "detected") << "\n";
      if (!r.passed()) return kProperty;
    } else if (calibrate->parsed()) {
      const auto r = riiu::harness::cmd_calibrate(cfg);
      std::cout << "spearman " << num(r.spearman) << " over " << r.rows.size() << " systems (floor "
                << num(cfg.min_spearman) << ")\n";
      if (!(r.spearman >= cfg.min_spearman)) return kProperty;
    }
  } catch (const riiu::agent::Divergence& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kDivergence;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}
