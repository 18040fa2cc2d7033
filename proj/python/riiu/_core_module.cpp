#include <pybind11/pybind11.h>
#include <pybind11/functional.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "riiu/agent.hpp"
#include "riiu/autophi.hpp"
#include "riiu/error.hpp"
#include "riiu/gridworld.hpp"
#include "riiu/harness.hpp"
#include "riiu/oracle.hpp"
#include "riiu/verify.hpp"

namespace py = pybind11;
using namespace riiu;

namespace {

using Rows = std::vector<std::vector<double>>;

std::vector<Vector> to_samples(const Rows& rows) {
  std::vector<Vector> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r);
  return out;
}

Matrix to_matrix(const Rows& rows) {
  const std::size_t n = rows.size();
  const std::size_t d = n ? rows.front().size() : 0;
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != d) throw ShapeError("ragged matrix");
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

std::vector<double> to_list(const Vector& v) { return {v.begin(), v.end()}; }

autophi::PhiConfig phi_config(std::size_t rank, double epsilon, const std::string& normalization,
                              std::vector<std::size_t> blocks) {
  autophi::PhiConfig c;
  c.rank = rank;
  c.epsilon = epsilon;
  if (normalization == "standard") c.normalization = autophi::Normalization::standard;
  else if (normalization == "sum_of_norms") c.normalization = autophi::Normalization::sum_of_norms;
  else throw std::invalid_argument("normalization must be 'standard' or 'sum_of_norms'");
  c.blocks = std::move(blocks);
  return c;
}

py::dict episode_dict(const agent::EpisodeRow& r) {
  py::dict d;
  d["episode"] = r.episode;
  d["mean_return"] = r.mean_return;
  d["phi_rel_percent"] = r.phi_rel_percent;
  d["first_global_step"] = r.first_global_step;
  d["last_global_step"] = r.last_global_step;
  d["damaged"] = r.damaged;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Auto-Phi, the RIIU agent and its experiment harness";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IllConditioned>(m, "IllConditioned", PyExc_ArithmeticError);
  py::register_exception<agent::Divergence>(m, "Divergence", PyExc_ArithmeticError);

  m.def(
      "auto_phi_rel",
      [](const Rows& samples, std::size_t rank, double epsilon) {
        return autophi::auto_phi_rel(to_samples(samples), phi_config(rank, epsilon, "standard", {}));
      },
      py::arg("samples"), py::arg("rank") = 16, py::arg("epsilon") = 1e-9);
  m.def(
      "auto_phi_cov",
      [](const Rows& sigma, std::size_t rank, double epsilon, const std::string& normalization,
         std::vector<std::size_t> blocks) {
        return autophi::auto_phi_cov(to_matrix(sigma), phi_config(rank, epsilon, normalization, blocks));
      },
      py::arg("sigma"), py::arg("rank") = 16, py::arg("epsilon") = 1e-9,
      py::arg("normalization") = "standard", py::arg("blocks") = std::vector<std::size_t>{});
  m.def(
      "grad_auto_phi",
      [](const Rows& samples, std::size_t index, std::size_t rank, double epsilon) {
        return to_list(autophi::grad_auto_phi(to_samples(samples), index,
                                              phi_config(rank, epsilon, "standard", {})));
      },
      py::arg("samples"), py::arg("index"), py::arg("rank") = 16, py::arg("epsilon") = 1e-9);
  m.def(
      "lipschitz_bound",
      [](const Rows& sigma, double epsilon) { return autophi::lipschitz_bound(to_matrix(sigma), epsilon); },
      py::arg("sigma"), py::arg("epsilon") = 1e-9);

  m.def(
      "bipartition_mi",
      [](const Rows& sigma, const std::vector<std::size_t>& part) {
        return oracle::bipartition_mi(oracle::GaussianSystem(to_matrix(sigma)), part);
      },
      py::arg("sigma"), py::arg("part"));
  m.def(
      "oracle_phi", [](const Rows& sigma) { return oracle::oracle_phi(oracle::GaussianSystem(to_matrix(sigma))); },
      py::arg("sigma"));
  m.def(
      "calibrate",
      [](std::size_t n_systems, std::uint64_t seed) {
        oracle::CalibrationConfig c;
        c.n_systems = n_systems;
        c.seed = seed;
        const auto r = oracle::calibrate(c);
        py::list rows;
        for (const auto& s : r.rows) rows.append(py::make_tuple(s.system_id, s.dim, s.oracle_phi, s.auto_phi_rel));
        return py::make_tuple(r.spearman, rows);
      },
      py::arg("n_systems") = 100, py::arg("seed") = 1);

  m.def("optimal_return", [](bool damaged) { return env::optimal_return(env::EnvConfig{}, damaged); },
        py::arg("damaged") = false);

  m.def(
      "train",
      [](const std::string& config_json, std::uint64_t seed) {
        harness::RunConfig cfg = harness::config_from_json(config_json.empty() ? "{}" : config_json);
        cfg.resolve();
        agent::TrainResult result;
        {
          py::gil_scoped_release release;
          agent::TrainConfig tc = cfg.train;
          tc.seed = seed;
          result = agent::train(tc, cfg.stack, cfg.env);
        }
        py::list rows;
        for (const auto& r : result.episodes) rows.append(episode_dict(r));
        return rows;
      },
      py::arg("config_json") = "", py::arg("seed") = 1,
      "Train one seed; returns one dict per episode.");
  m.def(
      "repair_latency",
      [](const std::vector<double>& series, std::size_t damage_step, std::size_t window) {
        const auto r = agent::repair_latency(series, damage_step, window);
        return py::make_tuple(r.steps, r.recovered, r.pre_damage_return);
      },
      py::arg("series"), py::arg("damage_step"), py::arg("window") = 5);

  m.def(
      "verify",
      [](std::uint64_t seed, double gradient_fault) {
        verify::VerifyConfig c;
        c.seed = seed;
        autophi::testing::ScopedGradientFault fault(gradient_fault);
        py::dict out;
        for (const auto& s : verify::run_all(c)) out[py::str(s.name)] = s.passed;
        return out;
      },
      py::arg("seed") = 1, py::arg("gradient_fault") = 1.0,
      "Run the property suites; returns {suite: passed}.");

  m.def("default_config", []() { return harness::to_json(harness::RunConfig{}); });
}
