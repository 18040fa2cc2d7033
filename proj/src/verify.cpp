#include "riiu/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "riiu/agent.hpp"
#include "riiu/autophi.hpp"
#include "riiu/grad.hpp"
#include "riiu/tensor.hpp"

namespace riiu::verify {

namespace {

std::string describe(const char* what, std::size_t index, double analytic, double numeric) {
  std::ostringstream s;
  s.precision(10);
  s << what << " #" << index << ": analytic " << analytic << " vs numeric " << numeric;
  return s.str();
}

void record(SuiteResult& r, double err, const std::string& detail) {
  ++r.cases;
  r.worst = std::max(r.worst, err);
  if (!(err < r.tolerance)) {
    if (r.failures == 0) r.counterexample = detail;
    ++r.failures;
  }
}

Vector random_vector(RngStream& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (double& x : v.span()) x = scale * rng.normal();
  return v;
}

Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.span()) x = scale * rng.normal();
  return m;
}

/// Random orthogonal matrix: eigenvectors of a random symmetric matrix.
Matrix random_rotation(RngStream& rng, std::size_t n) {
  Matrix a = random_matrix(rng, n, n);
  Matrix s = add(a, a.transposed());
  return sym_eig(s).vectors;
}

/// Q diag(values) Q^T, symmetrized exactly.
Matrix spectral(const Matrix& q, const std::vector<double>& values) {
  const std::size_t n = values.size();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += q(i, k) * values[k] * q(j, k);
      out(i, j) = s;
      out(j, i) = s;
    }
  return out;
}

/// Covariance whose top `rank` eigenvalues lie in [10, 20] and the rest in
/// [0.01, 1], so joint top subspaces split cleanly along blocks.
Matrix separated_covariance(RngStream& rng, std::size_t dim, std::size_t rank) {
  std::vector<double> values(dim);
  for (std::size_t k = 0; k < dim; ++k)
    values[k] = k < rank ? rng.uniform(10.0, 20.0) : rng.uniform(0.01, 1.0);
  return spectral(random_rotation(rng, dim), values);
}

Matrix block_diagonal(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows() + b.rows();
  Matrix out(n, n);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
  for (std::size_t i = 0; i < b.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) out(a.rows() + i, a.rows() + j) = b(i, j);
  return out;
}

SuiteResult suite(const char* name, double tolerance) {
  SuiteResult r;
  r.name = name;
  r.tolerance = tolerance;
  return r;
}

/// Fourth-order central difference; truncation error O(h^4) lets h stay large
/// enough that rounding in f does not dominate.
double five_point(const std::function<double(double)>& f, double h) {
  return (-f(2 * h) + 8 * f(h) - 8 * f(-h) + f(-2 * h)) / (12 * h);
}

constexpr double kStencilStep = 1e-3;

// Primitive checks ------------------------------------------------------------

using Builder = std::function<ad::NodeId(ad::Tape&, const std::vector<ad::NodeId>&)>;

/// Reduces any node to a scalar with fixed random weights.
ad::NodeId reduce(ad::Tape& tape, ad::NodeId y, const std::vector<double>& weights) {
  std::vector<ad::NodeId> parts;
  const std::size_t n = tape.value(y).size();
  for (std::size_t i = 0; i < n; ++i) parts.push_back(tape.slice(y, i, 1));
  return tape.weighted_sum(parts, std::span<const double>(weights.data(), n));
}

void check_primitive(SuiteResult& r, RngStream& rng, const char* name,
                     const std::vector<std::size_t>& input_dims, const Builder& build) {
  std::vector<Vector> inputs;
  for (std::size_t d : input_dims) inputs.push_back(random_vector(rng, d));
  std::vector<double> weights(64);
  for (double& w : weights) w = rng.normal();

  auto evaluate = [&](const std::vector<Vector>& in, std::vector<std::vector<double>>* grads) {
    ad::Tape tape;
    std::vector<ad::NodeId> ids;
    for (const Vector& v : in) ids.push_back(tape.constant(v));
    const ad::NodeId loss = reduce(tape, build(tape, ids), weights);
    if (grads) {
      tape.backward(loss);
      for (ad::NodeId id : ids) grads->emplace_back(tape.adjoint(id).begin(), tape.adjoint(id).end());
    }
    return tape.scalar(loss);
  };

  std::vector<std::vector<double>> analytic;
  evaluate(inputs, &analytic);
  std::size_t index = 0;
  for (std::size_t a = 0; a < inputs.size(); ++a)
    for (std::size_t i = 0; i < inputs[a].dim(); ++i, ++index) {
      const double fd = five_point(
          [&](double delta) {
            auto moved = inputs;
            moved[a][i] += delta;
            return evaluate(moved, nullptr);
          },
          kStencilStep);
      record(r, relative_error(analytic[a][i], fd), describe(name, index, analytic[a][i], fd));
    }
}

void check_parameter_primitives(SuiteResult& r, RngStream& rng) {
  Matrix w = random_matrix(rng, 4, 5);
  Vector b = random_vector(rng, 4);
  const Vector x = random_vector(rng, 5);
  std::vector<double> weights(4);
  for (double& v : weights) v = rng.normal();

  auto evaluate = [&](Matrix* dw, Vector* db) {
    ad::Tape tape;
    const ad::NodeId y = tape.gelu(tape.add_bias(tape.matvec(w, dw, tape.constant(x)), b, db));
    const ad::NodeId loss = reduce(tape, y, weights);
    if (dw) tape.backward(loss);
    return tape.scalar(loss);
  };
  Matrix dw(4, 5);
  Vector db(4);
  evaluate(&dw, &db);
  auto nudge = [&](double& slot) {
    return five_point(
        [&](double delta) {
          const double orig = slot;
          slot = orig + delta;
          const double f = evaluate(nullptr, nullptr);
          slot = orig;
          return f;
        },
        kStencilStep);
  };
  for (std::size_t i = 0; i < w.span().size(); ++i) {
    const double fd = nudge(w.span()[i]);
    record(r, relative_error(dw.span()[i], fd), describe("matvec.dW", i, dw.span()[i], fd));
  }
  for (std::size_t i = 0; i < b.dim(); ++i) {
    const double fd = nudge(b[i]);
    record(r, relative_error(db[i], fd), describe("add_bias.db", i, db[i], fd));
  }
}

}  // namespace

double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

SuiteResult primitive_gradients(const VerifyConfig& cfg) {
  SuiteResult r = suite("primitives", cfg.primitive_tolerance);
  RngStream rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const Matrix w = random_matrix(rng, 3, 5);
  std::vector<double> m{1, 0, 1, 1, 0};
  for (std::size_t trial = 0; trial < cfg.primitive_trials; ++trial) {
    check_primitive(r, rng, "matvec", {5}, [&](ad::Tape& t, const auto& in) {
      return t.matvec(w, nullptr, in[0]);
    });
    check_primitive(r, rng, "add", {5, 5}, [](ad::Tape& t, const auto& in) { return t.add(in[0], in[1]); });
    check_primitive(r, rng, "mul", {5, 5}, [](ad::Tape& t, const auto& in) { return t.mul(in[0], in[1]); });
    check_primitive(r, rng, "scale", {5}, [](ad::Tape& t, const auto& in) { return t.scale(in[0], -1.7); });
    check_primitive(r, rng, "one_minus", {5}, [](ad::Tape& t, const auto& in) { return t.one_minus(in[0]); });
    check_primitive(r, rng, "mask", {5}, [&](ad::Tape& t, const auto& in) { return t.mask(in[0], m); });
    check_primitive(r, rng, "gelu", {5}, [](ad::Tape& t, const auto& in) { return t.gelu(in[0]); });
    check_primitive(r, rng, "tanh", {5}, [](ad::Tape& t, const auto& in) { return t.tanh(in[0]); });
    check_primitive(r, rng, "sigmoid", {5}, [](ad::Tape& t, const auto& in) { return t.sigmoid(in[0]); });
    check_primitive(r, rng, "concat", {3, 4}, [](ad::Tape& t, const auto& in) { return t.concat({in[0], in[1]}); });
    check_primitive(r, rng, "slice", {6}, [](ad::Tape& t, const auto& in) { return t.slice(in[0], 2, 3); });
    check_primitive(r, rng, "mean", {4, 4, 4}, [](ad::Tape& t, const auto& in) {
      return t.mean(std::span<const ad::NodeId>(in.data(), in.size()));
    });
    check_primitive(r, rng, "log_softmax_at", {4}, [](ad::Tape& t, const auto& in) {
      return t.log_softmax_at(in[0], 2);
    });
    check_primitive(r, rng, "weighted_sum", {1, 1, 1}, [](ad::Tape& t, const auto& in) {
      const double w3[] = {0.5, -2.0, 1.25};
      return t.weighted_sum(std::span<const ad::NodeId>(in.data(), in.size()), w3);
    });
    check_primitive(r, rng, "linearized_scalar", {12}, [](ad::Tape& t, const auto& in) {
      // Auto-Phi of a fixed window plus the input as the newest sample.
      RngStream local(7);
      autophi::SlidingBuffer buf(10, 12);
      for (int k = 0; k < 9; ++k) buf.push(random_vector(local, 12));
      autophi::PhiConfig pc;
      pc.rank = 3;
      const Matrix window = buf.window_with(t.value(in[0]));
      autophi::PhiEvaluation ev = autophi::evaluate(window, window.rows() - 1, pc);
      return t.linearized_scalar(in[0], ev.value, std::move(ev.gradient));
    });
    check_parameter_primitives(r, rng);
  }
  r.passed = r.failures == 0;
  return r;
}

SuiteResult autophi_gradient(const VerifyConfig& cfg, std::size_t buffers, double tolerance) {
  SuiteResult r = suite("autophi_gradient", tolerance);
  RngStream rng(cfg.seed ^ 0x51ed270b27a4e1a1ULL);
  autophi::PhiConfig pc;
  const double h = 1e-6;
  std::size_t done = 0;
  while (done < buffers) {
    std::vector<Vector> samples;
    for (int k = 0; k < 64; ++k) samples.push_back(random_vector(rng, 48));
    const std::size_t idx = rng.uniform_index(samples.size());
    Matrix rows(samples.size(), 48);
    for (std::size_t s = 0; s < samples.size(); ++s)
      std::copy(samples[s].begin(), samples[s].end(), rows.row(s).begin());
    const autophi::PhiEvaluation ev = autophi::evaluate(rows, idx, pc);
    if (!(ev.eigengap > 1e-6)) continue;
    ++done;
    Vector fd(48);
    for (std::size_t j = 0; j < 48; ++j) {
      auto plus = samples, minus = samples;
      plus[idx][j] += h;
      minus[idx][j] -= h;
      fd[j] = (autophi::auto_phi_rel(plus, pc) - autophi::auto_phi_rel(minus, pc)) / (2.0 * h);
    }
    const double err = norm2(subtract(ev.gradient, fd)) / std::max(norm2(fd), 1e-12);
    const std::string detail = describe("buffer |grad|", done, norm2(ev.gradient), norm2(fd));
    record(r, err, detail);
  }
  r.passed = r.failures == 0;
  return r;
}

SuiteResult end_to_end_gradient(const VerifyConfig& cfg) {
  SuiteResult r = suite("end_to_end", cfg.e2e_tolerance);
  RngStream rng(cfg.seed);

  agent::StackConfig sc;
  sc.layers = cfg.e2e_layers;
  sc.cell.h_dim = 8;
  sc.cell.mu_dim = 4;
  sc.cell.buf_len = 16;
  sc.cell.phi.rank = 3;
  sc.topk = 4;
  env::EnvConfig ec;
  ec.n_envs = 2;
  ec.max_len = cfg.e2e_steps;
  ec.damage_enabled = false;
  // Goal farther than max_len so every env runs the full horizon.
  ec.goal = {3, 3};
  agent::TrainConfig tc;
  tc.phi_bonus_weight = cfg.e2e_bonus_weight;

  agent::AgentParams params = agent::init_agent(rng, sc);
  std::vector<agent::AgentState> initial(ec.n_envs, agent::AgentState::initial(sc));
  for (auto& st : initial)
    for (std::size_t l = 0; l < st.layers.size(); ++l) {
      auto& layer = st.layers[l];
      layer.h = random_vector(rng, sc.cell.h_dim, 0.5);
      layer.mu = random_vector(rng, sc.cell.mu_dim, 0.5);
      for (int k = 0; k < 10; ++k) layer.buffer.push(random_vector(rng, sc.cell.state_dim(), 0.5));
    }
  // Fixed action schedule: the loss is then a smooth function of the weights.
  std::vector<std::vector<env::Action>> schedule(ec.n_envs);
  for (auto& s : schedule)
    for (std::size_t t = 0; t < ec.max_len; ++t) s.push_back(static_cast<env::Action>(rng.uniform_index(2) * 3));

  auto run = [&](const agent::AgentParams& p, agent::AgentParams* g, cell::DetachedTrace* trace) {
    std::vector<agent::AgentState> states = initial;
    env::VecEnv env(ec);
    std::vector<std::size_t> cursor(ec.n_envs, 0);
    const agent::ActionPicker pick = [&](std::size_t e, std::span<const double>) {
      return schedule[e][cursor[e]++];
    };
    agent::Trajectory traj = agent::rollout(p, g, sc, states, env, pick, trace);
    const ad::NodeId loss = agent::loss(traj, tc);
    if (g) traj.tape.backward(loss);
    return traj.tape.scalar(loss);
  };

  agent::AgentParams grads = agent::AgentParams::zeros(sc);
  cell::DetachedTrace trace(cell::DetachedTrace::Mode::record);
  run(params, &grads, &trace);

  const auto pviews = params.views(sc.variant);
  const auto gviews = grads.views(sc.variant);
  std::size_t total = 0;
  for (const auto& v : pviews) total += v.data.size();
  const double h = 1e-5;
  for (std::size_t k = 0; k < cfg.e2e_weights; ++k) {
    std::size_t flat = rng.uniform_index(total);
    std::size_t t = 0;
    while (flat >= pviews[t].data.size()) flat -= pviews[t++].data.size();
    double& weight = pviews[t].data[flat];
    const double orig = weight;
    weight = orig + h;
    trace.start_replay();
    const double fp = run(params, nullptr, &trace);
    weight = orig - h;
    trace.start_replay();
    const double fm = run(params, nullptr, &trace);
    weight = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double analytic = gviews[t].data[flat];
    std::ostringstream name;
    name << pviews[t].name << "[" << flat << "]";
    record(r, relative_error(analytic, fd), describe(name.str().c_str(), k, analytic, fd));
  }
  r.passed = r.failures == 0;
  return r;
}

SuiteResult block_additivity(const VerifyConfig& cfg) {
  SuiteResult r = suite("block_additivity", cfg.additivity_tolerance);
  RngStream rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  for (std::size_t p = 0; p < cfg.additivity_pairs; ++p) {
    const std::size_t d1 = 4 + rng.uniform_index(9), d2 = 4 + rng.uniform_index(9);
    const std::size_t r1 = 1 + rng.uniform_index(d1 - 1), r2 = 1 + rng.uniform_index(d2 - 1);
    const Matrix s1 = separated_covariance(rng, d1, r1);
    const Matrix s2 = separated_covariance(rng, d2, r2);
    autophi::PhiConfig c1, c2, joint;
    c1.rank = r1;
    c2.rank = r2;
    joint.rank = r1 + r2;
    joint.normalization = autophi::Normalization::sum_of_norms;
    joint.blocks = {d1, d2};
    const double parts = autophi::auto_phi_cov(s1, c1) + autophi::auto_phi_cov(s2, c2);
    const double whole = autophi::auto_phi_cov(block_diagonal(s1, s2), joint);
    record(r, std::abs(whole - parts), describe("block pair", p, whole, parts));
  }
  r.passed = r.failures == 0;
  return r;
}

SuiteResult root_sum_square(const VerifyConfig& cfg) {
  SuiteResult r = suite("root_sum_square", cfg.additivity_tolerance);
  RngStream rng(cfg.seed ^ 0x7f4a7c159e3779b9ULL);
  const double eps = autophi::PhiConfig{}.epsilon;
  for (std::size_t p = 0; p < cfg.additivity_pairs; ++p) {
    const std::size_t d1 = 4 + rng.uniform_index(9), d2 = 4 + rng.uniform_index(9);
    const std::size_t r1 = 1 + rng.uniform_index(d1 - 1), r2 = 1 + rng.uniform_index(d2 - 1);
    const Matrix s1 = separated_covariance(rng, d1, r1);
    const Matrix s2 = separated_covariance(rng, d2, r2);
    const auto a = autophi::residual_parts(s1, r1);
    const auto b = autophi::residual_parts(s2, r2);
    autophi::PhiConfig joint;
    joint.rank = r1 + r2;
    const double expected = std::hypot(a.residual, b.residual) / (std::hypot(a.total, b.total) + eps);
    const double whole = autophi::auto_phi_cov(block_diagonal(s1, s2), joint);
    record(r, std::abs(whole - expected), describe("block pair", p, whole, expected));
  }
  r.passed = r.failures == 0;
  return r;
}

SuiteResult ascent_step(const VerifyConfig& cfg) {
  SuiteResult r = suite("ascent_step", cfg.ascent_required_fraction);
  RngStream rng(cfg.seed ^ 0x3c6ef372fe94f82bULL);
  autophi::PhiConfig pc;
  std::size_t increased = 0;
  while (r.cases < cfg.ascent_buffers) {
    std::vector<Vector> samples;
    for (int k = 0; k < 64; ++k) samples.push_back(random_vector(rng, 48));
    const std::size_t idx = rng.uniform_index(samples.size());
    const double bound = autophi::lipschitz_bound(covariance(samples), pc.epsilon);
    const autophi::AscentCheck check = autophi::ascent_step_check(samples, idx, pc, 1.0 / bound);
    if (!(check.gradient_norm > cfg.ascent_min_gradient)) continue;
    ++r.cases;
    if (check.phi_after > check.phi_before) {
      ++increased;
    } else {
      if (r.failures == 0) {
        std::ostringstream s;
        s.precision(10);
        s << "buffer #" << r.cases << ": phi " << check.phi_before << " -> " << check.phi_after
          << " with |grad| " << check.gradient_norm;
        r.counterexample = s.str();
      }
      ++r.failures;
    }
  }
  r.worst = static_cast<double>(increased) / static_cast<double>(r.cases);
  r.passed = r.worst >= cfg.ascent_required_fraction;
  return r;
}

std::vector<SuiteResult> run_all(const VerifyConfig& cfg) {
  return {primitive_gradients(cfg), autophi_gradient(cfg), end_to_end_gradient(cfg),
          block_additivity(cfg),    root_sum_square(cfg), ascent_step(cfg)};
}

std::string format_report(const std::vector<SuiteResult>& results) {
  std::ostringstream out;
  out.precision(4);
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": cases=" << r.cases
        << " failures=" << r.failures << " tolerance=" << r.tolerance << " worst=" << r.worst << '\n';
    if (!r.counterexample.empty()) out << "  first failure: " << r.counterexample << '\n';
  }
  return out.str();
}

}  // namespace riiu::verify
