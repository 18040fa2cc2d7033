#include "riiu/cell.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

#include "riiu/error.hpp"

namespace riiu::cell {

namespace {

void fill_uniform(RngStream& rng, Matrix& m) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
  for (double& v : m.span()) v = rng.uniform(-bound, bound);
}

ad::TensorView view(const std::string& name, Matrix& m) {
  return {name, m.span(), m.rows(), m.cols()};
}

ad::TensorView view(const std::string& name, Vector& v) {
  return {name, v.span(), v.dim(), 1};
}

std::size_t count(const Matrix& m) { return m.size(); }
std::size_t count(const Vector& v) { return v.dim(); }

template <class Fn>
std::size_t nearest_within_tolerance(std::size_t target, std::size_t max_width, Fn&& count_of) {
  if (target == 0) throw NoMatch("parameter matching: target must be positive");
  std::size_t best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t w = 1; w <= max_width; ++w) {
    const double c = static_cast<double>(count_of(w));
    const double err = std::abs(c - static_cast<double>(target));
    if (err < best_err) {
      best_err = err;
      best = w;
    }
    if (c > 2.0 * static_cast<double>(target)) break;
  }
  if (best == 0 || best_err > 0.05 * static_cast<double>(target))
    throw NoMatch("parameter matching: no width within 5% of " + std::to_string(target));
  return best;
}

}  // namespace

void CellConfig::validate() const {
  if (in_dim == 0 || h_dim == 0 || mu_dim == 0)
    throw std::invalid_argument("CellConfig: dimensions must be positive");
  if (buf_len < 2) throw std::invalid_argument("CellConfig: buf_len must be >= 2");
  phi.validate(state_dim());
}

// Params ----------------------------------------------------------------------

RiiuParams RiiuParams::zeros(const CellConfig& cfg) {
  RiiuParams p;
  p.W_x = Matrix(cfg.h_dim, cfg.in_dim);
  p.W_h = Matrix(cfg.h_dim, cfg.h_dim);
  p.W_b = Matrix(cfg.h_dim, cfg.h_dim);
  p.g_w1 = Matrix(cfg.g_hidden_dim(), cfg.g_in_dim());
  p.g_b1 = Vector(cfg.g_hidden_dim());
  p.g_w2 = Matrix(cfg.mu_dim, cfg.g_hidden_dim());
  p.g_b2 = Vector(cfg.mu_dim);
  p.W_o = Matrix(cfg.h_dim, cfg.state_dim() + 1);
  return p;
}

std::vector<ad::TensorView> RiiuParams::views(const std::string& prefix) {
  return {view(prefix + "W_x", W_x),   view(prefix + "W_h", W_h),   view(prefix + "W_b", W_b),
          view(prefix + "g_w1", g_w1), view(prefix + "g_b1", g_b1), view(prefix + "g_w2", g_w2),
          view(prefix + "g_b2", g_b2), view(prefix + "W_o", W_o)};
}

std::size_t param_count(const RiiuParams& p) {
  return count(p.W_x) + count(p.W_h) + count(p.W_b) + count(p.g_w1) + count(p.g_b1) +
         count(p.g_w2) + count(p.g_b2) + count(p.W_o);
}

RiiuParams init_params(RngStream& rng, const CellConfig& cfg) {
  cfg.validate();
  RiiuParams p = RiiuParams::zeros(cfg);
  for (Matrix* m : {&p.W_x, &p.W_h, &p.W_b, &p.g_w1, &p.g_w2, &p.W_o}) fill_uniform(rng, *m);
  return p;
}

RiiuState RiiuState::initial(const CellConfig& cfg) {
  RiiuState s;
  s.h = Vector(cfg.h_dim);
  s.mu = Vector(cfg.mu_dim);
  s.broadcast = Vector(cfg.h_dim);
  s.buffer = autophi::SlidingBuffer(cfg.buf_len, cfg.state_dim());
  return s;
}

// Trace ----------------------------------------------------------------------

void DetachedTrace::start_replay() {
  mode_ = Mode::replay;
  cursor_ = 0;
}

Vector DetachedTrace::take(Vector live) {
  switch (mode_) {
    case Mode::live:
      return live;
    case Mode::record:
      values_.push_back(live);
      return live;
    case Mode::replay:
      if (cursor_ >= values_.size()) throw std::logic_error("DetachedTrace: replay overrun");
      if (values_[cursor_].dim() != live.dim())
        throw std::logic_error("DetachedTrace: replay shape mismatch");
      return values_[cursor_++];
  }
  return live;
}

// RIIU step --------------------------------------------------------------------

CellNodes constant_nodes(ad::Tape& tape, const RiiuState& state) {
  return {tape.constant(state.h), tape.constant(state.mu), tape.scalar_constant(state.phi_hat),
          tape.constant(state.broadcast)};
}

CellNodes riiu_step(ad::Tape& tape, const RiiuParams& params, RiiuParams* grad,
                    const CellConfig& cfg, const CellNodes& prev, autophi::SlidingBuffer& buffer,
                    ad::NodeId x, ad::NodeId w, DetachedTrace* trace, StepDiagnostics* diag) {
  if (tape.value(x).size() != cfg.in_dim) throw ShapeError("riiu_step: x has wrong dim");
  if (tape.value(w).size() != cfg.h_dim) throw ShapeError("riiu_step: w has wrong dim");
  if (tape.value(prev.h).size() != cfg.h_dim || tape.value(prev.mu).size() != cfg.mu_dim)
    throw ShapeError("riiu_step: state has wrong dim");
  if (buffer.dim() != cfg.state_dim()) throw ShapeError("riiu_step: buffer has wrong dim");

  // Integrate
  const ad::NodeId drive =
      tape.add(tape.add(tape.matvec(params.W_x, grad ? &grad->W_x : nullptr, x),
                        tape.matvec(params.W_h, grad ? &grad->W_h : nullptr, prev.h)),
               tape.matvec(params.W_b, grad ? &grad->W_b : nullptr, w));
  const ad::NodeId h = tape.gelu(drive);

  // Reflect
  ad::NodeId mu = prev.mu;
  if (cfg.meta_enabled) {
    std::vector<double> probe(tape.value(h).begin(), tape.value(h).end());
    probe.insert(probe.end(), tape.value(prev.mu).begin(), tape.value(prev.mu).end());
    const Matrix window = buffer.window_with(probe);
    const autophi::PhiEvaluation ev = autophi::evaluate(window, window.rows() - 1, cfg.phi);
    if (diag && ev.degenerate) ++diag->degenerate_spectra;
    Vector grad_h(std::vector<double>(ev.gradient.begin(),
                                      ev.gradient.begin() + static_cast<std::ptrdiff_t>(cfg.h_dim)));
    if (trace) grad_h = trace->take(std::move(grad_h));

    const ad::NodeId g_in = tape.concat({h, prev.mu, tape.constant(grad_h)});
    const ad::NodeId hidden = tape.gelu(
        tape.add_bias(tape.matvec(params.g_w1, grad ? &grad->g_w1 : nullptr, g_in), params.g_b1,
                      grad ? &grad->g_b1 : nullptr));
    mu = tape.add_bias(tape.matvec(params.g_w2, grad ? &grad->g_w2 : nullptr, hidden),
                       params.g_b2, grad ? &grad->g_b2 : nullptr);
  }

  // Measure: phi over the window including the live joint state.
  const ad::NodeId joint = tape.concat({h, mu});
  const std::vector<double> joint_value(tape.value(joint).begin(), tape.value(joint).end());
  const Matrix window = buffer.window_with(joint_value);
  autophi::PhiEvaluation ev = autophi::evaluate(window, window.rows() - 1, cfg.phi);
  if (diag && ev.degenerate) ++diag->degenerate_spectra;
  const ad::NodeId phi = tape.linearized_scalar(joint, ev.value, std::move(ev.gradient));

  Vector stored(joint_value);
  if (trace) stored = trace->take(std::move(stored));
  buffer.push(stored);

  // Broadcast
  const ad::NodeId broadcast =
      tape.matvec(params.W_o, grad ? &grad->W_o : nullptr, tape.concat({h, mu, phi}));
  return {h, mu, phi, broadcast};
}

RiiuState riiu_step(const RiiuParams& params, const CellConfig& cfg, const RiiuState& state,
                    const Vector& x, const Vector& w) {
  ad::Tape tape;
  RiiuState next;
  next.buffer = state.buffer;
  const CellNodes prev = constant_nodes(tape, state);
  const CellNodes out =
      riiu_step(tape, params, nullptr, cfg, prev, next.buffer, tape.constant(x), tape.constant(w));
  next.h = tape.value_vector(out.h);
  next.mu = tape.value_vector(out.mu);
  next.phi_hat = tape.scalar(out.phi);
  next.broadcast = tape.value_vector(out.broadcast);
  return next;
}

RiiuState riiu_step_no_meta(const RiiuParams& params, const CellConfig& cfg,
                            const RiiuState& state, const Vector& x, const Vector& w) {
  CellConfig frozen = cfg;
  frozen.meta_enabled = false;
  return riiu_step(params, frozen, state, x, w);
}

// Baselines --------------------------------------------------------------------

Vector elman_step(const Matrix& W_x, const Matrix& W_h, const Vector& h, const Vector& x) {
  Vector out = add(matvec(W_x, x), matvec(W_h, h));
  for (double& v : out) v = std::tanh(v);
  return out;
}

GruParams GruParams::zeros(std::size_t in_dim, std::size_t hidden) {
  GruParams p;
  for (Matrix* m : {&p.W_z, &p.W_r, &p.W_h}) *m = Matrix(hidden, in_dim);
  for (Matrix* m : {&p.U_z, &p.U_r, &p.U_h}) *m = Matrix(hidden, hidden);
  for (Vector* b : {&p.b_z, &p.b_r, &p.b_h}) *b = Vector(hidden);
  return p;
}

std::vector<ad::TensorView> GruParams::views(const std::string& prefix) {
  return {view(prefix + "W_z", W_z), view(prefix + "U_z", U_z), view(prefix + "b_z", b_z),
          view(prefix + "W_r", W_r), view(prefix + "U_r", U_r), view(prefix + "b_r", b_r),
          view(prefix + "W_h", W_h), view(prefix + "U_h", U_h), view(prefix + "b_h", b_h)};
}

GruParams init_gru_params(RngStream& rng, std::size_t in_dim, std::size_t hidden) {
  GruParams p = GruParams::zeros(in_dim, hidden);
  for (Matrix* m : {&p.W_z, &p.U_z, &p.W_r, &p.U_r, &p.W_h, &p.U_h}) fill_uniform(rng, *m);
  return p;
}

std::size_t param_count(const GruParams& p) {
  return count(p.W_z) + count(p.U_z) + count(p.b_z) + count(p.W_r) + count(p.U_r) +
         count(p.b_r) + count(p.W_h) + count(p.U_h) + count(p.b_h);
}

Vector gru_step(const GruParams& p, const Vector& h, const Vector& x) {
  ad::Tape tape;
  const ad::NodeId out = gru_step(tape, p, nullptr, tape.constant(h), tape.constant(x));
  return tape.value_vector(out);
}

ad::NodeId gru_step(ad::Tape& tape, const GruParams& p, GruParams* grad, ad::NodeId h,
                    ad::NodeId x) {
  auto affine = [&](const Matrix& W, Matrix* dW, const Matrix& U, Matrix* dU, ad::NodeId hin,
                    const Vector& b, Vector* db) {
    return tape.add_bias(tape.add(tape.matvec(W, dW, x), tape.matvec(U, dU, hin)), b, db);
  };
  const ad::NodeId z = tape.sigmoid(affine(p.W_z, grad ? &grad->W_z : nullptr, p.U_z,
                                           grad ? &grad->U_z : nullptr, h, p.b_z,
                                           grad ? &grad->b_z : nullptr));
  const ad::NodeId r = tape.sigmoid(affine(p.W_r, grad ? &grad->W_r : nullptr, p.U_r,
                                           grad ? &grad->U_r : nullptr, h, p.b_r,
                                           grad ? &grad->b_r : nullptr));
  const ad::NodeId candidate = tape.tanh(affine(p.W_h, grad ? &grad->W_h : nullptr, p.U_h,
                                                grad ? &grad->U_h : nullptr, tape.mul(r, h),
                                                p.b_h, grad ? &grad->b_h : nullptr));
  return tape.add(tape.mul(tape.one_minus(z), h), tape.mul(z, candidate));
}

std::vector<ad::TensorView> MlpParams::views(const std::string& prefix) {
  std::vector<ad::TensorView> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.push_back(view(prefix + "W" + std::to_string(l), weights[l]));
    out.push_back(view(prefix + "b" + std::to_string(l), biases[l]));
  }
  return out;
}

MlpParams init_mlp_params(RngStream& rng, const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("init_mlp_params: need in and out sizes");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    p.weights.emplace_back(sizes[l + 1], sizes[l]);
    fill_uniform(rng, p.weights.back());
    p.biases.emplace_back(sizes[l + 1]);
  }
  return p;
}

std::size_t param_count(const MlpParams& p) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < p.weights.size(); ++l) n += count(p.weights[l]) + count(p.biases[l]);
  return n;
}

ad::NodeId mlp_forward(ad::Tape& tape, const MlpParams& p, MlpParams* grad, ad::NodeId x) {
  ad::NodeId a = x;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    a = tape.add_bias(tape.matvec(p.weights[l], grad ? &grad->weights[l] : nullptr, a),
                      p.biases[l], grad ? &grad->biases[l] : nullptr);
    if (l + 1 < p.weights.size()) a = tape.gelu(a);
  }
  return a;
}

std::size_t mlp_param_count(const std::vector<std::size_t>& sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) n += sizes[l] * sizes[l + 1] + sizes[l + 1];
  return n;
}

std::size_t gru_agent_param_count(std::size_t in_dim, std::size_t hidden, std::size_t out_dim) {
  return 3 * (in_dim * hidden + hidden * hidden + hidden) + out_dim * hidden + out_dim;
}

std::vector<std::size_t> matched_mlp_config(std::size_t target_count, std::size_t in_dim,
                                            std::size_t out_dim) {
  const std::size_t width = nearest_within_tolerance(target_count, 1 << 16, [&](std::size_t w) {
    return mlp_param_count({in_dim, w, w, out_dim});
  });
  return {in_dim, width, width, out_dim};
}

std::size_t matched_gru_config(std::size_t target_count, std::size_t in_dim,
                               std::size_t out_dim) {
  return nearest_within_tolerance(target_count, 1 << 16, [&](std::size_t w) {
    return gru_agent_param_count(in_dim, w, out_dim);
  });
}

}  // namespace riiu::cell
