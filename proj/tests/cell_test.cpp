#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <deque>

#include "riiu/agent.hpp"
#include "riiu/cell.hpp"
#include "riiu/checkpoint.hpp"
#include "riiu/error.hpp"
#include "test_util.hpp"

using namespace riiu;
using namespace riiu::cell;
using namespace riiu::testutil;

namespace {

// Second implementation of one RIIU step, written from the update equations
// with plain loops, the Jacobi solver and the projection form of phi.
struct Reference {
  Vector h, mu;
  double phi = 0.0;
  Vector broadcast;
  std::deque<Vector> buffer;
};

Vector affine(const Matrix& w, const std::vector<double>& in) {
  Vector out(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < w.cols(); ++j) s += w(i, j) * in[j];
    out[i] = s;
  }
  return out;
}

std::vector<Vector> window_with(const std::deque<Vector>& buf, std::size_t cap, const Vector& z) {
  std::vector<Vector> rows(buf.begin(), buf.end());
  if (rows.size() == cap) rows.erase(rows.begin());
  rows.push_back(z);
  return rows;
}

struct PhiAndGrad {
  double phi = 0.0;
  Vector grad;
};

PhiAndGrad reference_phi(const std::vector<Vector>& rows, std::size_t r, double eps) {
  const std::size_t n = rows.size(), d = rows[0].dim();
  PhiAndGrad out{0.0, Vector(d)};
  if (n < 2) return out;
  Vector mean(d);
  for (const auto& v : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += v[j] / double(n);
  Matrix s(d, d);
  for (const auto& v : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) s(i, j) += (v[i] - mean[i]) * (v[j] - mean[j]) / double(n);
  const EigenDecomposition e = sym_eig(s, 1e-15);
  Matrix proj(d, d);
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) proj(i, j) += e.vectors(i, k) * e.vectors(j, k);
  const Matrix resid = subtract(s, matmul(proj, s));
  const double a = frobenius_norm(resid), b = frobenius_norm(s);
  out.phi = a / (b + eps);
  if (a == 0.0) return out;
  Vector c(d);
  for (std::size_t j = 0; j < d; ++j) c[j] = rows.back()[j] - mean[j];
  for (std::size_t i = 0; i < d; ++i) {
    double rc = 0.0, sc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      rc += resid(i, j) * c[j];
      sc += s(i, j) * c[j];
    }
    out.grad[i] = 2.0 / double(n) * (rc / (a * (b + eps)) - a * sc / (b * (b + eps) * (b + eps)));
  }
  return out;
}

void reference_step(const RiiuParams& p, const CellConfig& cfg, Reference& st, const Vector& x,
                    const Vector& w) {
  std::vector<double> xv(x.begin(), x.end()), hv(st.h.begin(), st.h.end()), wv(w.begin(), w.end());
  const Vector ax = affine(p.W_x, xv), ah = affine(p.W_h, hv), aw = affine(p.W_b, wv);
  Vector h(cfg.h_dim);
  for (std::size_t i = 0; i < cfg.h_dim; ++i) h[i] = gelu(ax[i] + ah[i] + aw[i]);

  Vector probe = concat({&h, &st.mu});
  const PhiAndGrad pre = reference_phi(window_with(st.buffer, cfg.buf_len, probe), cfg.phi.rank,
                                       cfg.phi.epsilon);
  std::vector<double> gin(h.begin(), h.end());
  gin.insert(gin.end(), st.mu.begin(), st.mu.end());
  gin.insert(gin.end(), pre.grad.begin(), pre.grad.begin() + cfg.h_dim);
  Vector hidden = affine(p.g_w1, gin);
  for (std::size_t i = 0; i < hidden.dim(); ++i) hidden[i] = gelu(hidden[i] + p.g_b1[i]);
  Vector mu = affine(p.g_w2, hidden.values());
  for (std::size_t i = 0; i < mu.dim(); ++i) mu[i] += p.g_b2[i];

  const Vector joint = concat({&h, &mu});
  const PhiAndGrad post = reference_phi(window_with(st.buffer, cfg.buf_len, joint), cfg.phi.rank,
                                        cfg.phi.epsilon);
  st.buffer.push_back(joint);
  if (st.buffer.size() > cfg.buf_len) st.buffer.pop_front();
  std::vector<double> bin(joint.begin(), joint.end());
  bin.push_back(post.phi);
  st.broadcast = affine(p.W_o, bin);
  st.h = h;
  st.mu = mu;
  st.phi = post.phi;
}

double max_diff(const Vector& a, const Vector& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter shapes and counts") {
  CellConfig cfg;
  RiiuParams p = RiiuParams::zeros(cfg);
  CHECK(p.W_x.rows() == 32);
  CHECK(p.W_x.cols() == 18);
  CHECK(p.g_w1.rows() == 32);
  CHECK(p.g_w1.cols() == 80);
  CHECK(p.g_w2.rows() == 16);
  CHECK(p.g_w2.cols() == 32);
  CHECK(p.W_o.rows() == 32);
  CHECK(p.W_o.cols() == 49);
  CHECK(param_count(p) == 7312);
  CellConfig deep = cfg;
  deep.in_dim = 32;
  CHECK(param_count(RiiuParams::zeros(deep)) == 7760);
  CHECK(agent::param_count(agent::StackConfig{}) == 30724);
}

TEST_CASE("zero parameters, zero state") {
  CellConfig cfg;
  const RiiuParams p = RiiuParams::zeros(cfg);
  RngStream rng(1);
  const RiiuState next = riiu_step(p, cfg, RiiuState::initial(cfg), random_vector(rng, 18), Vector(32));
  CHECK(next.h == Vector(32));
  CHECK(next.mu == Vector(16));
  CHECK(next.phi_hat == 0.0);
  CHECK(next.broadcast == Vector(32));
  CHECK(next.buffer.count() == 1);
}

TEST_CASE("dimension mismatches are rejected") {
  CellConfig cfg;
  const RiiuParams p = RiiuParams::zeros(cfg);
  CHECK_THROWS_AS(riiu_step(p, cfg, RiiuState::initial(cfg), Vector(17), Vector(32)), ShapeError);
  CHECK_THROWS_AS(riiu_step(p, cfg, RiiuState::initial(cfg), Vector(18), Vector(31)), ShapeError);
}

TEST_CASE("reduction to the plain GELU recurrence, exact over 100 steps") {
  CellConfig cfg;
  cfg.meta_enabled = false;
  cfg.phi_bonus_enabled = false;
  RngStream rng(2);
  const RiiuParams p = init_params(rng, cfg);
  RiiuState st = RiiuState::initial(cfg);
  Vector h(32);
  for (int t = 0; t < 100; ++t) {
    const Vector x = random_vector(rng, 18), w = random_vector(rng, 32);
    st = riiu_step(p, cfg, st, x, w);
    Vector pre = add(add(matvec(p.W_x, x), matvec(p.W_h, h)), matvec(p.W_b, w));
    for (double& v : pre) v = gelu(v);
    h = pre;
    CHECK(st.h == h);
    CHECK(st.mu == Vector(16));
    CHECK(st.phi_hat >= 0.0);
    CHECK(st.phi_hat <= 1.0);
  }
}

TEST_CASE("trajectory matches a straight-line reference implementation") {
  CellConfig cfg;
  cfg.buf_len = 45;
  RngStream rng(3);
  const RiiuParams p = init_params(rng, cfg);
  RiiuState st = RiiuState::initial(cfg);
  Reference ref;
  st.h = ref.h = random_vector(rng, 32, 0.5);
  st.mu = ref.mu = random_vector(rng, 16, 0.5);
  for (int i = 0; i < 40; ++i) {
    const Vector z = random_vector(rng, 48);
    st.buffer.push(z);
    ref.buffer.push_back(z);
  }
  for (int t = 0; t < 10; ++t) {
    const Vector x = random_vector(rng, 18), w = random_vector(rng, 32);
    st = riiu_step(p, cfg, st, x, w);
    reference_step(p, cfg, ref, x, w);
    CHECK(max_diff(st.h, ref.h) < 1e-12);
    CHECK(max_diff(st.mu, ref.mu) < 1e-12);
    CHECK(std::abs(st.phi_hat - ref.phi) < 1e-12);
    CHECK(max_diff(st.broadcast, ref.broadcast) < 1e-12);
  }
  CHECK(st.buffer.full());
}

TEST_CASE("no-meta ablation freezes mu and keeps the h path") {
  CellConfig cfg;
  RngStream rng(4);
  const RiiuParams p = init_params(rng, cfg);
  RiiuState a = RiiuState::initial(cfg), b = RiiuState::initial(cfg);
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vector(rng, 18), w = random_vector(rng, 32);
    const RiiuState na = riiu_step_no_meta(p, cfg, a, x, w);
    CHECK(na.mu == a.mu);
    // With mu = 0 on both sides the first h' agrees with the full step.
    if (t == 0) CHECK(riiu_step(p, cfg, b, x, w).h == na.h);
    a = na;
  }

  // phi over [h; 0] equals phi over h alone with the same rank.
  Matrix joint = a.buffer.window();
  std::vector<Vector> h_only;
  for (std::size_t i = 0; i < joint.rows(); ++i)
    h_only.emplace_back(std::vector<double>(joint.row(i).begin(), joint.row(i).begin() + 32));
  CHECK(std::abs(autophi::auto_phi_rows(joint, cfg.phi) - autophi::auto_phi_rel(h_only, cfg.phi)) < 1e-12);
}

TEST_CASE("determinism and broadcast width") {
  CellConfig cfg;
  cfg.mu_dim = 5;
  RngStream r1(5), r2(5);
  const RiiuParams p1 = init_params(r1, cfg), p2 = init_params(r2, cfg);
  RiiuState a = RiiuState::initial(cfg), b = RiiuState::initial(cfg);
  RngStream in(6);
  for (int t = 0; t < 10; ++t) {
    const Vector x = random_vector(in, 18), w = random_vector(in, 32);
    a = riiu_step(p1, cfg, a, x, w);
    b = riiu_step(p2, cfg, b, x, w);
    CHECK(a.broadcast == b.broadcast);
    CHECK(a.broadcast.dim() == 32);
  }
}

TEST_CASE("init: determinism, bounds, zero mean") {
  CellConfig cfg;
  RngStream r1(7), r2(7);
  RiiuParams a = init_params(r1, cfg), b = init_params(r2, cfg);
  CHECK(a.W_h == b.W_h);
  CHECK(a.g_w1 == b.g_w1);
  CHECK(a.g_b1 == Vector(32));

  double sum = 0.0;
  std::size_t n = 0;
  RngStream rng(8);
  while (n < 100000) {
    RiiuParams p = init_params(rng, cfg);
    for (Matrix* m : {&p.W_x, &p.W_h, &p.W_b, &p.g_w1, &p.g_w2, &p.W_o}) {
      const double bound = 1.0 / std::sqrt(double(m->cols()));
      for (double v : m->span()) {
        CHECK(std::abs(v) <= bound);
        sum += v / bound;
        ++n;
      }
    }
  }
  const double sigma = 1.0 / std::sqrt(3.0 * double(n));
  CHECK(std::abs(sum / double(n)) < 3.0 * sigma);
}

TEST_CASE("Elman cell") {
  RngStream rng(9);
  CHECK(elman_step(Matrix(4, 3), Matrix(4, 4), random_vector(rng, 4), random_vector(rng, 3)) == Vector(4));
  // Pre-activations of magnitude 15: saturated but still below 1 in double precision.
  const Matrix wx_big{{15, 0, 0}, {0, -15, 0}, {0, 0, 15}, {10, 5, 0}};
  const Vector big = elman_step(wx_big, Matrix(4, 4), Vector(4), Vector{1, 1, -1});
  for (double v : big) {
    CHECK(std::abs(v) > 0.999);
    CHECK(std::abs(v) < 1.0);
  }
  const Matrix wx = random_matrix(rng, 4, 3), wh = random_matrix(rng, 4, 4);
  const Vector h = random_vector(rng, 4), x = random_vector(rng, 3);
  const Vector out = elman_step(wx, wh, h, x);
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 3; ++j) s += wx(i, j) * x[j];
    for (int j = 0; j < 4; ++j) s += wh(i, j) * h[j];
    CHECK(std::abs(out[i] - std::tanh(s)) < 1e-12);
  }
  CHECK_THROWS_AS(elman_step(wx, wh, h, Vector(2)), ShapeError);
}

TEST_CASE("GRU cell: gate limits and direct transcription") {
  RngStream rng(10);
  GruParams p = init_gru_params(rng, 3, 4);
  const Vector h = random_vector(rng, 4), x = random_vector(rng, 3);

  GruParams closed = p;
  closed.b_z = Vector(4, -50.0);
  CHECK(max_diff(gru_step(closed, h, x), h) < 1e-12);

  GruParams open = p;
  open.b_z = Vector(4, 50.0);
  const Vector out_open = gru_step(open, h, x);

  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  Vector expect(4), cand(4);
  std::vector<double> r(4);
  for (int i = 0; i < 4; ++i) {
    double a = p.b_r[i];
    for (int j = 0; j < 3; ++j) a += p.W_r(i, j) * x[j];
    for (int j = 0; j < 4; ++j) a += p.U_r(i, j) * h[j];
    r[i] = sig(a);
  }
  for (int i = 0; i < 4; ++i) {
    double zc = p.b_z[i], cc = p.b_h[i];
    for (int j = 0; j < 3; ++j) {
      zc += p.W_z(i, j) * x[j];
      cc += p.W_h(i, j) * x[j];
    }
    for (int j = 0; j < 4; ++j) {
      zc += p.U_z(i, j) * h[j];
      cc += p.U_h(i, j) * r[j] * h[j];
    }
    cand[i] = std::tanh(cc);
    const double z = sig(zc);
    expect[i] = (1 - z) * h[i] + z * cand[i];
  }
  CHECK(max_diff(gru_step(p, h, x), expect) < 1e-12);
  CHECK(max_diff(out_open, cand) < 1e-12);
  CHECK_THROWS_AS(gru_step(p, h, Vector(2)), ShapeError);
}

TEST_CASE("parameter-matched baselines") {
  const std::size_t target = agent::param_count(agent::StackConfig{});
  const auto sizes = matched_mlp_config(target, 18, 4);
  const double mlp = double(mlp_param_count(sizes));
  CHECK(std::abs(mlp - double(target)) <= 0.05 * double(target));
  const std::size_t hidden = matched_gru_config(target, 18, 4);
  const double gru = double(gru_agent_param_count(18, hidden, 4));
  CHECK(std::abs(gru - double(target)) <= 0.05 * double(target));
  CHECK_THROWS_AS(matched_mlp_config(1, 18, 4), NoMatch);
  CHECK_THROWS_AS(matched_gru_config(1, 18, 4), NoMatch);

  agent::StackConfig g;
  g.variant = agent::Variant::gru;
  agent::StackConfig m;
  m.variant = agent::Variant::mlp;
  CHECK(agent::param_count(g) == 31008);
  CHECK(agent::param_count(m) == 30836);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  CellConfig cfg;
  RngStream rng(11);
  RiiuParams p = init_params(rng, cfg);
  p.g_b1 = random_vector(rng, 32, 1e-7);
  auto views = p.views("layer1.");
  const std::string text = checkpoint_to_string(views);

  RiiuParams q = RiiuParams::zeros(cfg);
  auto qviews = q.views("layer1.");
  checkpoint_from_string(text, qviews);
  CHECK(q.W_x == p.W_x);
  CHECK(q.g_b1 == p.g_b1);
  CHECK(q.W_o == p.W_o);

  const Vector x = random_vector(rng, 18), w = random_vector(rng, 32);
  const RiiuState a = riiu_step(p, cfg, RiiuState::initial(cfg), x, w);
  const RiiuState b = riiu_step(q, cfg, RiiuState::initial(cfg), x, w);
  CHECK(a.broadcast == b.broadcast);
  CHECK(a.mu == b.mu);

  CellConfig other = cfg;
  other.h_dim = 8;
  RiiuParams wrong = RiiuParams::zeros(other);
  auto wviews = wrong.views("layer1.");
  CHECK_THROWS_AS(checkpoint_from_string(text, wviews), std::runtime_error);
  auto renamed = q.views("layer2.");
  CHECK_THROWS_AS(checkpoint_from_string(text, renamed), std::runtime_error);
}
