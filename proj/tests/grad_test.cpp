#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "riiu/error.hpp"
#include "riiu/grad.hpp"
#include "riiu/verify.hpp"
#include "test_util.hpp"

using namespace riiu;
using namespace riiu::testutil;

TEST_CASE("every primitive matches finite differences") {
  verify::VerifyConfig cfg;
  const verify::SuiteResult r = verify::primitive_gradients(cfg);
  CHECK(r.cases > 100);
  CHECK(r.tolerance == 1e-6);
  CHECK_MESSAGE(r.passed, r.counterexample);
}

TEST_CASE("linear case: d sum(W x) / dW is outer(1, x)") {
  RngStream rng(1);
  const Matrix w = random_matrix(rng, 3, 4);
  const Vector x = random_vector(rng, 4);
  Matrix dw(3, 4);
  ad::Tape tape;
  const ad::NodeId y = tape.matvec(w, &dw, tape.constant(x));
  std::vector<ad::NodeId> parts;
  for (std::size_t i = 0; i < 3; ++i) parts.push_back(tape.slice(y, i, 1));
  const std::vector<double> ones(3, 1.0);
  tape.backward(tape.weighted_sum(parts, ones));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(dw(i, j) == x[j]);
}

TEST_CASE("backward rejects a non-scalar loss") {
  ad::Tape tape;
  const ad::NodeId v = tape.constant(Vector{1.0, 2.0});
  CHECK_THROWS_AS(tape.backward(v), ShapeError);
}

TEST_CASE("unused parameters receive zero gradient") {
  Matrix used{{1.0, 2.0}}, unused{{3.0, 4.0}};
  Matrix d_used(1, 2), d_unused(1, 2);
  ad::Tape tape;
  const ad::NodeId x = tape.constant(Vector{1.0, 1.0});
  const ad::NodeId a = tape.matvec(used, &d_used, x);
  tape.matvec(unused, &d_unused, x);
  tape.backward(a);
  CHECK(d_unused == Matrix(1, 2));
  CHECK(d_used == Matrix{{1.0, 1.0}});
}

TEST_CASE("identical tapes give identical gradients") {
  RngStream rng(2);
  const Matrix w = random_matrix(rng, 5, 5);
  const Vector x = random_vector(rng, 5);
  auto run = [&] {
    Matrix dw(5, 5);
    ad::Tape tape;
    ad::NodeId h = tape.constant(x);
    for (int s = 0; s < 4; ++s) h = tape.gelu(tape.matvec(w, &dw, h));
    tape.backward(tape.log_softmax_at(h, 2));
    return dw;
  };
  CHECK(run() == run());
}

TEST_CASE("log_softmax_at") {
  ad::Tape tape;
  const ad::NodeId l = tape.constant(Vector{0.0, 0.0, 0.0, 0.0});
  CHECK(tape.scalar(tape.log_softmax_at(l, 1)) == doctest::Approx(std::log(0.25)).epsilon(1e-15));
  const ad::NodeId big = tape.constant(Vector{1000.0, 0.0});
  CHECK(std::isfinite(tape.scalar(tape.log_softmax_at(big, 1))));
  CHECK(tape.scalar(tape.log_softmax_at(big, 1)) == doctest::Approx(-1000.0));
}

namespace {
struct OneTensor {
  std::vector<double> p, g;
  std::vector<ad::TensorView> pv() { return {{"p", p, 1, p.size()}}; }
  std::vector<ad::TensorView> gv() { return {{"p", g, 1, g.size()}}; }
};
}  // namespace

TEST_CASE("Adam: zero gradient, unit step, step counter") {
  OneTensor t{{1.0, -2.0, 3.0}, {0.0, 0.0, 0.0}};
  ad::AdamState adam(t.pv());
  CHECK(adam.step() == 0);
  adam.update(t.pv(), t.gv(), 1e-3);
  CHECK(adam.step() == 1);
  CHECK(t.p == std::vector<double>{1.0, -2.0, 3.0});

  OneTensor c{{0.0, 0.0}, {0.7, -3.0}};
  ad::AdamState a2(c.pv());
  const double lr = 5e-4;
  for (int s = 0; s < 1000; ++s) {
    const std::vector<double> before = c.p;
    a2.update(c.pv(), c.gv(), lr);
    CHECK(a2.step() == static_cast<std::size_t>(s + 1));
    if (s == 999) {
      CHECK(std::abs(std::abs(c.p[0] - before[0]) - lr) < 1e-10);
      CHECK(std::abs(std::abs(c.p[1] - before[1]) - lr) < 1e-10);
    }
  }
  CHECK(c.p[0] < 0.0);
  CHECK(c.p[1] > 0.0);
}

TEST_CASE("Adam rejects mismatched shapes") {
  OneTensor t{{1.0, 2.0}, {0.1, 0.1}};
  ad::AdamState adam(t.pv());
  std::vector<double> wrong(3, 0.0);
  std::vector<ad::TensorView> bad{{"p", wrong, 1, 3}};
  CHECK_THROWS(adam.update(t.pv(), bad, 1e-3));
}

TEST_CASE("global norm clipping") {
  OneTensor small{{}, {0.3, 0.4}};
  CHECK(ad::clip_global_norm(small.gv(), 1.0) == doctest::Approx(0.5));
  CHECK(small.g == std::vector<double>{0.3, 0.4});

  std::vector<double> a{2.4, 0.0}, b{3.2};
  std::vector<ad::TensorView> views{{"a", a, 1, 2}, {"b", b, 1, 1}};
  const std::vector<double> a0 = a, b0 = b;
  CHECK(ad::clip_global_norm(views, 1.0) == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(std::abs(ad::global_norm(views) - 1.0) < 1e-12);
  CHECK(a[0] == doctest::Approx(0.25 * a0[0]).epsilon(1e-15));
  CHECK(b[0] == doctest::Approx(0.25 * b0[0]).epsilon(1e-15));
  const double cosine = (a[0] * a0[0] + b[0] * b0[0]) / (1.0 * 4.0);
  CHECK(cosine == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("end-to-end stack gradient matches finite differences") {
  verify::VerifyConfig cfg;
  const verify::SuiteResult r = verify::end_to_end_gradient(cfg);
  CHECK(r.cases == 10);
  CHECK(r.tolerance == 1e-3);
  CHECK_MESSAGE(r.passed, r.counterexample);
}
