#pragma once

#include <cmath>
#include <vector>

#include "riiu/tensor.hpp"

namespace riiu::testutil {

inline Vector random_vector(RngStream& rng, std::size_t n, double scale = 1.0) {
  Vector v(n);
  for (double& x : v.span()) x = scale * rng.normal();
  return v;
}

inline Matrix random_matrix(RngStream& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Matrix m(r, c);
  for (double& x : m.span()) x = scale * rng.normal();
  return m;
}

inline Matrix random_symmetric(RngStream& rng, std::size_t n) {
  Matrix a = random_matrix(rng, n, n);
  return scale(add(a, a.transposed()), 0.5);
}

inline std::vector<Vector> random_samples(RngStream& rng, std::size_t n, std::size_t d) {
  std::vector<Vector> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_vector(rng, d));
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.span().size(); ++i) m = std::max(m, std::abs(a.span()[i] - b.span()[i]));
  return m;
}

}  // namespace riiu::testutil
