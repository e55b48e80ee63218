#include <doctest.h>

#include <cmath>

#include "pmsfl/error.hpp"
#include "pmsfl/linalg.hpp"
#include "pmsfl/rng.hpp"

using namespace pmsfl;
using linalg::Mat;

namespace {

Mat random_mat(std::size_t n, Rng& rng) {
  Mat m(n, n);
  for (double& v : m.a) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("svd of a diagonal matrix returns sorted absolute entries") {
  Mat m(3, 3);
  m(0, 0) = -2.0;
  m(1, 1) = 0.5;
  m(2, 2) = 4.0;
  const auto s = linalg::singular_values(m);
  CHECK(s[0] == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(s[1] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(s[2] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("svd reconstructs random matrices") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + trial % 5;
    Mat m = random_mat(n, rng);
    const auto r = linalg::svd(m);
    // A == U diag(sigma) V^T entry-wise
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k)
          acc += r.u(i, k) * r.sigma[k] * r.v(j, k);
        CHECK(acc == doctest::Approx(m(i, j)).epsilon(1e-10));
      }
    }
    // Columns of U orthonormal.
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += r.u(i, a) * r.u(i, b);
        CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("solve inverts well-conditioned systems") {
  Mat m(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = 4.0;
  const auto x = linalg::solve(m, {2.0, 4.0});
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("solve rejects singular systems") {
  Mat m(2, 2);
  m(0, 0) = 1.0;  // second row all zero
  CHECK_THROWS_AS(linalg::solve(m, {1.0, 1.0}), Error);
  CHECK(std::isinf(linalg::condition(m)));
}

TEST_CASE("solve round-trips against matvec") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Mat m = random_mat(4, rng);
    if (linalg::condition(m) > 1e6) continue;
    std::vector<double> x_true(4);
    for (double& v : x_true) v = rng.normal();
    const auto y = linalg::matvec(m, x_true);
    const auto x = linalg::solve(m, y);
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(x[i] == doctest::Approx(x_true[i]).epsilon(1e-9));
  }
}

TEST_CASE("sigma_min of a rank-deficient masked matrix is zero") {
  Mat m(2, 2);
  m(0, 0) = 1.0;
  m(0, 1) = 2.0;
  CHECK(linalg::sigma_min(m) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(linalg::sigma_max(m) == doctest::Approx(std::sqrt(5.0)).epsilon(1e-12));
}
