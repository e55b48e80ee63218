#include "pmsfl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pmsfl/error.hpp"

namespace pmsfl::linalg {

namespace {

// One-sided Jacobi on the columns of w (m x n, m >= n). On return the
// columns of w are u_i * sigma_i and v accumulates the right rotations.
void jacobi_orthogonalize(Mat& w, Mat& v) {
  const std::size_t n = w.cols;
  const std::size_t m = w.rows;
  constexpr double kTol = 1e-15;
  constexpr int kMaxSweeps = 60;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::abs(apq) <= kTol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = cs * wp - sn * wq;
          w(i, q) = sn * wp + cs * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = cs * vp - sn * vq;
          v(i, q) = sn * vp + cs * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

Mat transpose(const Mat& m) {
  Mat t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

}  // namespace

SvdResult svd(const Mat& m) {
  if (m.rows == 0 || m.cols == 0)
    fail(ErrorCode::kInvalidShape, "svd: empty matrix");
  if (m.rows < m.cols) {
    // Work on the transpose and swap the factors back.
    SvdResult t = svd(transpose(m));
    return SvdResult{std::move(t.sigma), std::move(t.v), std::move(t.u)};
  }

  Mat w = m;
  Mat v(m.cols, m.cols);
  for (std::size_t i = 0; i < m.cols; ++i) v(i, i) = 1.0;
  jacobi_orthogonalize(w, v);

  const std::size_t n = m.cols;
  std::vector<double> sigma(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) s += w(i, j) * w(i, j);
    sigma[j] = std::sqrt(s);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  SvdResult r;
  r.sigma.resize(n);
  r.u = Mat(m.rows, n);
  r.v = Mat(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    r.sigma[k] = sigma[j];
    const double inv = sigma[j] > 0.0 ? 1.0 / sigma[j] : 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) r.u(i, k) = w(i, j) * inv;
    for (std::size_t i = 0; i < n; ++i) r.v(i, k) = v(i, j);
  }
  return r;
}

std::vector<double> singular_values(const Mat& m) { return svd(m).sigma; }

double sigma_max(const Mat& m) { return svd(m).sigma.front(); }

double sigma_min(const Mat& m) { return svd(m).sigma.back(); }

double condition(const Mat& m) {
  const auto s = singular_values(m);
  if (s.back() <= 0.0) return std::numeric_limits<double>::infinity();
  return s.front() / s.back();
}

std::vector<double> solve(const Mat& a, const std::vector<double>& y,
                          double cond_limit) {
  if (a.rows != a.cols) fail(ErrorCode::kInvalidShape, "solve: square only");
  if (y.size() != a.rows) fail(ErrorCode::kInvalidShape, "solve: rhs length");
  const SvdResult s = svd(a);
  const double smin = s.sigma.back();
  if (smin <= 0.0 || s.sigma.front() / smin > cond_limit)
    fail(ErrorCode::kSingular, "solve: matrix singular or ill-conditioned");

  const std::size_t n = a.rows;
  // x = V diag(1/sigma) U^T y
  std::vector<double> uty(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += s.u(i, k) * y[i];
    uty[k] = acc / s.sigma[k];
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += s.v(i, k) * uty[k];
    x[i] = acc;
  }
  return x;
}

std::vector<double> matvec(const Mat& m, const std::vector<double>& x) {
  if (x.size() != m.cols) fail(ErrorCode::kInvalidShape, "matvec: length");
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < m.cols; ++j) acc += m(i, j) * x[j];
    y[i] = acc;
  }
  return y;
}

}  // namespace pmsfl::linalg
