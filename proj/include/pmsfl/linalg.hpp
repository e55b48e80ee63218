#pragma once

#include <cstddef>
#include <vector>

namespace pmsfl::linalg {

// Dense row-major matrix, sized for the small systems this library works
// with (masked weight blocks, d <= 16 or so). Not a general BLAS.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;  // row-major, rows*cols

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return a[i * cols + j];
  }
};

struct SvdResult {
  std::vector<double> sigma;  // descending, size min(m,n)
  Mat u;                      // m x k, column-orthonormal (k = min(m,n))
  Mat v;                      // n x k
};

// One-sided Jacobi SVD. Accurate enough at these sizes for the 1e-10
// tolerances the enumeration bound is tested at.
SvdResult svd(const Mat& m);

// Singular values only, descending.
std::vector<double> singular_values(const Mat& m);

double sigma_max(const Mat& m);
double sigma_min(const Mat& m);

// Condition number sigma_max/sigma_min; +inf when singular.
double condition(const Mat& m);

// Solves A x = y for square A via SVD, rejecting systems whose condition
// number exceeds cond_limit (throws Error{kSingular}).
std::vector<double> solve(const Mat& a, const std::vector<double>& y,
                          double cond_limit = 1e12);

std::vector<double> matvec(const Mat& m, const std::vector<double>& x);

}  // namespace pmsfl::linalg
