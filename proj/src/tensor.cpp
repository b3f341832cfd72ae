#include "layoutret/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "layoutret/errors.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

void DenseMatrix::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseMatrix::all_finite() const { return layoutret::all_finite(data_); }

real dot(std::span<const real> a, std::span<const real> b) {
  require_dim(a.size(), b.size(), "dot");
  real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

real l2_norm(std::span<const real> v) {
  real acc = 0;
  for (real x : v) acc += x * x;
  return std::sqrt(acc);
}

void axpy(real alpha, std::span<const real> x, std::span<real> y) {
  require_dim(y.size(), x.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

bool is_zero(std::span<const real> v) {
  return std::all_of(v.begin(), v.end(), [](real x) { return x == real(0); });
}

bool all_finite(std::span<const real> v) {
  return std::all_of(v.begin(), v.end(), [](real x) { return std::isfinite(x); });
}

real stable_log_sum_exp(std::span<const real> values) {
  if (values.empty()) throw ShapeError("stable_log_sum_exp: empty input");
  const real m = *std::max_element(values.begin(), values.end());
  real acc = 0;
  for (real v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

void require_dim(std::size_t expected, std::size_t actual, const std::string& what) {
  if (expected != actual) {
    throw ShapeError(what + ": expected dimension " + std::to_string(expected) + ", got " +
                     std::to_string(actual));
  }
}

}  // namespace layoutret::inline LAYOUTRET_ABI
