#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "layoutret/config.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

using Vector = std::vector<real>;

/// Row-major dense matrix. Biases and other vector-shaped parameters are
/// stored as 1 x n matrices so that every learnable tensor has one type.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, real fill = real(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<real> data() { return data_; }
  std::span<const real> data() const { return data_; }
  std::span<real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const real> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(real v);
  DenseMatrix zeros_like() const { return DenseMatrix(rows_, cols_); }
  bool all_finite() const;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<real> data_;
};

real dot(std::span<const real> a, std::span<const real> b);
real l2_norm(std::span<const real> v);
/// y += alpha * x
void axpy(real alpha, std::span<const real> x, std::span<real> y);
bool is_zero(std::span<const real> v);
bool all_finite(std::span<const real> v);

/// log(sum(exp(v))) with max subtraction. Throws ShapeError on empty input.
real stable_log_sum_exp(std::span<const real> values);

/// Throws ShapeError("<what>: expected N, got M") when sizes differ.
void require_dim(std::size_t expected, std::size_t actual, const std::string& what);

}  // namespace layoutret::inline LAYOUTRET_ABI
