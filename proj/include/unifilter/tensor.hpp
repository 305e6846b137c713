#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace unifilter {

// Dense row-major matrix of doubles.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const std::vector<double>& vec() const noexcept { return data_; }

  void fill(double v);
  void zero() { fill(0.0); }
  void resize(std::size_t rows, std::size_t cols);
  bool all_finite() const noexcept;
  bool same_shape(const Tensor2D& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

  Tensor2D transposed() const;
  Tensor2D rows_slice(std::size_t begin, std::size_t end) const;

  bool operator==(const Tensor2D&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// All kernels accumulate each output element over the inner dimension in a
// fixed ascending order that does not depend on how many rows are processed
// together, so stacking sequences never changes per-row results.

// c += a * b
void matmul_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c);
Tensor2D matmul(const Tensor2D& a, const Tensor2D& b);
// c += a^T * b
void matmul_at_b_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c);
// c += a * b^T
void matmul_a_bt_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c);

void add_inplace(Tensor2D& a, const Tensor2D& b);
// Adds the 1 x cols row vector to every row.
void add_row_broadcast(Tensor2D& a, const Tensor2D& row);
// acc (1 x cols) += column sums of a.
void sum_rows_acc(const Tensor2D& a, Tensor2D& acc);

}  // namespace unifilter
