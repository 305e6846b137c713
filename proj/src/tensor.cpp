#include "unifilter/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "unifilter/error.hpp"

namespace unifilter {

Tensor2D::Tensor2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_)
    throw DataError("tensor data length " + std::to_string(data_.size()) + " does not match " + shape_str());
}

void Tensor2D::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor2D::resize(std::size_t rows, std::size_t cols) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, 0.0);
}

bool Tensor2D::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor2D::shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

Tensor2D Tensor2D::transposed() const {
  Tensor2D t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Tensor2D Tensor2D::rows_slice(std::size_t begin, std::size_t end) const {
  Tensor2D t(end - begin, cols_);
  std::copy(data_.begin() + begin * cols_, data_.begin() + end * cols_, t.data_.begin());
  return t;
}

namespace {
void require(bool ok, const char* op, const Tensor2D& a, const Tensor2D& b) {
  if (!ok) throw DataError(std::string(op) + ": dimension mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

void matmul_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  require(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), "matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  // four rows per pass over b; each c element still sums over p in order
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* __restrict c0 = c.data() + i * n;
    double* __restrict c1 = c0 + n;
    double* __restrict c2 = c1 + n;
    double* __restrict c3 = c2 + n;
    const double* a0 = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const double* __restrict bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = bp[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* __restrict ci = c.data() + i * n;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* __restrict bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  Tensor2D c(a.rows(), b.cols());
  matmul_acc(a, b, c);
  return c;
}

void matmul_at_b_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  require(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "matmul_at_b", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    const double* __restrict bi = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* __restrict cp = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

void matmul_a_bt_acc(const Tensor2D& a, const Tensor2D& b, Tensor2D& c) {
  require(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(), "matmul_a_bt", a, b);
  matmul_acc(a, b.transposed(), c);
}

void add_inplace(Tensor2D& a, const Tensor2D& b) {
  require(a.same_shape(b), "add", a, b);
  double* __restrict ap = a.data();
  const double* bp = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) ap[i] += bp[i];
}

void add_row_broadcast(Tensor2D& a, const Tensor2D& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "broadcast", a, row);
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* __restrict ai = a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) ai[j] += row[j];
  }
}

void sum_rows_acc(const Tensor2D& a, Tensor2D& acc) {
  require(acc.rows() == 1 && acc.cols() == a.cols(), "sum_rows", a, acc);
  const std::size_t n = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc[j] += ai[j];
  }
}

}  // namespace unifilter
