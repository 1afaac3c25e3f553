#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace prunekit {

using DenseVector = std::vector<double>;

// Row-major matrix of 64-bit floats. The storage invariant
// data().size() == rows() * cols() holds for every constructed value.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C = A * B, accumulated in ascending inner index.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

// C = A^T * B without materializing A^T.
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);

// X^T X, computed on the upper triangle and mirrored so the result is exactly
// symmetric.
DenseMatrix gram(const DenseMatrix& x);

DenseMatrix transpose(const DenseMatrix& a);

DenseVector matvec(const DenseMatrix& a, std::span<const double> v);

// Square-root-free Cholesky factorization A = L D L^T with unit lower L.
// Without square roots, diagonal systems with power-of-two entries solve
// exactly.
class Cholesky {
 public:
  // Returns the index of the first pivot d_j that is not strictly positive,
  // or a.rows() when the factorization succeeded. A pivot at or below
  // rel_floor * a(j, j) also counts as a failure.
  std::size_t factor(const DenseMatrix& a, double rel_floor = 0.0);

  bool ok() const noexcept { return ok_; }
  std::size_t dim() const noexcept { return lower_.rows(); }

  // Solves (L D L^T) X = B in place, column by column.
  void solve_in_place(DenseMatrix& b) const;
  void solve_in_place(std::span<double> b) const;

 private:
  DenseMatrix lower_;
  std::vector<double> diag_;
  bool ok_ = false;
};

struct SpdSolveInfo {
  double jitter = 0.0;  // absolute diagonal shift that was applied (0 if none)
};

// Solves A X = B for symmetric positive (semi)definite A. Tries a plain
// Cholesky factorization first; on a non-positive pivot retries once with
// A + jitter_rel * mean(diag(A)) * I.
DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b, double jitter_rel = 1e-10,
                      SpdSolveInfo* info = nullptr);

// Largest singular value by power iteration on A^T A. Returns 0 for a zero
// matrix.
double spectral_norm(const DenseMatrix& a, double tol = 1e-12, std::size_t max_iter = 10000);

double frobenius_norm(const DenseMatrix& a);

bool all_finite(std::span<const double> values);

}  // namespace prunekit
