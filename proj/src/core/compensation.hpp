#pragma once

#include <cstddef>
#include <vector>

#include "core/tensor.hpp"

namespace prunekit {

enum class DampingMode {
  kAuto,    // dampen only when 2 X^T X is numerically rank-deficient
  kAlways,  // always add gamma_rel * mean(diag(2 X^T X)) * I
};

// Row-pruned layer: minimize ||X dW||_F^2 subject to rows `pruned_rows` of
// W + dW being zero.
struct CompensationProblem {
  DenseMatrix x;  // N x D calibration input captured from the dense model
  DenseMatrix w;  // D x D'
  std::vector<std::size_t> pruned_rows;
  double gamma_rel = 0.01;
  DampingMode damping = DampingMode::kAuto;
};

struct CompensationResult {
  DenseMatrix delta_w;
  double optimal_loss = 0.0;   // 1/2 tr(W_p^T S^{-1} W_p), S = [(2X^TX + gI)^{-1}]_pp
  double achieved_loss = 0.0;  // ||X dW||_F^2
  double gamma_used = 0.0;     // absolute dampening added to 2 X^T X
};

// Closed-form
//   dW = -(2X^TX + gI)^{-1} M_p (M_p^T (2X^TX + gI)^{-1} M_p)^{-1} M_p^T W
// with M_p applied as row/column selection.
CompensationResult compensate(const CompensationProblem& p);

double optimal_loss(const CompensationProblem& p);

// ||X_{:,p} W_p||_F^2: the loss of deleting the rows without compensation.
double naive_zeroing_loss(const CompensationProblem& p);

DenseMatrix apply_compensation(const DenseMatrix& w, const CompensationResult& result);

// The smallest relative Cholesky pivot treated as full rank in kAuto mode.
inline constexpr double kRankPivotFloor = 1e-12;

}  // namespace prunekit
