#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "core/tensor.hpp"

namespace prunekit {

// Penalized relaxation of the channel-mask problem for one layer:
//
//   min_z  1/2 sum_i ||X W_i - X (z o W_i)||^2 + lambda/2 (<1, z> - r)^2
//
// X holds (normalized) calibration activations, W the weight whose input
// channels (rows) are scored, r = (1 - rho) D the kept-channel target.
struct ScoreProblem {
  DenseMatrix x;
  DenseMatrix w;
  double r = 0.0;
  double lambda = 100.0;
  std::size_t newton_iters = 50;
  bool clamp = true;

  std::size_t dim() const noexcept { return w.rows(); }
};

struct ScoreSolution {
  DenseVector z;
  double objective = 0.0;
  double grad_inf_norm = 0.0;
  std::size_t iterations_used = 0;
  // True if the final projection moved at least one coordinate onto a bound.
  bool clamp_active = false;
};

struct CalibrationStats {
  double spectral_norm = 0.0;  // R, norm of the raw activations
  double scale = 1.0;          // divisor applied to the raw activations
};

struct NormalizedCalibration {
  DenseMatrix x;
  CalibrationStats stats;
};

inline constexpr double kNormalizeEpsilon = 1e-12;

// X / (R + eps) with R the spectral norm of X_raw.
NormalizedCalibration normalize_calibration(const DenseMatrix& x_raw);

// ||X W_{*,i} - X (M o W_{*,i})||_2 for a (binary) mask M over the rows of W.
double masked_column_error(const DenseMatrix& x, const DenseMatrix& w, std::span<const double> mask,
                           std::size_t column);

struct ErrorBoundReport {
  double error = 0.0;
  double bound = 0.0;           // R * ||(1 - M) o W_{*,i}||
  double chain_bound = 0.0;     // sqrt(rho D) * R * ||W_{*,i}||
  double literal_bound = 0.0;   // rho * R * ||W_{*,i}||, reported only
  double prune_fraction = 0.0;  // rho: fraction of zeros in M
};

ErrorBoundReport error_bound(const DenseMatrix& x, const DenseMatrix& w, std::span<const double> mask,
                             std::size_t column, const CalibrationStats& stats);

struct ObjectiveParts {
  double loss = 0.0;     // sum_i L(z)_i
  double penalty = 0.0;  // L_reg(z)
  double total() const noexcept { return loss + penalty; }
};

ObjectiveParts objective_parts(std::span<const double> z, const ScoreProblem& p);
double objective(std::span<const double> z, const ScoreProblem& p);

// (W W^T) o (X^T X), the data part of the Hessian.
DenseMatrix weighted_gram(const ScoreProblem& p);

DenseVector gradient(std::span<const double> z, const ScoreProblem& p);
DenseMatrix hessian(const ScoreProblem& p);

// (1 - rho) * 1_D.
DenseVector default_initial_point(std::size_t dim, double rho);

// Newton iterations z <- z - H^{-1} g, H refactored on every step. With
// p.clamp each iterate is projected onto [0, 1]^D: coordinates pinned at a
// bound by the gradient step by -g, the others by the reduced-Hessian Newton
// direction, with Armijo backtracking along the projection arc. When no bound
// is active the step is the plain Newton step.
ScoreSolution newton_score(const ScoreProblem& p, std::span<const double> z0);

struct ComplexitySample {
  std::size_t dim = 0;
  std::size_t iters = 0;
  double seconds = 0.0;
};

// Times newton_score on seeded random square instances (N = D' = D). Each
// entry is the minimum over `repeats` runs.
std::vector<ComplexitySample> score_complexity_probe(std::span<const std::size_t> dims,
                                                     std::size_t iters, std::uint64_t seed,
                                                     std::size_t repeats = 3);

}  // namespace prunekit
