#include "core/newton_score.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "core/rng.hpp"

namespace prunekit {

namespace {

void check_problem(const ScoreProblem& p) {
  if (p.x.cols() != p.w.rows()) {
    throw ShapeError("score problem: X has " + std::to_string(p.x.cols()) + " columns but W has " +
                     std::to_string(p.w.rows()) + " rows");
  }
  const double d = static_cast<double>(p.w.rows());
  if (!(p.r >= 0.0 && p.r <= d)) {
    throw InvalidArgumentError("score problem: r must lie in [0, D]");
  }
  if (!(p.lambda >= 0.0)) throw InvalidArgumentError("score problem: lambda must be non-negative");
}

void check_z(std::span<const double> z, const ScoreProblem& p) {
  if (z.size() != p.dim()) {
    throw ShapeError("score vector has length " + std::to_string(z.size()) + ", expected " +
                     std::to_string(p.dim()));
  }
}

double column_norm(const DenseMatrix& w, std::size_t column) {
  double s = 0.0;
  for (std::size_t j = 0; j < w.rows(); ++j) s += w(j, column) * w(j, column);
  return std::sqrt(s);
}

// g = A (z - 1) + lambda (<1, z> - r) 1
DenseVector gradient_from(const DenseMatrix& a, std::span<const double> z, const ScoreProblem& p) {
  const std::size_t d = z.size();
  DenseVector shifted(d);
  double sum = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    shifted[j] = z[j] - 1.0;
    sum += z[j];
  }
  DenseVector g = matvec(a, shifted);
  const double pen = p.lambda * (sum - p.r);
  for (double& v : g) v += pen;
  return g;
}

DenseMatrix hessian_from(const DenseMatrix& a, double lambda) {
  DenseMatrix h = a;
  for (double& v : h.data()) v += lambda;
  return h;
}

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

}  // namespace

NormalizedCalibration normalize_calibration(const DenseMatrix& x_raw) {
  const double r = spectral_norm(x_raw);
  if (!(r > 0.0)) {
    throw DegenerateCalibrationError("calibration activations are all zero (" +
                                     std::to_string(x_raw.rows()) + "x" +
                                     std::to_string(x_raw.cols()) + ")");
  }
  NormalizedCalibration out;
  out.stats.spectral_norm = r;
  out.stats.scale = r + kNormalizeEpsilon;
  out.x = x_raw;
  for (double& v : out.x.data()) v /= out.stats.scale;
  return out;
}

double masked_column_error(const DenseMatrix& x, const DenseMatrix& w, std::span<const double> mask,
                           std::size_t column) {
  if (column >= w.cols()) {
    throw IndexError("column " + std::to_string(column) + " out of range for W with " +
                     std::to_string(w.cols()) + " columns");
  }
  if (x.cols() != w.rows() || mask.size() != w.rows()) {
    throw ShapeError("masked_column_error: X, W and mask disagree on D");
  }
  // X W_i - X (M o W_i) = X ((1 - M) o W_i)
  DenseVector residual_weights(w.rows());
  for (std::size_t j = 0; j < w.rows(); ++j) residual_weights[j] = (1.0 - mask[j]) * w(j, column);
  const DenseVector r = matvec(x, residual_weights);
  double s = 0.0;
  for (double v : r) s += v * v;
  return std::sqrt(s);
}

ErrorBoundReport error_bound(const DenseMatrix& x, const DenseMatrix& w, std::span<const double> mask,
                             std::size_t column, const CalibrationStats& stats) {
  ErrorBoundReport rep;
  rep.error = masked_column_error(x, w, mask, column);
  double pruned_sq = 0.0;
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < w.rows(); ++j) {
    if (mask[j] != 0.0 && mask[j] != 1.0) {
      throw InvalidArgumentError("error_bound: mask entries must be 0 or 1");
    }
    if (mask[j] == 0.0) {
      ++zeros;
      pruned_sq += w(j, column) * w(j, column);
    }
  }
  const double d = static_cast<double>(w.rows());
  const double col = column_norm(w, column);
  const double r = stats.spectral_norm;
  rep.prune_fraction = d > 0 ? static_cast<double>(zeros) / d : 0.0;
  rep.bound = r * std::sqrt(pruned_sq);
  rep.chain_bound = std::sqrt(static_cast<double>(zeros)) * r * col;
  rep.literal_bound = rep.prune_fraction * r * col;
  return rep;
}

ObjectiveParts objective_parts(std::span<const double> z, const ScoreProblem& p) {
  check_problem(p);
  check_z(z, p);
  // X ((1 - z) o W_i) for every column i at once.
  DenseMatrix scaled = p.w;
  for (std::size_t j = 0; j < scaled.rows(); ++j) {
    const double f = 1.0 - z[j];
    for (double& v : scaled.row(j)) v *= f;
  }
  const DenseMatrix residual = matmul(p.x, scaled);
  ObjectiveParts parts;
  double s = 0.0;
  for (double v : residual.data()) s += v * v;
  parts.loss = 0.5 * s;
  double sum = 0.0;
  for (double v : z) sum += v;
  parts.penalty = 0.5 * p.lambda * (sum - p.r) * (sum - p.r);
  return parts;
}

double objective(std::span<const double> z, const ScoreProblem& p) {
  return objective_parts(z, p).total();
}

DenseMatrix weighted_gram(const ScoreProblem& p) {
  check_problem(p);
  DenseMatrix ww = matmul(p.w, transpose(p.w));
  // Symmetrize exactly; the product above is symmetric up to summation order.
  for (std::size_t i = 0; i < ww.rows(); ++i)
    for (std::size_t j = 0; j < i; ++j) ww(i, j) = ww(j, i);
  const DenseMatrix xx = gram(p.x);
  for (std::size_t k = 0; k < ww.size(); ++k) ww.data()[k] *= xx.data()[k];
  return ww;
}

DenseVector gradient(std::span<const double> z, const ScoreProblem& p) {
  check_z(z, p);
  return gradient_from(weighted_gram(p), z, p);
}

DenseMatrix hessian(const ScoreProblem& p) { return hessian_from(weighted_gram(p), p.lambda); }

DenseVector default_initial_point(std::size_t dim, double rho) {
  return DenseVector(dim, 1.0 - rho);
}

namespace {

// 1/2 (z - 1)^T A (z - 1) + lambda/2 (<1, z> - r)^2, the objective in
// quadratic form (O(D^2) per evaluation).
double quadratic_objective(const DenseMatrix& a, std::span<const double> z, const ScoreProblem& p) {
  const std::size_t d = z.size();
  double quad = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += a(i, j) * (z[j] - 1.0);
    quad += (z[i] - 1.0) * s;
    sum += z[i];
  }
  return 0.5 * quad + 0.5 * p.lambda * (sum - p.r) * (sum - p.r);
}

constexpr double kActiveEpsilon = 1e-3;
constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 40;

}  // namespace

ScoreSolution newton_score(const ScoreProblem& p, std::span<const double> z0) {
  check_problem(p);
  check_z(z0, p);
  for (double v : z0) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgumentError("newton_score: z0 must lie in [0, 1]");
  }
  const DenseMatrix a = weighted_gram(p);
  const std::size_t d = p.dim();

  ScoreSolution sol;
  sol.z.assign(z0.begin(), z0.end());
  for (std::size_t t = 0; t < p.newton_iters; ++t) {
    const DenseVector g = gradient_from(a, sol.z, p);
    const DenseMatrix h = hessian_from(a, p.lambda);
    sol.iterations_used = t + 1;

    if (!p.clamp) {
      DenseMatrix rhs(d, 1, std::vector<double>(g));
      const DenseMatrix delta = solve_spd(h, rhs);
      for (std::size_t j = 0; j < d; ++j) sol.z[j] -= delta(j, 0);
      continue;
    }

    // Projected Newton: coordinates held at a bound by the gradient take a
    // gradient step, the rest a Newton step on the reduced Hessian. With no
    // bound active this is the plain step z - H^{-1} g.
    double width = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double moved = sol.z[j] - std::clamp(sol.z[j] - g[j], 0.0, 1.0);
      width += moved * moved;
    }
    const double eps = std::min(kActiveEpsilon, std::sqrt(width));
    std::vector<std::size_t> free;
    std::vector<char> active(d, 0);
    for (std::size_t j = 0; j < d; ++j) {
      active[j] = (sol.z[j] <= eps && g[j] > 0.0) || (sol.z[j] >= 1.0 - eps && g[j] < 0.0);
      if (!active[j]) free.push_back(j);
    }
    DenseVector dir = g;
    if (!free.empty()) {
      DenseMatrix hf(free.size(), free.size());
      DenseMatrix rhs(free.size(), 1);
      for (std::size_t i = 0; i < free.size(); ++i) {
        rhs(i, 0) = g[free[i]];
        for (std::size_t j = 0; j < free.size(); ++j) hf(i, j) = h(free[i], free[j]);
      }
      const DenseMatrix delta = solve_spd(hf, rhs);
      for (std::size_t i = 0; i < free.size(); ++i) dir[free[i]] = delta(i, 0);
    }

    // Armijo backtracking along the projection arc; the full step is taken
    // whenever it decreases the objective enough.
    const double f0 = quadratic_objective(a, sol.z, p);
    DenseVector trial(d);
    double alpha = 1.0;
    bool moved_by_clamp = false;
    for (int k = 0; k <= kMaxHalvings; ++k, alpha *= 0.5) {
      double decrease = 0.0;
      moved_by_clamp = false;
      for (std::size_t j = 0; j < d; ++j) {
        const double raw = sol.z[j] - alpha * dir[j];
        trial[j] = std::clamp(raw, 0.0, 1.0);
        if (trial[j] != raw) moved_by_clamp = true;
        decrease += active[j] ? g[j] * (sol.z[j] - trial[j]) : alpha * g[j] * dir[j];
      }
      if (f0 - quadratic_objective(a, trial, p) >= kArmijo * decrease) break;
    }
    if (quadratic_objective(a, trial, p) <= f0) {
      sol.z = trial;
      sol.clamp_active = moved_by_clamp;
    }
  }
  sol.objective = objective(sol.z, p);
  sol.grad_inf_norm = inf_norm(gradient_from(a, sol.z, p));
  return sol;
}

std::vector<ComplexitySample> score_complexity_probe(std::span<const std::size_t> dims,
                                                     std::size_t iters, std::uint64_t seed,
                                                     std::size_t repeats) {
  if (!std::is_sorted(dims.begin(), dims.end())) {
    throw InvalidArgumentError("score_complexity_probe: dimensions must be ascending");
  }
  std::vector<ComplexitySample> out;
  for (std::size_t dim : dims) {
    SplitMix64 rng(seed + dim);
    ScoreProblem p;
    p.x = DenseMatrix(dim, dim);
    p.w = DenseMatrix(dim, dim);
    for (double& v : p.x.data()) v = rng.next_gaussian();
    for (double& v : p.w.data()) v = rng.next_gaussian(0.0, 0.02);
    p.x = normalize_calibration(p.x).x;
    p.r = 0.8 * static_cast<double>(dim);
    p.newton_iters = iters;
    const DenseVector z0 = default_initial_point(dim, 0.2);

    double best = 0.0;
    for (std::size_t rep = 0; rep < std::max<std::size_t>(repeats, 1); ++rep) {
      const auto start = std::chrono::steady_clock::now();
      const ScoreSolution sol = newton_score(p, z0);
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
      if (sol.z.empty() && dim > 0) throw Error(ErrorCode::kInternal, "empty score vector");
      best = rep == 0 ? elapsed.count() : std::min(best, elapsed.count());
    }
    out.push_back({dim, iters, best});
  }
  return out;
}

}  // namespace prunekit
