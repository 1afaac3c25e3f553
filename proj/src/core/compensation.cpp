#include "core/compensation.hpp"

#include <algorithm>
#include <string>

namespace prunekit {

namespace {

void validate(const CompensationProblem& p) {
  if (p.x.cols() != p.w.rows()) {
    throw ShapeError("compensation: X has " + std::to_string(p.x.cols()) + " columns but W has " +
                     std::to_string(p.w.rows()) + " rows");
  }
  if (!(p.gamma_rel >= 0.0)) throw InvalidArgumentError("compensation: gamma_rel must be >= 0");
  std::vector<std::size_t> sorted = p.pruned_rows;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] >= p.w.rows()) {
      throw IndexError("compensation: pruned row " + std::to_string(sorted[i]) +
                       " out of range for D = " + std::to_string(p.w.rows()));
    }
    if (i > 0 && sorted[i] == sorted[i - 1]) {
      throw SingularMatrixError(i, "compensation: duplicate pruned row " + std::to_string(sorted[i]) +
                                       " makes the constraint system singular");
    }
  }
}

double mean_diag(const DenseMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
  return a.rows() ? s / static_cast<double>(a.rows()) : 0.0;
}

struct Multipliers {
  DenseMatrix y;       // (2X^TX + gI)^{-1} M_p, D x k
  DenseMatrix lambda;  // S^{-1} W_p, k x D'
  double gamma = 0.0;
};

Multipliers solve_multipliers(const CompensationProblem& p) {
  const std::size_t d = p.w.rows();
  const std::size_t k = p.pruned_rows.size();
  DenseMatrix g = gram(p.x);
  for (double& v : g.data()) v *= 2.0;

  Multipliers m;
  Cholesky chol;
  const double gamma = p.gamma_rel * mean_diag(g);
  bool ok = false;
  if (p.damping == DampingMode::kAuto) {
    chol.factor(g, kRankPivotFloor);
    ok = chol.ok();
  }
  if (!ok) {
    DenseMatrix damped = g;
    for (std::size_t i = 0; i < d; ++i) damped(i, i) += gamma;
    const std::size_t bad = chol.factor(damped);
    if (!chol.ok()) {
      throw SingularMatrixError(bad, "compensation: 2X^TX + gamma I is singular at pivot " +
                                         std::to_string(bad) + " (gamma " + std::to_string(gamma) +
                                         ")");
    }
    m.gamma = gamma;
  }

  m.y = DenseMatrix(d, k);
  for (std::size_t i = 0; i < k; ++i) m.y(p.pruned_rows[i], i) = 1.0;
  chol.solve_in_place(m.y);

  DenseMatrix s(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) s(i, j) = m.y(p.pruned_rows[i], j);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) s(i, j) = s(j, i) = 0.5 * (s(i, j) + s(j, i));

  m.lambda = DenseMatrix(k, p.w.cols());
  for (std::size_t i = 0; i < k; ++i) {
    auto src = p.w.row(p.pruned_rows[i]);
    std::copy(src.begin(), src.end(), m.lambda.row(i).begin());
  }
  Cholesky inner;
  const std::size_t bad = inner.factor(s);
  if (!inner.ok()) {
    throw SingularMatrixError(bad, "compensation: constraint system singular at pruned row " +
                                       std::to_string(p.pruned_rows[bad]));
  }
  inner.solve_in_place(m.lambda);
  return m;
}

double loss_from(const CompensationProblem& p, const Multipliers& m) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.pruned_rows.size(); ++i) {
    auto wp = p.w.row(p.pruned_rows[i]);
    auto li = m.lambda.row(i);
    for (std::size_t j = 0; j < wp.size(); ++j) s += wp[j] * li[j];
  }
  return 0.5 * s;
}

}  // namespace

CompensationResult compensate(const CompensationProblem& p) {
  validate(p);
  CompensationResult res;
  res.delta_w = DenseMatrix(p.w.rows(), p.w.cols());
  if (p.pruned_rows.empty()) return res;

  const Multipliers m = solve_multipliers(p);
  res.gamma_used = m.gamma;
  res.delta_w = matmul(m.y, m.lambda);
  for (double& v : res.delta_w.data()) v = -v;
  for (std::size_t r : p.pruned_rows) {
    auto src = p.w.row(r);
    auto dst = res.delta_w.row(r);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = -src[j];
  }
  res.optimal_loss = loss_from(p, m);
  const DenseMatrix residual = matmul(p.x, res.delta_w);
  double s = 0.0;
  for (double v : residual.data()) s += v * v;
  res.achieved_loss = s;
  return res;
}

double optimal_loss(const CompensationProblem& p) {
  validate(p);
  if (p.pruned_rows.empty()) return 0.0;
  return loss_from(p, solve_multipliers(p));
}

double naive_zeroing_loss(const CompensationProblem& p) {
  validate(p);
  double s = 0.0;
  DenseVector out(p.w.cols());
  for (std::size_t n = 0; n < p.x.rows(); ++n) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t r : p.pruned_rows) {
      const double xv = p.x(n, r);
      auto wr = p.w.row(r);
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += xv * wr[j];
    }
    for (double v : out) s += v * v;
  }
  return s;
}

DenseMatrix apply_compensation(const DenseMatrix& w, const CompensationResult& result) {
  if (w.rows() != result.delta_w.rows() || w.cols() != result.delta_w.cols()) {
    throw ShapeError("apply_compensation: weight and update shapes differ");
  }
  DenseMatrix out = w;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += result.delta_w.data()[i];
  return out;
}

}  // namespace prunekit
