#include "oracles/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace prunekit::oracle {

std::vector<double> finite_diff_gradient(const ScalarField& f, const std::vector<double>& z,
                                         const FiniteDiffOptions& opts) {
  std::vector<double> g(z.size());
  std::vector<double> probe = z;
  for (std::size_t j = 0; j < z.size(); ++j) {
    probe[j] = z[j] + opts.step;
    const double fp = f(probe);
    probe[j] = z[j] - opts.step;
    const double fm = f(probe);
    probe[j] = z[j];
    g[j] = (fp - fm) / (2.0 * opts.step);
  }
  return g;
}

DenseMatrix finite_diff_jacobian(const VectorField& g, const std::vector<double>& z,
                                 const FiniteDiffOptions& opts) {
  const std::size_t n = z.size();
  std::vector<double> probe = z;
  DenseMatrix jac;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = z[j] + opts.step;
    const std::vector<double> gp = g(probe);
    probe[j] = z[j] - opts.step;
    const std::vector<double> gm = g(probe);
    probe[j] = z[j];
    if (j == 0) jac = DenseMatrix(gp.size(), n);
    for (std::size_t i = 0; i < gp.size(); ++i) jac(i, j) = (gp[i] - gm[i]) / (2.0 * opts.step);
  }
  return jac;
}

double score_objective(const ScoreProblem& p, const std::vector<double>& z) {
  const std::size_t n = p.x.rows(), d = p.w.rows(), dp = p.w.cols();
  double loss = 0.0;
  for (std::size_t i = 0; i < dp; ++i) {
    // L(z)_i = 1/2 ||X W_i - X (z o W_i)||^2, both products formed explicitly.
    double col = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      double full = 0.0, masked = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        full += p.x(t, j) * p.w(j, i);
        masked += p.x(t, j) * (z[j] * p.w(j, i));
      }
      col += (full - masked) * (full - masked);
    }
    loss += 0.5 * col;
  }
  double sum = 0.0;
  for (double v : z) sum += v;
  return loss + 0.5 * p.lambda * (sum - p.r) * (sum - p.r);
}

std::vector<double> score_gradient(const ScoreProblem& p, const std::vector<double>& z) {
  const std::size_t n = p.x.rows(), d = p.w.rows(), dp = p.w.cols();
  std::vector<double> g(d, 0.0);
  std::vector<double> residual(n);
  for (std::size_t i = 0; i < dp; ++i) {
    for (std::size_t t = 0; t < n; ++t) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += p.x(t, j) * (1.0 - z[j]) * p.w(j, i);
      residual[t] = s;
    }
    // d/dz_j of 1/2 ||X((1-z) o W_i)||^2 = -W_ji (X^T r_i)_j
    for (std::size_t j = 0; j < d; ++j) {
      double xr = 0.0;
      for (std::size_t t = 0; t < n; ++t) xr += p.x(t, j) * residual[t];
      g[j] -= p.w(j, i) * xr;
    }
  }
  double sum = 0.0;
  for (double v : z) sum += v;
  for (double& v : g) v += p.lambda * (sum - p.r);
  return g;
}

DenseMatrix score_hessian(const ScoreProblem& p) {
  const std::size_t n = p.x.rows(), d = p.w.rows(), dp = p.w.cols();
  DenseMatrix h(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double ww = 0.0, xx = 0.0;
      for (std::size_t i = 0; i < dp; ++i) ww += p.w(a, i) * p.w(b, i);
      for (std::size_t t = 0; t < n; ++t) xx += p.x(t, a) * p.x(t, b);
      h(a, b) = ww * xx + p.lambda;
    }
  }
  return h;
}

PgdResult pgd_mask_solver(const ScoreProblem& p, const std::vector<double>& z0, std::size_t steps,
                          double step_size) {
  if (!(step_size > 0.0)) throw std::invalid_argument("pgd: step size must be positive");
  // The objective is quadratic: with A = H - lambda 11^T,
  //   f(z) = 1/2 (z - 1)^T A (z - 1) + lambda/2 (<1, z> - r)^2
  //   g(z) = A (z - 1) + lambda (<1, z> - r) 1
  // so each step costs O(D^2) once H is formed.
  const std::size_t d = z0.size();
  const DenseMatrix h = score_hessian(p);
  auto eval = [&](const std::vector<double>& z, std::vector<double>* grad) {
    double sum = 0.0;
    for (double v : z) sum += v;
    const double pen = p.lambda * (sum - p.r);
    double quad = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      double az = 0.0;
      for (std::size_t b = 0; b < d; ++b) az += (h(a, b) - p.lambda) * (z[b] - 1.0);
      quad += (z[a] - 1.0) * az;
      if (grad) (*grad)[a] = az + pen;
    }
    return 0.5 * quad + 0.5 * p.lambda * (sum - p.r) * (sum - p.r);
  };
  PgdResult res;
  std::vector<double> z = z0, g(d);
  double prev = eval(z, &g);
  res.z = z;
  res.objective = prev;
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t j = 0; j < d; ++j) z[j] = std::clamp(z[j] - step_size * g[j], 0.0, 1.0);
    const double obj = eval(z, &g);
    if (obj > prev * (1.0 + 1e-12) + 1e-15) res.diverged = true;
    prev = obj;
    if (obj < res.objective) {
      res.objective = obj;
      res.z = z;
    }
  }
  // Report objectives by direct summation, not through the quadratic form.
  res.objective = score_objective(p, res.z);
  res.final_objective = score_objective(p, z);
  return res;
}

double default_pgd_step(const ScoreProblem& p) { return 0.1 / oracle::spectral_norm(oracle::score_hessian(p)); }

std::vector<double> gaussian_solve(DenseMatrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (a(piv, c) == 0.0) throw std::runtime_error("gaussian_solve: singular matrix");
    if (piv != c) {
      for (std::size_t k = 0; k < n; ++k) std::swap(a(c, k), a(piv, k));
      std::swap(b[c], b[piv]);
    }
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a(r, c) / a(c, c);
      if (f == 0.0) continue;
      for (std::size_t k = c; k < n; ++k) a(r, k) -= f * a(c, k);
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(n);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t k = r + 1; k < n; ++k) s -= a(r, k) * x[k];
    x[r] = s / a(r, r);
  }
  return x;
}

DenseMatrix kkt_compensation_solver(const CompensationProblem& p, double gamma_abs) {
  const std::size_t n = p.x.rows(), d = p.w.rows(), dp = p.w.cols(), k = p.pruned_rows.size();
  DenseMatrix dw(d, dp);
  if (k == 0) return dw;
  DenseMatrix kkt(d + k, d + k);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = 0; b < d; ++b) {
      double s = 0.0;
      for (std::size_t t = 0; t < n; ++t) s += p.x(t, a) * p.x(t, b);
      kkt(a, b) = 2.0 * s + (a == b ? gamma_abs : 0.0);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    kkt(p.pruned_rows[i], d + i) = 1.0;
    kkt(d + i, p.pruned_rows[i]) = 1.0;
  }
  for (std::size_t col = 0; col < dp; ++col) {
    std::vector<double> rhs(d + k, 0.0);
    for (std::size_t i = 0; i < k; ++i) rhs[d + i] = -p.w(p.pruned_rows[i], col);
    const std::vector<double> sol = gaussian_solve(kkt, rhs);
    for (std::size_t a = 0; a < d; ++a) dw(a, col) = sol[a];
  }
  return dw;
}

DenseMatrix random_feasible_perturbation(const CompensationProblem& p, std::uint64_t seed) {
  const std::size_t d = p.w.rows(), dp = p.w.cols();
  double fro = 0.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < dp; ++b) fro += p.w(a, b) * p.w(a, b);
  const double sd = 0.1 * std::sqrt(fro) / std::sqrt(static_cast<double>(d * dp));
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, sd);
  DenseMatrix dw(d, dp);
  std::vector<bool> pruned(d, false);
  for (std::size_t r : p.pruned_rows) pruned[r] = true;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < dp; ++b) dw(a, b) = pruned[a] ? -p.w(a, b) : normal(gen);
  return dw;
}

double reconstruction_loss(const DenseMatrix& x, const DenseMatrix& dw) {
  double s = 0.0;
  for (std::size_t t = 0; t < x.rows(); ++t) {
    for (std::size_t b = 0; b < dw.cols(); ++b) {
      double v = 0.0;
      for (std::size_t a = 0; a < x.cols(); ++a) v += x(t, a) * dw(a, b);
      s += v * v;
    }
  }
  return s;
}

std::vector<double> symmetric_eigenvalues(DenseMatrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-30) break;
    for (std::size_t pidx = 0; pidx < n; ++pidx) {
      for (std::size_t q = pidx + 1; q < n; ++q) {
        if (a(pidx, q) == 0.0) continue;
        const double theta = (a(q, q) - a(pidx, pidx)) / (2.0 * a(pidx, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, pidx), akq = a(k, q);
          a(k, pidx) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(pidx, k), aqk = a(q, k);
          a(pidx, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

std::vector<double> symmetric_eigenvalues_3x3(const DenseMatrix& a) {
  const double p1 = a(0, 1) * a(0, 1) + a(0, 2) * a(0, 2) + a(1, 2) * a(1, 2);
  const double q = (a(0, 0) + a(1, 1) + a(2, 2)) / 3.0;
  std::vector<double> ev(3);
  if (p1 == 0.0) {
    ev = {a(0, 0), a(1, 1), a(2, 2)};
  } else {
    const double p2 = (a(0, 0) - q) * (a(0, 0) - q) + (a(1, 1) - q) * (a(1, 1) - q) +
                      (a(2, 2) - q) * (a(2, 2) - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    DenseMatrix b(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) b(i, j) = (a(i, j) - (i == j ? q : 0.0)) / p;
    const double det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1)) -
                       b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0)) +
                       b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
    const double r = std::clamp(det / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    ev[0] = q + 2.0 * p * std::cos(phi);
    ev[2] = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    ev[1] = 3.0 * q - ev[0] - ev[2];
  }
  std::sort(ev.begin(), ev.end());
  return ev;
}

DenseMatrix product(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

double spectral_norm(const DenseMatrix& a) {
  DenseMatrix ata(a.cols(), a.cols());
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < a.rows(); ++t) s += a(t, i) * a(t, j);
      ata(i, j) = s;
    }
  const std::vector<double> ev = symmetric_eigenvalues(ata);
  return ev.empty() ? 0.0 : std::sqrt(std::max(ev.back(), 0.0));
}

namespace {

// (score, layer, kind, index) comparison written out by hand.
bool earlier(const PooledItem& a, const PooledItem& b) {
  if (a.score != b.score) return a.score < b.score;
  if (a.layer != b.layer) return a.layer < b.layer;
  if (a.kind != b.kind) return a.kind == ItemKind::kAttentionHead;
  return a.index < b.index;
}

}  // namespace

MaskOracleResult brute_force_mask(const ScoreBundle& scores, double rho) {
  const double alpha = 4.0 * static_cast<double>(scores.head_dim) / 3.0;
  std::vector<PooledItem> items;
  MaskOracleResult res;
  for (std::size_t l = 0; l < scores.layers.size(); ++l) {
    const auto& attn = scores.layers[l].attn;
    const std::size_t heads = attn.size() / scores.head_dim;
    for (std::size_t h = 0; h < heads; ++h) {
      double s = 0.0;
      for (std::size_t c = 0; c < scores.head_dim; ++c) s += attn[h * scores.head_dim + c];
      items.push_back({alpha * (s / static_cast<double>(scores.head_dim)), l, ItemKind::kAttentionHead, h});
    }
    for (std::size_t c = 0; c < scores.layers[l].mlp.size(); ++c)
      items.push_back({scores.layers[l].mlp[c], l, ItemKind::kMlpChannel, c});
    res.head_keep.emplace_back(heads, 1);
    res.mlp_keep.emplace_back(scores.layers[l].mlp.size(), 1);
  }
  res.prune_count = static_cast<std::size_t>(rho * static_cast<double>(items.size()));
  // Repeated minimum selection.
  std::vector<bool> taken(items.size(), false);
  for (std::size_t k = 0; k < res.prune_count; ++k) {
    std::size_t best = items.size();
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (taken[i]) continue;
      if (best == items.size() || earlier(items[i], items[best])) best = i;
    }
    taken[best] = true;
    const PooledItem& it = items[best];
    res.pruned.push_back(it);
    if (it.kind == ItemKind::kAttentionHead) {
      res.head_keep[it.layer][it.index] = 0;
    } else {
      res.mlp_keep[it.layer][it.index] = 0;
    }
  }
  return res;
}

}  // namespace prunekit::oracle
