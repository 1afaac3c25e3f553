#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace prunekit {

namespace {

std::string dims(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + dims(a) + " * " + dims(b) + ")");
  }
  DenseMatrix c(a.rows(), b.cols());
  const std::size_t inner = a.cols();
  const std::size_t n = b.cols();
  // i-t-j loop order keeps the per-entry sum in ascending t.
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    auto ai = a.row(i);
    for (std::size_t t = 0; t < inner; ++t) {
      const double av = ai[t];
      auto bt = b.row(t);
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
    }
  }
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: row counts differ (" + dims(a) + "^T * " + dims(b) + ")");
  }
  DenseMatrix c(a.cols(), b.cols());
  for (std::size_t t = 0; t < a.rows(); ++t) {
    auto at = a.row(t);
    auto bt = b.row(t);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double av = at[i];
      auto ci = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += av * bt[j];
    }
  }
  return c;
}

DenseMatrix gram(const DenseMatrix& x) {
  const std::size_t d = x.cols();
  DenseMatrix g(d, d);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto xt = x.row(t);
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = xt[i];
      auto gi = g.row(i);
      for (std::size_t j = i; j < d; ++j) gi[j] += xi * xt[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  return g;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

DenseVector matvec(const DenseMatrix& a, std::span<const double> v) {
  if (a.cols() != v.size()) {
    throw ShapeError("matvec: " + dims(a) + " * vector of length " + std::to_string(v.size()));
  }
  DenseVector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) s += ai[j] * v[j];
    out[i] = s;
  }
  return out;
}

std::size_t Cholesky::factor(const DenseMatrix& a, double rel_floor) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky: matrix is " + dims(a));
  const std::size_t n = a.rows();
  lower_ = DenseMatrix(n, n);
  diag_.assign(n, 0.0);
  ok_ = false;
  std::vector<double> scaled(n);  // L(j, k) * d(k) for the current row j
  for (std::size_t j = 0; j < n; ++j) {
    auto lj = lower_.row(j);
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) {
      scaled[k] = lj[k] * diag_[k];
      d -= lj[k] * scaled[k];
    }
    if (!(d > 0.0) || !std::isfinite(d) || d <= rel_floor * a(j, j)) return j;
    diag_[j] = d;
    lj[j] = 1.0;
    for (std::size_t i = j + 1; i < n; ++i) {
      auto li = lower_.row(i);
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= li[k] * scaled[k];
      li[j] = s / d;
    }
  }
  ok_ = true;
  return n;
}

void Cholesky::solve_in_place(std::span<double> b) const {
  const std::size_t n = lower_.rows();
  if (b.size() != n) throw ShapeError("cholesky solve: rhs length mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    auto li = lower_.row(i);
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= li[k] * b[k];
    b[i] = s;
  }
  for (std::size_t i = 0; i < n; ++i) b[i] /= diag_[i];
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= lower_(k, ii) * b[k];
    b[ii] = s;
  }
}

void Cholesky::solve_in_place(DenseMatrix& b) const {
  if (b.rows() != lower_.rows()) throw ShapeError("cholesky solve: rhs is " + dims(b));
  std::vector<double> col(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    solve_in_place(std::span<double>(col));
    for (std::size_t i = 0; i < b.rows(); ++i) b(i, j) = col[i];
  }
}

DenseMatrix solve_spd(const DenseMatrix& a, const DenseMatrix& b, double jitter_rel,
                      SpdSolveInfo* info) {
  if (a.rows() != a.cols()) throw ShapeError("solve_spd: matrix is " + dims(a));
  if (b.rows() != a.rows()) throw ShapeError("solve_spd: rhs is " + dims(b) + ", matrix " + dims(a));
  const std::size_t n = a.rows();
  double max_abs = 0.0;
  for (double v : a.data()) max_abs = std::max(max_abs, std::abs(v));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * max_abs) {
        throw InvalidArgumentError("solve_spd: matrix is not symmetric at (" + std::to_string(i) +
                                   "," + std::to_string(j) + ")");
      }
    }
  }

  Cholesky chol;
  double jitter = 0.0;
  std::size_t bad = chol.factor(a);
  if (!chol.ok()) {
    double diag_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag_mean += a(i, i);
    diag_mean /= static_cast<double>(n);
    jitter = jitter_rel * diag_mean;
    if (jitter > 0.0) {
      DenseMatrix shifted = a;
      for (std::size_t i = 0; i < n; ++i) shifted(i, i) += jitter;
      bad = chol.factor(shifted);
    }
    if (!chol.ok()) {
      throw SingularMatrixError(bad, "solve_spd: non-positive pivot at index " +
                                         std::to_string(bad) + " after jitter " +
                                         std::to_string(jitter));
    }
  }
  if (info) info->jitter = jitter;
  DenseMatrix x = b;
  chol.solve_in_place(x);
  return x;
}

double spectral_norm(const DenseMatrix& a, double tol, std::size_t max_iter) {
  if (a.empty()) return 0.0;
  // Iterate on the smaller of A^T A and A A^T; both share the nonzero spectrum.
  const DenseMatrix g = a.cols() <= a.rows() ? gram(a) : gram(transpose(a));
  const std::size_t n = g.rows();
  double trace = 0.0;
  for (std::size_t i = 0; i < n; ++i) trace += g(i, i);
  if (trace == 0.0) return 0.0;

  DenseVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * std::sin(static_cast<double>(i) + 1.0);
  auto normalize = [](DenseVector& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    const double inv = 1.0 / std::sqrt(s);
    for (double& e : x) e *= inv;
    return s;
  };
  normalize(v);
  double lambda = 0.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    DenseVector w = matvec(g, v);
    double rq = 0.0;
    for (std::size_t i = 0; i < n; ++i) rq += v[i] * w[i];
    double wn = 0.0;
    for (double e : w) wn += e * e;
    if (wn == 0.0) break;
    v = std::move(w);
    normalize(v);
    const bool converged = it > 0 && std::abs(rq - lambda) <= tol * std::abs(rq);
    lambda = std::max(lambda, rq);
    if (converged) break;
  }
  return std::sqrt(std::max(lambda, 0.0));
}

double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace prunekit
