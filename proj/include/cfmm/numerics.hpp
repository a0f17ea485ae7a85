#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>

#include "cfmm/errors.hpp"
#include "cfmm/linalg.hpp"

namespace cfmm {

// Counts complex scalar operations. Any scalar multiply with at least one
// complex operand counts as one complex multiply; likewise for adds.
// Counts only grow between resets.
struct FlopCounter {
  std::uint64_t complex_multiplies = 0;
  std::uint64_t complex_adds = 0;

  void reset() {
    complex_multiplies = 0;
    complex_adds = 0;
  }
  std::uint64_t total() const { return complex_multiplies + complex_adds; }
};

inline void count_mul(FlopCounter* fc, std::uint64_t n) {
  if (fc) fc->complex_multiplies += n;
}
inline void count_add(FlopCounter* fc, std::uint64_t n) {
  if (fc) fc->complex_adds += n;
}

// Full Hermitian eigendecomposition. Eigenvalues descending, eigenvector
// columns paired with them, V unitary.
struct HermitianEig {
  rvec eigenvalues;
  cmat eigenvectors;
};

// Cyclic Jacobi rotations on the symmetrized input (A+A^H)/2.
// Converges when the off-diagonal Frobenius norm drops below
// tol_factor * ||A||_F; throws numerical_error (carrying the residual)
// if max_sweeps cyclic passes do not reach that.
inline HermitianEig hermitian_eig(const cmat& a_in, FlopCounter* fc = nullptr,
                                  int max_sweeps = 100, double tol_factor = 1e-14) {
  const std::size_t m = a_in.rows();
  if (m == 0 || a_in.cols() != m) throw std::invalid_argument("hermitian_eig: square m>=1 input required");

  cmat a(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) a(i, j) = 0.5 * (a_in(i, j) + std::conj(a_in(j, i)));

  const double anorm = frobenius_norm(a);
  const double off_target = tol_factor * anorm;
  // Entries below this cannot lift the off-diagonal norm above the target.
  const double skip_tol = off_target / static_cast<double>(m * m + 1);

  cmat v = cmat::identity(m);

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) s += std::norm(a(i, j));
    return std::sqrt(s);
  };

  double off = off_norm();
  int sweep = 0;
  while (off > off_target) {
    if (sweep++ >= max_sweeps) {
      throw numerical_error("hermitian_eig: Jacobi sweeps exhausted, off-diagonal residual " +
                                std::to_string(off),
                            off);
    }
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        const cplx apq = a(p, q);
        const double r = std::abs(apq);
        if (r <= skip_tol) continue;
        const cplx phase = apq / r;  // a(p,q) = r * phase
        const double app = a(p, p).real();
        const double aqq = a(q, q).real();
        const double tau = (aqq - app) / (2.0 * r);
        const double t = (tau >= 0.0) ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                                      : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const cplx sp = s * phase;             // applied on the q side
        // Two-sided rotation G^H A G with G acting on coordinates (p,q):
        // columns first, then rows; V accumulates column operations.
        for (std::size_t j = 0; j < m; ++j) {
          const cplx ajp = a(j, p);
          const cplx ajq = a(j, q);
          a(j, p) = c * ajp - std::conj(sp) * ajq;
          a(j, q) = sp * ajp + c * ajq;
        }
        count_mul(fc, 4 * m);
        count_add(fc, 2 * m);
        for (std::size_t j = 0; j < m; ++j) {
          const cplx apj = a(p, j);
          const cplx aqj = a(q, j);
          a(p, j) = c * apj - sp * aqj;
          a(q, j) = std::conj(sp) * apj + c * aqj;
        }
        count_mul(fc, 4 * m);
        count_add(fc, 2 * m);
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        a(p, p) = cplx(a(p, p).real(), 0.0);
        a(q, q) = cplx(a(q, q).real(), 0.0);
        for (std::size_t j = 0; j < m; ++j) {
          const cplx vjp = v(j, p);
          const cplx vjq = v(j, q);
          v(j, p) = c * vjp - std::conj(sp) * vjq;
          v(j, q) = sp * vjp + c * vjq;
        }
        count_mul(fc, 4 * m);
        count_add(fc, 2 * m);
      }
    }
    off = off_norm();
  }

  HermitianEig out;
  out.eigenvalues.resize(m);
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rvec diag(m);
  for (std::size_t i = 0; i < m; ++i) diag[i] = a(i, i).real();
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });
  out.eigenvectors = cmat(m, m);
  for (std::size_t k = 0; k < m; ++k) {
    const double e = diag[order[k]];
    if (!std::isfinite(e)) throw numerical_error("hermitian_eig: non-finite eigenvalue");
    out.eigenvalues[k] = e;
    for (std::size_t j = 0; j < m; ++j) out.eigenvectors(j, k) = v(j, order[k]);
  }
  return out;
}

// Numerical rank: eigenvalues above rel_tol * max(largest eigenvalue, tiny).
inline int effective_rank(const HermitianEig& eig, double rel_tol = 1e-10) {
  if (rel_tol <= 0.0 || rel_tol >= 1.0) throw std::invalid_argument("effective_rank: rel_tol in (0,1)");
  if (eig.eigenvalues.empty()) return 0;
  const double tiny = std::numeric_limits<double>::min();
  const double thresh = rel_tol * std::max(eig.eigenvalues.front(), tiny);
  int r = 0;
  for (double e : eig.eigenvalues)
    if (e > thresh) ++r;
  return r;
}

// Z = basis * diag(eigenvalues) * basis^H + shift * I, with the basis the
// leading r eigenvector columns. Stored eigenvalues are all positive.
struct LowRankOperator {
  cmat basis;        // m x r
  rvec eigenvalues;  // length r, descending, > 0
  double shift = 0.0;
  std::size_t dim = 0;

  std::size_t rank() const { return eigenvalues.size(); }

  static LowRankOperator from_eig(const HermitianEig& eig, double shift, double rel_tol = 1e-10) {
    if (shift < 0.0) throw std::invalid_argument("LowRankOperator: shift must be nonnegative");
    const std::size_t m = eig.eigenvalues.size();
    const int r = effective_rank(eig, rel_tol);
    LowRankOperator op;
    op.dim = m;
    op.shift = shift;
    op.eigenvalues.assign(eig.eigenvalues.begin(), eig.eigenvalues.begin() + r);
    op.basis = cmat(m, static_cast<std::size_t>(r));
    for (std::size_t j = 0; j < static_cast<std::size_t>(r); ++j)
      for (std::size_t i = 0; i < m; ++i) op.basis(i, j) = eig.eigenvectors(i, j);
    return op;
  }

  // Z v via the factored form: 2rm + r + m multiplies.
  cvec apply(const cvec& v, FlopCounter* fc = nullptr) const {
    if (v.size() != dim) throw std::invalid_argument("LowRankOperator::apply: size mismatch");
    const std::size_t r = rank();
    cvec c = matvec_adjoint(basis, v);
    count_mul(fc, r * dim);
    count_add(fc, r * dim);
    for (std::size_t i = 0; i < r; ++i) c[i] *= eigenvalues[i];
    count_mul(fc, r);
    cvec out = matvec(basis, c);
    count_mul(fc, r * dim);
    count_add(fc, r * dim);
    for (std::size_t i = 0; i < dim; ++i) out[i] += shift * v[i];
    count_mul(fc, dim);
    count_add(fc, dim);
    return out;
  }
};

// Closed-form Z^{-1} b through the eigenbasis:
//   x = basis * diag(1/(eps_i+shift)) * basis^H b + (b - basis basis^H b)/shift.
// Requires shift > 0, or shift = 0 with a full-rank operator.
inline cvec solve_regularized_exact(const LowRankOperator& op, const cvec& b,
                                    FlopCounter* fc = nullptr) {
  if (b.size() != op.dim) throw std::invalid_argument("solve_regularized_exact: size mismatch");
  const std::size_t r = op.rank();
  const double lam = op.shift;
  if (lam == 0.0 && r < op.dim)
    throw numerical_error("solve_regularized_exact: singular system (shift 0, rank-deficient)");

  cvec c = matvec_adjoint(op.basis, b);
  count_mul(fc, r * op.dim);
  count_add(fc, r * op.dim);
  if (lam == 0.0) {
    for (std::size_t i = 0; i < r; ++i) c[i] /= op.eigenvalues[i];
    count_mul(fc, r);
    cvec x = matvec(op.basis, c);
    count_mul(fc, r * op.dim);
    count_add(fc, r * op.dim);
    return x;
  }
  // One basis application covers both terms:
  //   x = b/shift + basis * (c_i/(eps_i+shift) - c_i/shift).
  cvec w(r);
  for (std::size_t i = 0; i < r; ++i)
    w[i] = c[i] / (op.eigenvalues[i] + lam) - c[i] / lam;
  count_mul(fc, 2 * r);
  count_add(fc, r);
  cvec x = matvec(op.basis, w);
  count_mul(fc, r * op.dim);
  count_add(fc, r * op.dim);
  for (std::size_t i = 0; i < op.dim; ++i) x[i] += b[i] / lam;
  count_mul(fc, op.dim);
  count_add(fc, op.dim);
  return x;
}

// Step size for the truncated Neumann series: beta = 2/(kappa_max + kappa_min)
// with kappa_max = eig_max + lambda and kappa_min = eig_min_used + lambda.
// Any spectrum inside [lambda, eig_max + lambda] then satisfies |1 - beta*kappa| < 1.
inline double nse_scaling(double eig_max, double eig_min_used, double lambda) {
  if (!(eig_max >= eig_min_used && eig_min_used >= 0.0))
    throw std::invalid_argument("nse_scaling: need eig_max >= eig_min_used >= 0");
  if (!(lambda > 0.0)) throw std::invalid_argument("nse_scaling: lambda must be > 0");
  return 2.0 / ((eig_max + lambda) + (eig_min_used + lambda));
}

// Truncated Neumann series beta * sum_{s=0..t} (I - beta Z)^s b, evaluated by
// repeated operator application (s_{i+1} = s_i - beta * Z s_i), never by
// matrix powers. Cost is Theta(t * r * m) complex multiplies.
inline cvec nse_solve(const LowRankOperator& op, double beta, int t, const cvec& b,
                      FlopCounter& fc) {
  if (t < 0) throw std::invalid_argument("nse_solve: t must be >= 0");
  const double kappa_max = (op.rank() > 0 ? op.eigenvalues.front() : 0.0) + op.shift;
  if (!(beta > 0.0) || (kappa_max > 0.0 && !(beta < 2.0 / kappa_max)))
    throw std::invalid_argument("nse_solve: beta outside (0, 2/kappa_max)");

  cvec s = b;
  cvec acc = b;
  for (int i = 0; i < t; ++i) {
    cvec zs = op.apply(s, &fc);
    for (std::size_t j = 0; j < s.size(); ++j) {
      s[j] -= beta * zs[j];
      acc[j] += s[j];
    }
    count_mul(&fc, s.size());
    count_add(&fc, 2 * s.size());
  }
  for (cplx& x : acc) x *= beta;
  count_mul(&fc, acc.size());
  return acc;
}

}  // namespace cfmm
