#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cfmm {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;
using rvec = std::vector<double>;

// Dense row-major complex matrix. Sizes in this library are small
// (a few dozen rows at most), so no blocking or views are needed.
class cmat {
 public:
  cmat() = default;
  cmat(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, cplx{0.0, 0.0}) {}

  static cmat identity(std::size_t n) {
    cmat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  cplx& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const cplx& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  const std::vector<cplx>& data() const { return data_; }
  std::vector<cplx>& data() { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<cplx> data_;
};

inline cplx dot(const cvec& a, const cvec& b) {
  // <a, b> with the conjugate on the first argument.
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  cplx s{0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

inline double norm2_sq(const cvec& a) {
  double s = 0.0;
  for (const cplx& x : a) s += std::norm(x);
  return s;
}

inline double norm2(const cvec& a) { return std::sqrt(norm2_sq(a)); }

inline cvec matvec(const cmat& m, const cvec& v) {
  if (v.size() != m.cols()) throw std::invalid_argument("matvec: size mismatch");
  cvec out(m.rows(), cplx{0.0, 0.0});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    cplx s{0.0, 0.0};
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
    out[i] = s;
  }
  return out;
}

// m^H v without materializing the adjoint.
inline cvec matvec_adjoint(const cmat& m, const cvec& v) {
  if (v.size() != m.rows()) throw std::invalid_argument("matvec_adjoint: size mismatch");
  cvec out(m.cols(), cplx{0.0, 0.0});
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const cplx vi = v[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += std::conj(m(i, j)) * vi;
  }
  return out;
}

inline double frobenius_norm(const cmat& m) {
  double s = 0.0;
  for (const cplx& x : m.data()) s += std::norm(x);
  return std::sqrt(s);
}

// A += w * v v^H (rank-1 Hermitian update, w real).
inline void add_scaled_outer(cmat& a, double w, const cvec& v) {
  const std::size_t n = v.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) += w * v[i] * std::conj(v[j]);
}

}  // namespace cfmm
