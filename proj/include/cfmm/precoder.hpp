#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <json.hpp>

#include "cfmm/beamselect.hpp"
#include "cfmm/channel.hpp"
#include "cfmm/config.hpp"
#include "cfmm/errors.hpp"
#include "cfmm/linalg.hpp"
#include "cfmm/numerics.hpp"
#include "cfmm/topology.hpp"

namespace cfmm {

// Effective (beam-domain) channels after selection: entry r of at(l, k) is
// the beamspace channel of UE k at AP l on the beam carried by RF chain r.
// Stored for every (l, k) pair; out-of-cluster entries feed interference
// terms. Cluster maps are carried along so downstream code needs no Topology.
struct EffectiveChannels {
  int L = 0, K = 0, N_RF = 0;
  std::vector<cvec> hbar;                     // [l*K + k], each N_RF-dim
  std::vector<std::vector<int>> row_ue;       // per AP: UE on each RF chain row
  std::vector<std::vector<int>> serving_aps;  // per UE (ascending)
  std::vector<std::vector<int>> served_ues;   // per AP (ascending)

  std::size_t idx(int l, int k) const {
    return static_cast<std::size_t>(l) * static_cast<std::size_t>(K) +
           static_cast<std::size_t>(k);
  }
  const cvec& at(int l, int k) const { return hbar[idx(l, k)]; }
};

inline EffectiveChannels effective_channels(const ChannelSet& cs,
                                            const BeamAssignment& assign,
                                            const Topology& topo) {
  EffectiveChannels eff;
  eff.L = cs.L;
  eff.K = cs.K;
  eff.N_RF = assign.N_RF;
  eff.serving_aps = topo.serving_aps;
  eff.served_ues = topo.served_ues;
  eff.hbar.resize(static_cast<std::size_t>(cs.L) * static_cast<std::size_t>(cs.K));
  eff.row_ue.resize(static_cast<std::size_t>(cs.L));
  for (int l = 0; l < cs.L; ++l) {
    const auto& rows = assign.ap_rows[static_cast<std::size_t>(l)];
    auto& ru = eff.row_ue[static_cast<std::size_t>(l)];
    ru.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) ru[r] = rows[r].ue;
    for (int k = 0; k < cs.K; ++k) {
      cvec& h = eff.hbar[eff.idx(l, k)];
      h.resize(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r)
        h[r] = cs.hb(l, k)[static_cast<std::size_t>(rows[r].beam)];
    }
  }
  return eff;
}

struct IterRecord {
  double objective = 0.0;
  double sum_rate = 0.0;
  std::vector<double> lambda;  // per AP
  std::vector<double> power;   // per AP
};

// Joint state of the WSMSE loop. z is stored for every (l, k) pair in a
// flat [l*K + k] layout; entries with l outside UE k's cluster stay
// identically zero, which realizes the serving mask structurally.
struct PrecoderState {
  int L = 0, K = 0, N_RF = 0;
  std::vector<cvec> z;
  std::vector<cplx> mu;       // per UE: aggregate receiver coefficient Σ_l μ_kl
  std::vector<cplx> mu_link;  // per (l,k) link coefficient μ_kl; zero off-cluster
  std::vector<double> alpha;
  std::vector<double> lambda;    // per AP, from the latest z update
  std::vector<double> ap_power;  // per AP, from the latest z update
  std::vector<double> objective_history;
  std::vector<double> sum_rate_history;
  std::vector<IterRecord> trace;
  int iterations = 0;
  FlopCounter flops_prep;    // gram assembly + eigendecomposition
  FlopCounter flops_lambda;  // rhs projections + bisection power evaluations
  FlopCounter flops_apply;   // per-UE regularized-inverse applications

  std::size_t idx(int l, int k) const {
    return static_cast<std::size_t>(l) * static_cast<std::size_t>(K) +
           static_cast<std::size_t>(k);
  }
  const cvec& z_at(int l, int k) const { return z[idx(l, k)]; }
  // Σ_l |μ_kl|², the per-link power of UE k's receive filter. This is the
  // squared-coefficient aggregate the gram weights use.
  double mu_sq_sum(int k, const std::vector<std::vector<int>>& serving) const {
    double s = 0.0;
    for (int l : serving[static_cast<std::size_t>(k)]) s += std::norm(mu_link[idx(l, k)]);
    return s;
  }
  uint64_t total_flops() const {
    return flops_prep.total() + flops_lambda.total() + flops_apply.total();
  }
};

// Solver path for the per-AP regularized inverse.
struct SolveMode {
  bool use_nse = false;
  int order = 0;
  static SolveMode exact() { return {}; }
  static SolveMode nse(int t) { return {true, t}; }
};

// Smallest eigenvalue fed to the NSE step-size rule: `retained` uses the
// smallest retained eigenvalue of the gram plus the shift even when the
// gram is rank-deficient; `tight` uses the true spectrum floor (the shift).
enum class NseKappaMode { retained, tight };

// Matched-filter initialization at full per-AP power: z_kl = c_l h̄_kl with
// one scalar per AP; APs with all-zero effective channels stay silent.
inline PrecoderState init_precoders(const EffectiveChannels& eff,
                                    const SystemConfig& cfg) {
  PrecoderState st;
  st.L = eff.L;
  st.K = eff.K;
  st.N_RF = eff.N_RF;
  st.z.assign(eff.hbar.size(), cvec(static_cast<std::size_t>(eff.N_RF), cplx(0, 0)));
  st.mu.assign(static_cast<std::size_t>(eff.K), cplx(0, 0));
  st.mu_link.assign(eff.hbar.size(), cplx(0, 0));
  st.alpha.assign(static_cast<std::size_t>(eff.K), 1.0);
  st.lambda.assign(static_cast<std::size_t>(eff.L), 0.0);
  st.ap_power.assign(static_cast<std::size_t>(eff.L), 0.0);
  for (int l = 0; l < eff.L; ++l) {
    double e = 0.0;
    for (int k : eff.served_ues[static_cast<std::size_t>(l)])
      e += norm2_sq(eff.at(l, k));
    if (e <= 0.0) continue;
    const double c = std::sqrt(cfg.P_max / e);
    for (int k : eff.served_ues[static_cast<std::size_t>(l)]) {
      cvec& zz = st.z[st.idx(l, k)];
      const cvec& h = eff.at(l, k);
      for (std::size_t r = 0; r < h.size(); ++r) zz[r] = c * h[r];
    }
    st.ap_power[static_cast<std::size_t>(l)] = cfg.P_max;
  }
  return st;
}

// Per-UE receive-side sums over the active links:
//   d      = Σ_{l in M_k} h̄_kl^H z_kl            (coherent own-signal sum)
//   total  = Σ_i Σ_{l in M_i} |h̄_kl^H z_il|²     (per-link power sum)
//   signal = Σ_{l in M_k} |h̄_kl^H z_kl|²
struct LinkSums {
  cplx d{0.0, 0.0};
  double total = 0.0;
  double signal = 0.0;
};

inline LinkSums link_sums(const PrecoderState& st, const EffectiveChannels& eff, int k) {
  LinkSums s;
  for (int i = 0; i < eff.K; ++i) {
    for (int l : eff.serving_aps[static_cast<std::size_t>(i)]) {
      const cplx v = dot(eff.at(l, k), st.z_at(l, i));
      s.total += std::norm(v);
      if (i == k) {
        s.d += v;
        s.signal += std::norm(v);
      }
    }
  }
  return s;
}

inline double per_link_sinr(const PrecoderState& st, const EffectiveChannels& eff,
                            int k, const SystemConfig& cfg) {
  const LinkSums s = link_sums(st, eff, k);
  const double interference = std::max(s.total - s.signal, 0.0);
  return s.signal / (interference + cfg.noise_w);
}

inline double per_link_sum_rate(const PrecoderState& st, const EffectiveChannels& eff,
                                const SystemConfig& cfg) {
  double r = 0.0;
  for (int k = 0; k < eff.K; ++k)
    r += std::log2(1.0 + per_link_sinr(st, eff, k, cfg));
  return r;
}

// Receiver-coefficient update. Each active link gets its own coefficient
// μ_kl = (h̄_kl^H z_kl) / (total_k + δ²), the exact minimizer of the per-link
// MSE expansion; all links of a UE share the denominator. The stored per-UE
// scalar is their aggregate Σ_l μ_kl.
inline void update_mu(PrecoderState& st, const EffectiveChannels& eff,
                      const SystemConfig& cfg) {
  for (int k = 0; k < eff.K; ++k) {
    const LinkSums s = link_sums(st, eff, k);
    const double den = s.total + cfg.noise_w;
    cplx agg(0.0, 0.0);
    for (int l : eff.serving_aps[static_cast<std::size_t>(k)]) {
      const cplx m = dot(eff.at(l, k), st.z_at(l, k)) / den;
      st.mu_link[st.idx(l, k)] = m;
      agg += m;
    }
    st.mu[static_cast<std::size_t>(k)] = agg;
  }
}

// Weight update: alpha = 1 + signal / (interference + noise), the
// reciprocal of the minimized per-link MSE.
inline void update_alpha(PrecoderState& st, const EffectiveChannels& eff,
                         const SystemConfig& cfg) {
  for (int k = 0; k < eff.K; ++k) {
    const LinkSums s = link_sums(st, eff, k);
    const double interference = std::max(s.total - s.signal, 0.0);
    st.alpha[static_cast<std::size_t>(k)] = 1.0 + s.signal / (interference + cfg.noise_w);
  }
}

// Weighted gram of AP l's served effective channels; Hermitian PSD with
// rank at most |K_l|. Each served UE contributes with weight α_k Σ_l'|μ_kl'|²
// (its receive-filter power multiplies its whole quadratic term).
inline cmat local_gram(const PrecoderState& st, const EffectiveChannels& eff, int l) {
  const std::size_t m = static_cast<std::size_t>(eff.N_RF);
  cmat H(m, m);
  for (int k : eff.served_ues[static_cast<std::size_t>(l)]) {
    const double w = st.alpha[static_cast<std::size_t>(k)] *
                     st.mu_sq_sum(k, eff.serving_aps);
    if (w > 0.0) add_scaled_outer(H, w, eff.at(l, k));
  }
  return H;
}

// Transmit power Σ_k ‖(H+λI)⁻¹ rhs_k‖² evaluated in the eigenbasis.
// Returns +inf when λ fails to regularize a (numerically) singular H.
inline double power_given_lambda(const HermitianEig& eig, const std::vector<cvec>& rhs,
                                 double lambda, FlopCounter* fc = nullptr) {
  const std::size_t m = eig.eigenvalues.size();
  double p = 0.0;
  for (const cvec& b : rhs) {
    const cvec c = matvec_adjoint(eig.eigenvectors, b);
    count_mul(fc, m * m);
    for (std::size_t i = 0; i < m; ++i) {
      const double num = std::norm(c[i]);
      const double den = eig.eigenvalues[i] + lambda;
      if (den <= 0.0) {
        if (num > 0.0) return std::numeric_limits<double>::infinity();
        continue;
      }
      p += num / (den * den);
      count_mul(fc, 2);
    }
  }
  return p;
}

// Smallest admissible shift: keeps H+λI invertible even for zero H.
inline double lambda_floor(const HermitianEig& eig) {
  const double e1 = eig.eigenvalues.empty() ? 0.0 : std::max(eig.eigenvalues[0], 0.0);
  return 1e-12 * (e1 + 1.0);
}

// Water-level search for the per-AP power constraint. Returns the floor
// when the constraint is slack there; otherwise bisects on
// [floor, sqrt(Σ‖rhs‖²/P_max)] until |power(λ) − P_max| ≤ tol·P_max.
inline double bisect_lambda(const HermitianEig& eig, const std::vector<cvec>& rhs,
                            double p_max, double tol, FlopCounter* fc = nullptr) {
  if (!(tol > 0.0)) throw std::invalid_argument("bisect_lambda: tol must be > 0");
  const std::size_t m = eig.eigenvalues.size();
  // Aggregate eigenbasis coefficients once; every power evaluation after
  // this is O(m).
  rvec agg(m, 0.0);
  double rhs_sq = 0.0;
  for (const cvec& b : rhs) {
    const cvec c = matvec_adjoint(eig.eigenvectors, b);
    count_mul(fc, m * m);
    for (std::size_t i = 0; i < m; ++i) agg[i] += std::norm(c[i]);
    rhs_sq += norm2_sq(b);
  }
  const auto power = [&](double lambda) {
    double p = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double den = eig.eigenvalues[i] + lambda;
      if (den <= 0.0) {
        if (agg[i] > 0.0) return std::numeric_limits<double>::infinity();
        continue;
      }
      p += agg[i] / (den * den);
      count_mul(fc, 2);
    }
    return p;
  };
  const double floor = lambda_floor(eig);
  if (power(floor) <= p_max) return floor;
  double hi = std::sqrt(rhs_sq / p_max);
  double p_hi = power(hi);
  for (int guard = 0; p_hi > p_max && guard < 8; ++guard) {
    if (std::abs(p_hi - p_max) <= tol * p_max) return hi;
    hi *= 2.0;
    p_hi = power(hi);
  }
  if (p_hi > p_max)
    throw numerical_error("bisect_lambda: analytic upper bound failed to cap power",
                          p_hi - p_max);
  double lo = floor;
  for (int it = 0; it < 500; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double p = power(mid);
    if (std::abs(p - p_max) <= tol * p_max) return mid;
    (p > p_max ? lo : hi) = mid;
  }
  throw numerical_error("bisect_lambda: did not converge", 0.0);
}

struct ApZResult {
  std::vector<cvec> z;  // one per served UE, in served order
  double lambda = 0.0;
  double power = 0.0;
};

constexpr double kBisectTol = 1e-10;

// One AP's precoder subproblem. Deliberately takes only AP-local effective
// channels plus per-UE scalars, so an implementation cannot read another
// AP's CSI: mu_ap holds this AP's own link coefficients (they scale the
// right-hand sides), mu_sq the per-UE aggregates Σ_l|μ_kl|² (they weight the
// gram). Counters split the work into gram+eig (prep), rhs projection +
// bisection (lam) and per-UE inverse applications (apply).
inline ApZResult update_z_ap(const std::vector<cvec>& hb,
                             const std::vector<double>& alpha,
                             const std::vector<cplx>& mu_ap,
                             const std::vector<double>& mu_sq, double p_max,
                             const SolveMode& mode,
                             NseKappaMode kmode = NseKappaMode::retained,
                             FlopCounter* prep = nullptr, FlopCounter* lam = nullptr,
                             FlopCounter* apply = nullptr,
                             double bisect_tol = kBisectTol) {
  ApZResult res;
  if (hb.empty()) return res;
  const std::size_t m = hb[0].size();
  cmat H(m, m);
  for (std::size_t j = 0; j < hb.size(); ++j) {
    const double w = alpha[j] * mu_sq[j];
    if (w > 0.0) {
      add_scaled_outer(H, w, hb[j]);
      count_mul(prep, m * m + m);
    }
  }
  const HermitianEig eig = hermitian_eig(H, prep);

  std::vector<cvec> rhs(hb.size());
  for (std::size_t j = 0; j < hb.size(); ++j) {
    const cplx s = alpha[j] * mu_ap[j];
    rhs[j].resize(m);
    for (std::size_t r = 0; r < m; ++r) rhs[j][r] = s * hb[j][r];
    count_mul(lam, m + 1);
  }
  res.lambda = bisect_lambda(eig, rhs, p_max, bisect_tol, lam);

  const LowRankOperator op = LowRankOperator::from_eig(eig, res.lambda);
  res.z.resize(hb.size());
  FlopCounter scratch;
  FlopCounter& ap = apply ? *apply : scratch;
  for (std::size_t j = 0; j < hb.size(); ++j) {
    if (norm2_sq(rhs[j]) == 0.0) {
      res.z[j].assign(m, cplx(0, 0));
      continue;
    }
    if (mode.use_nse) {
      const std::size_t r = op.rank();
      const double eig_max = op.rank() ? std::max(op.eigenvalues[0], 0.0) : 0.0;
      double eig_min_used = 0.0;
      if (kmode == NseKappaMode::retained) {
        eig_min_used = r ? std::max(op.eigenvalues[r - 1], 0.0) : 0.0;
      } else {
        eig_min_used = (r == m) ? std::max(op.eigenvalues[r - 1], 0.0) : 0.0;
      }
      const double beta = nse_scaling(eig_max, eig_min_used, res.lambda);
      res.z[j] = nse_solve(op, beta, mode.order, rhs[j], ap);
    } else {
      res.z[j] = solve_regularized_exact(op, rhs[j], &ap);
    }
  }
  for (const cvec& zz : res.z) res.power += norm2_sq(zz);
  if (mode.use_nse && res.power > p_max) {
    // The truncated series is only an approximate inverse; rescale so the
    // hard per-AP power constraint is never violated.
    const double s = std::sqrt(p_max / res.power);
    for (cvec& zz : res.z)
      for (cplx& v : zz) v *= s;
    res.power = p_max;
  }
  return res;
}

// Full z block update: independent per-AP subproblems (shared read-only
// mu/alpha), results scattered back into the global state.
inline void update_z(PrecoderState& st, const EffectiveChannels& eff,
                     const SystemConfig& cfg, const SolveMode& mode,
                     NseKappaMode kmode = NseKappaMode::retained) {
  std::vector<double> msq(static_cast<std::size_t>(eff.K));
  for (int k = 0; k < eff.K; ++k)
    msq[static_cast<std::size_t>(k)] = st.mu_sq_sum(k, eff.serving_aps);
  for (int l = 0; l < eff.L; ++l) {
    const auto& served = eff.served_ues[static_cast<std::size_t>(l)];
    std::vector<cvec> hb;
    std::vector<double> alpha;
    std::vector<cplx> mu_ap;
    std::vector<double> mu_sq;
    hb.reserve(served.size());
    for (int k : served) {
      hb.push_back(eff.at(l, k));
      alpha.push_back(st.alpha[static_cast<std::size_t>(k)]);
      mu_ap.push_back(st.mu_link[st.idx(l, k)]);
      mu_sq.push_back(msq[static_cast<std::size_t>(k)]);
    }
    const ApZResult res =
        update_z_ap(hb, alpha, mu_ap, mu_sq, cfg.P_max, mode, kmode, &st.flops_prep,
                    &st.flops_lambda, &st.flops_apply);
    for (std::size_t j = 0; j < served.size(); ++j)
      st.z[st.idx(l, served[j])] = res.z[j];
    st.lambda[static_cast<std::size_t>(l)] = res.lambda;
    st.ap_power[static_cast<std::size_t>(l)] = res.power;
  }
}

// Weighted-MSE objective: Σ_k α_k E_k − ln α_k with the per-link MSE
// expansion E_k = Σ_l |μ_kl|²(total_k + δ²) − 2Re{μ_kl* h̄_kl^H z_kl} + 1.
// At fresh μ and α this collapses to Σ_k (1 − ln α_k) exactly.
inline double wsmse_objective(const PrecoderState& st, const EffectiveChannels& eff,
                              const SystemConfig& cfg) {
  double obj = 0.0;
  for (int k = 0; k < eff.K; ++k) {
    const LinkSums s = link_sums(st, eff, k);
    double e = 1.0;
    for (int l : eff.serving_aps[static_cast<std::size_t>(k)]) {
      const cplx m = st.mu_link[st.idx(l, k)];
      const cplx g = dot(eff.at(l, k), st.z_at(l, k));
      e += std::norm(m) * (s.total + cfg.noise_w) - 2.0 * std::real(std::conj(m) * g);
    }
    const double a = st.alpha[static_cast<std::size_t>(k)];
    obj += a * e - std::log(a);
  }
  return obj;
}

// Block-coordinate WSMSE loop: mu, alpha, then per-AP z until the relative
// sum-rate change drops below conv_tol or the iteration budget is spent.
inline PrecoderState run_wsmse(const EffectiveChannels& eff, const SystemConfig& cfg,
                               const SolveMode& mode,
                               NseKappaMode kmode = NseKappaMode::retained) {
  PrecoderState st = init_precoders(eff, cfg);
  double prev = per_link_sum_rate(st, eff, cfg);
  for (int it = 1; it <= cfg.max_iters; ++it) {
    update_mu(st, eff, cfg);
    update_alpha(st, eff, cfg);
    update_z(st, eff, cfg, mode, kmode);
    const double rate = per_link_sum_rate(st, eff, cfg);
    const double obj = wsmse_objective(st, eff, cfg);
    st.objective_history.push_back(obj);
    st.sum_rate_history.push_back(rate);
    st.trace.push_back({obj, rate, st.lambda, st.ap_power});
    st.iterations = it;
    if (std::abs(rate - prev) < cfg.conv_tol * std::max(prev, 1e-12)) break;
    prev = rate;
  }
  return st;
}

// Zero-forcing baseline: per AP, pseudo-inverse columns of the served
// effective-channel rows, each normalized and given an equal share of the
// power budget. Rank-deficient grams get diagonal loading before inversion.
inline PrecoderState zf_baseline(const EffectiveChannels& eff, const SystemConfig& cfg) {
  PrecoderState st = init_precoders(eff, cfg);
  for (cvec& zz : st.z) std::fill(zz.begin(), zz.end(), cplx(0, 0));
  std::fill(st.ap_power.begin(), st.ap_power.end(), 0.0);
  for (int l = 0; l < eff.L; ++l) {
    const auto& served = eff.served_ues[static_cast<std::size_t>(l)];
    if (served.empty()) continue;
    const std::size_t nk = served.size();
    cmat G(nk, nk);
    for (std::size_t i = 0; i < nk; ++i)
      for (std::size_t j = 0; j < nk; ++j)
        G(i, j) = dot(eff.at(l, served[i]), eff.at(l, served[j]));
    double tr = 0.0;
    for (std::size_t i = 0; i < nk; ++i) tr += G(i, i).real();
    if (tr <= 0.0) continue;  // all served channels are zero at this AP
    HermitianEig eig = hermitian_eig(G);
    if (eig.eigenvalues[nk - 1] <= 1e-12 * eig.eigenvalues[0]) {
      for (std::size_t i = 0; i < nk; ++i) G(i, i) += 1e-10 * tr;
      eig = hermitian_eig(G);
    }
    const double share = std::sqrt(cfg.P_max / static_cast<double>(nk));
    for (std::size_t j = 0; j < nk; ++j) {
      // y = G^{-1} e_j via the eigenbasis, then w = Σ_i h̄_i y[i].
      cvec ej(nk, cplx(0, 0));
      ej[j] = cplx(1, 0);
      cvec c = matvec_adjoint(eig.eigenvectors, ej);
      for (std::size_t i = 0; i < nk; ++i)
        c[i] /= std::max(eig.eigenvalues[i], 1e-300);
      const cvec y = matvec(eig.eigenvectors, c);
      cvec w(static_cast<std::size_t>(eff.N_RF), cplx(0, 0));
      for (std::size_t i = 0; i < nk; ++i) {
        const cvec& h = eff.at(l, served[i]);
        for (std::size_t r = 0; r < w.size(); ++r) w[r] += h[r] * y[i];
      }
      const double nw = norm2(w);
      if (nw <= 0.0) continue;
      cvec& zz = st.z[st.idx(l, served[j])];
      for (std::size_t r = 0; r < w.size(); ++r) zz[r] = w[r] * (share / nw);
      st.ap_power[static_cast<std::size_t>(l)] += share * share;
    }
  }
  return st;
}

// Per-iteration convergence trace for dumps and plots.
inline nlohmann::json trace_json(const PrecoderState& st) {
  nlohmann::json j = nlohmann::json::array();
  for (std::size_t i = 0; i < st.trace.size(); ++i) {
    const IterRecord& r = st.trace[i];
    j.push_back({{"iter", i + 1},
                 {"objective", r.objective},
                 {"sum_rate", r.sum_rate},
                 {"lambda", r.lambda},
                 {"power", r.power}});
  }
  return j;
}

}  // namespace cfmm
