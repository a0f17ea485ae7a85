#pragma once

// Link-quality metrics evaluated on any precoder state: SINR, achievable
// rate, sum rate, and the per-UE mean-square error of the scalar receive
// filter. All functions are pure read-only evaluations.

#include <cmath>
#include <complex>
#include <vector>

#include "cfmm/precoder.hpp"

namespace cfmm {

// Signal and interference powers are summed per link by default, matching
// the objective the precoder descends. Coherent mode instead sums each
// transmitter's links in amplitude before squaring; it models phase-aligned
// reception and is provided for reporting. The two coincide when every
// cluster holds a single AP.
enum class SinrMode { per_link, coherent };

inline double sinr(int k, const PrecoderState& st, const EffectiveChannels& eff,
                   const SystemConfig& cfg, SinrMode mode = SinrMode::per_link) {
  if (mode == SinrMode::per_link) {
    const LinkSums s = link_sums(st, eff, k);
    const double interf = std::max(s.total - s.signal, 0.0);
    return s.signal / (interf + cfg.noise_w);
  }
  double sig = 0.0;
  double interf = 0.0;
  for (int i = 0; i < eff.K; ++i) {
    cplx v(0.0, 0.0);
    for (int l : eff.serving_aps[static_cast<std::size_t>(i)])
      v += dot(eff.at(l, k), st.z_at(l, i));
    if (i == k)
      sig = std::norm(v);
    else
      interf += std::norm(v);
  }
  return sig / (interf + cfg.noise_w);
}

inline double rate(int k, const PrecoderState& st, const EffectiveChannels& eff,
                   const SystemConfig& cfg, SinrMode mode = SinrMode::per_link) {
  return std::log2(1.0 + sinr(k, st, eff, cfg, mode));
}

inline double sum_rate(const PrecoderState& st, const EffectiveChannels& eff,
                       const SystemConfig& cfg, SinrMode mode = SinrMode::per_link) {
  double s = 0.0;
  for (int k = 0; k < eff.K; ++k) s += rate(k, st, eff, cfg, mode);
  return s;
}

// Mean-square error of UE k's scalar receive filter for a unit-variance
// symbol, expanded over the stored link coefficients. With coefficients
// fresh from update_mu this equals the minimized ratio
// (interference + noise) / (total + noise), hence 1/alpha after
// update_alpha, and lies in (0, 1].
inline double mse(int k, const PrecoderState& st, const EffectiveChannels& eff,
                  const SystemConfig& cfg) {
  const LinkSums s = link_sums(st, eff, k);
  const double den = s.total + cfg.noise_w;
  double e = 1.0;
  for (int l : eff.serving_aps[static_cast<std::size_t>(k)]) {
    const cplx m = st.mu_link[st.idx(l, k)];
    const cplx g = dot(eff.at(l, k), st.z_at(l, k));
    e += std::norm(m) * den - 2.0 * std::real(std::conj(m) * g);
  }
  return e;
}

struct RateReport {
  std::vector<double> sinr;         // per UE, >= 0
  std::vector<double> rate_bps_hz;  // per UE, log2(1 + sinr)
  double sum_rate = 0.0;
  SinrMode mode = SinrMode::per_link;
};

inline RateReport rate_report(const PrecoderState& st, const EffectiveChannels& eff,
                              const SystemConfig& cfg,
                              SinrMode mode = SinrMode::per_link) {
  RateReport rep;
  rep.mode = mode;
  rep.sinr.resize(static_cast<std::size_t>(eff.K));
  rep.rate_bps_hz.resize(static_cast<std::size_t>(eff.K));
  for (int k = 0; k < eff.K; ++k) {
    const double s = sinr(k, st, eff, cfg, mode);
    rep.sinr[static_cast<std::size_t>(k)] = s;
    rep.rate_bps_hz[static_cast<std::size_t>(k)] = std::log2(1.0 + s);
    rep.sum_rate += rep.rate_bps_hz[static_cast<std::size_t>(k)];
  }
  return rep;
}

}  // namespace cfmm
