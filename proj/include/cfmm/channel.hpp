#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <json.hpp>

#include "cfmm/config.hpp"
#include "cfmm/linalg.hpp"
#include "cfmm/topology.hpp"

namespace cfmm {

constexpr double kSpeedOfLight = 3e8;  // m/s

inline double randn(std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  return d(rng);
}

// Circularly symmetric unit-variance complex Gaussian (real part drawn
// first, then imaginary, each with variance 1/2).
inline cplx randn_c(std::mt19937_64& rng) {
  const double re = randn(rng) * M_SQRT1_2;
  const double im = randn(rng) * M_SQRT1_2;
  return {re, im};
}

// Unit-norm ULA steering vector with symmetric element offsets
// v_i = i - (N-1)/2, entry i = exp(-j 2 pi theta v_i) / sqrt(N).
inline cvec steering_vector(double theta, int N) {
  cvec a(static_cast<std::size_t>(N));
  const double scale = 1.0 / std::sqrt(static_cast<double>(N));
  for (int i = 0; i < N; ++i) {
    const double v = static_cast<double>(i) - (N - 1) / 2.0;
    const double phase = -2.0 * M_PI * theta * v;
    a[static_cast<std::size_t>(i)] = cplx(std::cos(phase), std::sin(phase)) * scale;
  }
  return a;
}

// Normalized beam directions of the N-point DFT codebook:
// (n - (N+1)/2) / N for n = 1..N, symmetric about 0.
inline rvec dft_grid(int N) {
  rvec g(static_cast<std::size_t>(N));
  for (int n = 1; n <= N; ++n)
    g[static_cast<std::size_t>(n - 1)] = (n - (N + 1) / 2.0) / N;
  return g;
}

// Unitary beamspace map: row n is a(grid[n])^H, so (B h)[n] = <a(grid[n]), h>.
inline cmat beamspace_matrix(int N) {
  const rvec grid = dft_grid(N);
  cmat B(static_cast<std::size_t>(N), static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const cvec a = steering_vector(grid[static_cast<std::size_t>(n)], N);
    for (int i = 0; i < N; ++i)
      B(static_cast<std::size_t>(n), static_cast<std::size_t>(i)) =
          std::conj(a[static_cast<std::size_t>(i)]);
  }
  return B;
}

inline cvec beamspace_transform(const cvec& h) {
  return matvec(beamspace_matrix(static_cast<int>(h.size())), h);
}

// Large-scale gain in dB at distance d_m (clamped below at 1 m):
//   -20 log10(4 pi f / c) - 10 n (1 + b f/f0) log10(max(d,1)) - shadow_db.
inline double path_loss_db(double d_m, double shadow_db, const SystemConfig& cfg) {
  const double d = std::max(d_m, 1.0);
  const double intercept =
      -20.0 * std::log10(4.0 * M_PI * cfg.carrier_hz / kSpeedOfLight);
  const double slope =
      10.0 * cfg.pl_exponent * (1.0 + cfg.pl_b * cfg.carrier_hz / cfg.pl_f0_hz);
  return intercept - slope * std::log10(d) - shadow_db;
}

// Row-major [l*K + k] gains in dB with independent real Gaussian shadowing
// of variance shadow_var_db2. Draw order: l-major over (l, k).
inline std::vector<double> large_scale_matrix(const Topology& topo,
                                              const SystemConfig& cfg,
                                              std::mt19937_64& rng) {
  const double shadow_sd = std::sqrt(cfg.shadow_var_db2);
  std::vector<double> g(topo.ap_xy.size() * topo.ue_xy.size());
  for (std::size_t l = 0; l < topo.ap_xy.size(); ++l) {
    for (std::size_t k = 0; k < topo.ue_xy.size(); ++k) {
      const double d = std::hypot(topo.ue_xy[k][0] - topo.ap_xy[l][0],
                                  topo.ue_xy[k][1] - topo.ap_xy[l][1]);
      const double shadow = randn(rng) * shadow_sd;
      g[l * topo.ue_xy.size() + k] = path_loss_db(d, shadow, cfg);
    }
  }
  return g;
}

struct PathParams {
  cplx gain;
  double theta;
};

// Per-drop channel realizations for every (AP, UE) pair, stored flat with
// index l*K + k: antenna-domain h, its beamspace image, and the underlying
// path parameters (entry 0 is the LoS path).
struct ChannelSet {
  int L = 0, K = 0, N = 0;
  std::vector<cvec> antenna;
  std::vector<cvec> beamspace;
  std::vector<std::vector<PathParams>> paths;

  std::size_t idx(int l, int k) const {
    return static_cast<std::size_t>(l) * static_cast<std::size_t>(K) +
           static_cast<std::size_t>(k);
  }
  const cvec& h(int l, int k) const { return antenna[idx(l, k)]; }
  const cvec& hb(int l, int k) const { return beamspace[idx(l, k)]; }

  nlohmann::json to_json() const;
  static ChannelSet from_json(const nlohmann::json& j);
};

// Multipath beamspace channel per (l, k), l-major:
//   h = beta_0 a(theta_0) + sum_p beta_p a(theta_p)
// with LoS direction theta_0 = 0.5 sin(bearing from AP to UE), LoS gain
// beta_0 = CN(0,1) * sqrt(linear large-scale gain), and nlos_paths NLoS
// components offset by nlos_power_offset_db with directions U[-0.5, 0.5].
// Draw order per pair: LoS gain, then per NLoS path its gain then direction.
inline ChannelSet generate_channels(const Topology& topo,
                                    const std::vector<double>& gain_db,
                                    const SystemConfig& cfg,
                                    std::mt19937_64& rng) {
  ChannelSet cs;
  cs.L = cfg.L;
  cs.K = cfg.K;
  cs.N = cfg.N;
  const std::size_t pairs = static_cast<std::size_t>(cfg.L) * static_cast<std::size_t>(cfg.K);
  cs.antenna.resize(pairs);
  cs.beamspace.resize(pairs);
  cs.paths.resize(pairs);
  const cmat B = beamspace_matrix(cfg.N);
  const double off_lin = std::pow(10.0, cfg.nlos_power_offset_db / 10.0);
  std::uniform_real_distribution<double> udir(-0.5, 0.5);
  for (int l = 0; l < cfg.L; ++l) {
    for (int k = 0; k < cfg.K; ++k) {
      const std::size_t q = cs.idx(l, k);
      const double lin = std::pow(10.0, gain_db[q] / 10.0);
      const double bearing = std::atan2(topo.ue_xy[static_cast<std::size_t>(k)][1] -
                                            topo.ap_xy[static_cast<std::size_t>(l)][1],
                                        topo.ue_xy[static_cast<std::size_t>(k)][0] -
                                            topo.ap_xy[static_cast<std::size_t>(l)][0]);
      auto& pp = cs.paths[q];
      pp.reserve(static_cast<std::size_t>(cfg.nlos_paths) + 1);
      pp.push_back({randn_c(rng) * std::sqrt(lin), 0.5 * std::sin(bearing)});
      for (int p = 0; p < cfg.nlos_paths; ++p) {
        const cplx g = randn_c(rng) * std::sqrt(lin * off_lin);
        const double th = udir(rng);
        pp.push_back({g, th});
      }
      cvec h(static_cast<std::size_t>(cfg.N), cplx(0.0, 0.0));
      for (const auto& path : pp) {
        const cvec a = steering_vector(path.theta, cfg.N);
        for (int i = 0; i < cfg.N; ++i)
          h[static_cast<std::size_t>(i)] += path.gain * a[static_cast<std::size_t>(i)];
      }
      cs.beamspace[q] = matvec(B, h);
      cs.antenna[q] = std::move(h);
    }
  }
  return cs;
}

namespace detail {
inline nlohmann::json cvec_to_json(const cvec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const cplx& z : v) a.push_back({z.real(), z.imag()});
  return a;
}
inline cvec cvec_from_json(const nlohmann::json& a) {
  cvec v;
  v.reserve(a.size());
  for (const auto& e : a) v.emplace_back(e.at(0).get<double>(), e.at(1).get<double>());
  return v;
}
}  // namespace detail

inline nlohmann::json ChannelSet::to_json() const {
  nlohmann::json j;
  j["L"] = L;
  j["K"] = K;
  j["N"] = N;
  nlohmann::json ja = nlohmann::json::array(), jb = nlohmann::json::array(),
                 jp = nlohmann::json::array();
  for (const auto& v : antenna) ja.push_back(detail::cvec_to_json(v));
  for (const auto& v : beamspace) jb.push_back(detail::cvec_to_json(v));
  for (const auto& pv : paths) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& p : pv)
      row.push_back({{"gain", {p.gain.real(), p.gain.imag()}}, {"theta", p.theta}});
    jp.push_back(row);
  }
  j["antenna"] = std::move(ja);
  j["beamspace"] = std::move(jb);
  j["paths"] = std::move(jp);
  return j;
}

inline ChannelSet ChannelSet::from_json(const nlohmann::json& j) {
  ChannelSet cs;
  cs.L = j.at("L").get<int>();
  cs.K = j.at("K").get<int>();
  cs.N = j.at("N").get<int>();
  for (const auto& v : j.at("antenna")) cs.antenna.push_back(detail::cvec_from_json(v));
  for (const auto& v : j.at("beamspace")) cs.beamspace.push_back(detail::cvec_from_json(v));
  for (const auto& row : j.at("paths")) {
    std::vector<PathParams> pv;
    for (const auto& p : row) {
      const auto& g = p.at("gain");
      pv.push_back({cplx(g.at(0).get<double>(), g.at(1).get<double>()),
                    p.at("theta").get<double>()});
    }
    cs.paths.push_back(std::move(pv));
  }
  return cs;
}

}  // namespace cfmm
