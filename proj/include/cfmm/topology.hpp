#pragma once

#include <algorithm>
#include <array>
#include <random>
#include <vector>

#include <json.hpp>

#include "cfmm/config.hpp"
#include "cfmm/errors.hpp"

namespace cfmm {

// One network drop: node positions plus the user-centric serving clusters.
// serving_aps[k] lists the APs that serve UE k (ascending); served_ues[l]
// is the transpose view (ascending). Both are filled by form_clusters.
struct Topology {
  std::vector<std::array<double, 2>> ap_xy;
  std::vector<std::array<double, 2>> ue_xy;
  std::vector<std::vector<int>> serving_aps;  // size K
  std::vector<std::vector<int>> served_ues;   // size L
  std::vector<double> large_scale_db;         // row-major [l*K + k], set by form_clusters

  bool serves(int l, int k) const {
    const auto& m = serving_aps[static_cast<std::size_t>(k)];
    return std::binary_search(m.begin(), m.end(), l);
  }

  nlohmann::json to_json() const;
  static Topology from_json(const nlohmann::json& j);
};

// Draw AP and UE positions uniformly in the [0, area_m]^2 square.
// Draw order (fixed for reproducibility): all AP positions (x then y per
// AP, ascending index), then all UE positions likewise.
inline Topology generate_drop(const SystemConfig& cfg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, cfg.area_m);
  Topology t;
  t.ap_xy.resize(static_cast<std::size_t>(cfg.L));
  t.ue_xy.resize(static_cast<std::size_t>(cfg.K));
  for (auto& p : t.ap_xy) {
    const double x = u(rng);
    const double y = u(rng);
    p = {x, y};
  }
  for (auto& p : t.ue_xy) {
    const double x = u(rng);
    const double y = u(rng);
    p = {x, y};
  }
  t.serving_aps.assign(static_cast<std::size_t>(cfg.K), {});
  t.served_ues.assign(static_cast<std::size_t>(cfg.L), {});
  return t;
}

// Greedy user-centric clustering on large-scale gains (dB, row-major
// [l*K + k], higher = stronger). Every UE ends with exactly
// min(cluster_size, L) serving APs; every AP serves at most N_RF UEs.
//
// Pass 1: each UE takes its min(cluster_size, L) strongest APs.
// Pass 2: APs are visited in ascending index; an overloaded AP keeps its
// N_RF strongest UEs (ties: lower UE index) and each evicted UE re-homes to
// its strongest AP that is not already in its cluster and still has a free
// slot. No feasible AP for an evicted UE is a configuration error.
inline void form_clusters(Topology& topo, const std::vector<double>& gain_db,
                          const SystemConfig& cfg) {
  const int L = cfg.L, K = cfg.K;
  const int Me = std::min(cfg.cluster_size, L);
  if (static_cast<long long>(L) * cfg.N_RF < K)
    throw config_error("infeasible clustering: L*N_RF < K");
  if (static_cast<long long>(K) * Me > static_cast<long long>(L) * cfg.N_RF)
    throw config_error("infeasible clustering: K*min(cluster_size,L) > L*N_RF");

  const auto gain = [&](int l, int k) {
    return gain_db[static_cast<std::size_t>(l) * static_cast<std::size_t>(K) +
                   static_cast<std::size_t>(k)];
  };

  // Per-UE AP preference order: descending gain, ties to the lower index.
  std::vector<std::vector<int>> pref(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    auto& p = pref[static_cast<std::size_t>(k)];
    p.resize(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) p[static_cast<std::size_t>(l)] = l;
    std::stable_sort(p.begin(), p.end(),
                     [&](int a, int b) { return gain(a, k) > gain(b, k); });
  }

  std::vector<std::vector<int>> m_of_ue(static_cast<std::size_t>(K));
  std::vector<std::vector<int>> ues_of_ap(static_cast<std::size_t>(L));
  const auto in_cluster = [&](int k, int l) {
    const auto& m = m_of_ue[static_cast<std::size_t>(k)];
    return std::find(m.begin(), m.end(), l) != m.end();
  };
  for (int k = 0; k < K; ++k) {
    for (int i = 0; i < Me; ++i) {
      const int l = pref[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
      m_of_ue[static_cast<std::size_t>(k)].push_back(l);
      ues_of_ap[static_cast<std::size_t>(l)].push_back(k);
    }
  }

  for (int l = 0; l < L; ++l) {
    auto& served = ues_of_ap[static_cast<std::size_t>(l)];
    if (static_cast<int>(served.size()) <= cfg.N_RF) continue;
    std::stable_sort(served.begin(), served.end(), [&](int a, int b) {
      if (gain(l, a) != gain(l, b)) return gain(l, a) > gain(l, b);
      return a < b;
    });
    std::vector<int> evicted(served.begin() + cfg.N_RF, served.end());
    served.resize(static_cast<std::size_t>(cfg.N_RF));
    for (int k : evicted) {
      auto& m = m_of_ue[static_cast<std::size_t>(k)];
      m.erase(std::find(m.begin(), m.end(), l));
      bool placed = false;
      for (int cand : pref[static_cast<std::size_t>(k)]) {
        if (in_cluster(k, cand)) continue;
        auto& cs = ues_of_ap[static_cast<std::size_t>(cand)];
        if (static_cast<int>(cs.size()) >= cfg.N_RF) continue;
        m.push_back(cand);
        cs.push_back(k);
        placed = true;
        break;
      }
      if (!placed)
        throw config_error("infeasible clustering: evicted UE has no AP with a free slot");
    }
  }

  for (auto& m : m_of_ue) std::sort(m.begin(), m.end());
  for (auto& s : ues_of_ap) std::sort(s.begin(), s.end());
  topo.serving_aps = std::move(m_of_ue);
  topo.served_ues = std::move(ues_of_ap);
  topo.large_scale_db = gain_db;
}

inline nlohmann::json Topology::to_json() const {
  nlohmann::json j;
  j["ap_xy"] = ap_xy;
  j["ue_xy"] = ue_xy;
  j["serving_aps"] = serving_aps;
  j["served_ues"] = served_ues;
  j["large_scale_db"] = large_scale_db;
  return j;
}

inline Topology Topology::from_json(const nlohmann::json& j) {
  Topology t;
  j.at("ap_xy").get_to(t.ap_xy);
  j.at("ue_xy").get_to(t.ue_xy);
  j.at("serving_aps").get_to(t.serving_aps);
  j.at("served_ues").get_to(t.served_ues);
  j.at("large_scale_db").get_to(t.large_scale_db);
  return t;
}

}  // namespace cfmm
