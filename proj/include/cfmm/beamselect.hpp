#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "cfmm/channel.hpp"
#include "cfmm/config.hpp"
#include "cfmm/errors.hpp"
#include "cfmm/topology.hpp"

namespace cfmm {

enum class UserClass { NIU, IU };  // non-interfering / interfering at one AP

constexpr int kPaddingUe = -1;

// One RF chain at one AP: the selected beam and the UE it carries
// (kPaddingUe for chains padded with an unused beam and zero precoding).
struct BeamRow {
  int ue = kPaddingUe;
  int beam = 0;
};

struct RatioReport {
  int ue = 0;
  int ap = 0;
  int beam = 0;
  double ice = 0.0;    // own (in-cluster) energy on the beam
  double oce = 0.0;    // strongest out-of-cluster energy on the beam
  double ratio = 0.0;  // oce / ice, +inf when ice == 0
  int offender = -1;   // out-of-cluster UE achieving oce
};

struct RefineEvent {
  int iter = 0;
  RatioReport report;
  int new_beam = 0;
  bool frozen = false;  // no free untried beam was left; kept best ratio seen
};

// Per-AP beam selection. ap_rows[l] has exactly N_RF rows: served UEs in
// ascending UE order followed by padding rows; all beams within an AP are
// distinct, so the rows realize a valid 0-1 selection matrix.
struct BeamAssignment {
  int L = 0, N = 0, N_RF = 0;
  std::vector<std::vector<BeamRow>> ap_rows;
  // classification[l] is parallel to topo.served_ues[l].
  std::vector<std::vector<UserClass>> classification;
  std::vector<RefineEvent> trace;
  int refine_iterations = 0;

  // Beam carrying UE k at AP l; -1 when k is not served by l.
  int beam_of(int l, int k) const {
    for (const BeamRow& r : ap_rows[static_cast<std::size_t>(l)])
      if (r.ue == k) return r.beam;
    return -1;
  }

  nlohmann::json to_json() const;
};

inline double beam_energy(const ChannelSet& cs, int k, int l, int n) {
  return std::norm(cs.hb(l, k)[static_cast<std::size_t>(n)]);
}

// Argmax-energy beam for UE k at AP l; ties take the lowest beam index.
inline int strongest_beam(const ChannelSet& cs, int k, int l) {
  int best = 0;
  double best_e = beam_energy(cs, k, l, 0);
  for (int n = 1; n < cs.N; ++n) {
    const double e = beam_energy(cs, k, l, n);
    if (e > best_e) {
      best_e = e;
      best = n;
    }
  }
  return best;
}

struct ClassifyResult {
  std::vector<int> niu;
  std::vector<int> iu;
};

// A served UE is non-interfering at AP l iff its strongest beam is not the
// strongest beam of any other UE served by l.
inline ClassifyResult classify_users(const ChannelSet& cs, const Topology& topo, int l) {
  const auto& served = topo.served_ues[static_cast<std::size_t>(l)];
  std::vector<int> sb(served.size());
  for (std::size_t i = 0; i < served.size(); ++i)
    sb[i] = strongest_beam(cs, served[i], l);
  ClassifyResult r;
  for (std::size_t i = 0; i < served.size(); ++i) {
    bool unique = true;
    for (std::size_t j = 0; j < served.size(); ++j)
      if (j != i && sb[j] == sb[i]) unique = false;
    (unique ? r.niu : r.iu).push_back(served[i]);
  }
  return r;
}

namespace detail {

// Highest-energy beam for (k, l) outside `taken`; ties take the lowest index.
inline int best_free_beam(const ChannelSet& cs, int k, int l,
                          const std::vector<bool>& taken) {
  int best = -1;
  double best_e = -1.0;
  for (int n = 0; n < cs.N; ++n) {
    if (taken[static_cast<std::size_t>(n)]) continue;
    const double e = beam_energy(cs, k, l, n);
    if (e > best_e) {
      best_e = e;
      best = n;
    }
  }
  return best;
}

// Fill rows up to N_RF with the unassigned beams of largest aggregate
// energy over the UEs served by l; ties take the lowest beam index.
inline void pad_rows(const ChannelSet& cs, const Topology& topo, int l, int n_rf,
                     std::vector<BeamRow>& rows) {
  if (static_cast<int>(rows.size()) >= n_rf) return;
  std::vector<bool> taken(static_cast<std::size_t>(cs.N), false);
  for (const BeamRow& r : rows) taken[static_cast<std::size_t>(r.beam)] = true;
  std::vector<std::pair<double, int>> pool;
  for (int n = 0; n < cs.N; ++n) {
    if (taken[static_cast<std::size_t>(n)]) continue;
    double agg = 0.0;
    for (int k : topo.served_ues[static_cast<std::size_t>(l)])
      agg += beam_energy(cs, k, l, n);
    pool.push_back({agg, n});
  }
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; rows.size() < static_cast<std::size_t>(n_rf); ++i)
    rows.push_back({kPaddingUe, pool[i].second});
}

inline void sort_rows(std::vector<BeamRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const BeamRow& a, const BeamRow& b) {
    if ((a.ue == kPaddingUe) != (b.ue == kPaddingUe)) return b.ue == kPaddingUe;
    return a.ue < b.ue;
  });
}

}  // namespace detail

// Stage-1 interference-aware assignment at AP l. NIUs take their strongest
// beams; IUs, visited in descending channel norm (ties: lower UE index),
// take their highest-energy beam not yet used at this AP. Remaining RF
// chains are padded. Rows come back sorted: served UEs ascending, padding last.
inline std::vector<BeamRow> assign_intra(const ChannelSet& cs, const Topology& topo,
                                         int l, const SystemConfig& cfg) {
  const auto& served = topo.served_ues[static_cast<std::size_t>(l)];
  if (static_cast<int>(served.size()) > cs.N)
    throw config_error("assign_intra: more served UEs than beams at one AP");
  const ClassifyResult cls = classify_users(cs, topo, l);
  std::vector<bool> taken(static_cast<std::size_t>(cs.N), false);
  std::vector<BeamRow> rows;
  rows.reserve(static_cast<std::size_t>(cfg.N_RF));
  for (int k : cls.niu) {
    const int n = strongest_beam(cs, k, l);
    taken[static_cast<std::size_t>(n)] = true;
    rows.push_back({k, n});
  }
  std::vector<int> ius = cls.iu;
  std::stable_sort(ius.begin(), ius.end(), [&](int a, int b) {
    const double na = norm2_sq(cs.h(l, a)), nb = norm2_sq(cs.h(l, b));
    if (na != nb) return na > nb;
    return a < b;
  });
  for (int k : ius) {
    const int n = detail::best_free_beam(cs, k, l, taken);
    taken[static_cast<std::size_t>(n)] = true;
    rows.push_back({k, n});
  }
  detail::sort_rows(rows);
  detail::pad_rows(cs, topo, l, cfg.N_RF, rows);
  return rows;
}

inline BeamAssignment assign_intra_all(const ChannelSet& cs, const Topology& topo,
                                       const SystemConfig& cfg) {
  BeamAssignment a;
  a.L = cfg.L;
  a.N = cfg.N;
  a.N_RF = cfg.N_RF;
  a.ap_rows.resize(static_cast<std::size_t>(cfg.L));
  a.classification.resize(static_cast<std::size_t>(cfg.L));
  for (int l = 0; l < cfg.L; ++l) {
    a.ap_rows[static_cast<std::size_t>(l)] = assign_intra(cs, topo, l, cfg);
    const ClassifyResult cls = classify_users(cs, topo, l);
    const auto& served = topo.served_ues[static_cast<std::size_t>(l)];
    auto& tags = a.classification[static_cast<std::size_t>(l)];
    tags.resize(served.size());
    for (std::size_t i = 0; i < served.size(); ++i) {
      const bool is_niu =
          std::find(cls.niu.begin(), cls.niu.end(), served[i]) != cls.niu.end();
      tags[i] = is_niu ? UserClass::NIU : UserClass::IU;
    }
  }
  return a;
}

// Out-of-cluster pressure on every carried beam: for each served row (k, n)
// at AP l, ratio = max over UEs not served by l of their energy on n divided
// by the row's own energy (+inf when the own energy is zero and an
// out-of-cluster UE exists). Only ratios above gamma_th are returned,
// ordered by AP then row. `skip` (optional) suppresses frozen (l, ue) pairs.
inline std::vector<RatioReport> scan_intercluster(
    const BeamAssignment& assign, const ChannelSet& cs, const Topology& topo,
    const SystemConfig& cfg, const std::set<std::pair<int, int>>* skip = nullptr) {
  std::vector<RatioReport> out;
  for (int l = 0; l < assign.L; ++l) {
    for (const BeamRow& row : assign.ap_rows[static_cast<std::size_t>(l)]) {
      if (row.ue == kPaddingUe) continue;
      if (skip && skip->count({l, row.ue})) continue;
      double oce = -1.0;
      int offender = -1;
      for (int kp = 0; kp < cfg.K; ++kp) {
        if (topo.serves(l, kp)) continue;
        const double e = beam_energy(cs, kp, l, row.beam);
        if (e > oce) {
          oce = e;
          offender = kp;
        }
      }
      if (offender < 0) continue;  // no out-of-cluster UE at this AP
      const double ice = beam_energy(cs, row.ue, l, row.beam);
      RatioReport r;
      r.ue = row.ue;
      r.ap = l;
      r.beam = row.beam;
      r.ice = ice;
      r.oce = oce;
      r.ratio = ice > 0.0 ? oce / ice : std::numeric_limits<double>::infinity();
      r.offender = offender;
      if (r.ratio > cfg.gamma_th) out.push_back(r);
    }
  }
  return out;
}

// Stage-2 inter-cluster refinement. Repeatedly rescans and moves each
// offending (UE, AP) pair to its highest-energy beam that is neither in use
// at that AP nor previously tried by the pair. A pair with no such beam
// left keeps the lowest-ratio beam it has seen and is frozen out of later
// scans. Runs at most N outer iterations. Padding is recomputed at the end.
inline BeamAssignment refine_assignment(const BeamAssignment& assign,
                                        const ChannelSet& cs, const Topology& topo,
                                        const SystemConfig& cfg) {
  BeamAssignment a = assign;
  a.trace.clear();
  a.refine_iterations = 0;
  // Padding is stripped so padded beams rejoin the candidate pool.
  for (auto& rows : a.ap_rows) {
    rows.erase(std::remove_if(rows.begin(), rows.end(),
                              [](const BeamRow& r) { return r.ue == kPaddingUe; }),
               rows.end());
  }
  std::map<std::pair<int, int>, std::set<int>> tried;
  std::map<std::pair<int, int>, std::map<int, double>> seen;  // beam -> best ratio
  std::set<std::pair<int, int>> frozen;

  for (int iter = 0; iter < cfg.N; ++iter) {
    const auto reports = scan_intercluster(a, cs, topo, cfg, &frozen);
    if (reports.empty()) break;
    a.refine_iterations = iter + 1;
    for (const RatioReport& rep : reports) {
      const std::pair<int, int> key{rep.ap, rep.ue};
      auto& rows = a.ap_rows[static_cast<std::size_t>(rep.ap)];
      auto row = std::find_if(rows.begin(), rows.end(),
                              [&](const BeamRow& r) { return r.ue == rep.ue; });
      tried[key].insert(rep.beam);
      auto& sn = seen[key];
      const auto it = sn.find(rep.beam);
      if (it == sn.end() || rep.ratio < it->second) sn[rep.beam] = rep.ratio;

      std::vector<bool> taken(static_cast<std::size_t>(cs.N), false);
      for (const BeamRow& r : rows) taken[static_cast<std::size_t>(r.beam)] = true;
      int cand = -1;
      double cand_e = -1.0;
      for (int n = 0; n < cs.N; ++n) {
        if (taken[static_cast<std::size_t>(n)] || tried[key].count(n)) continue;
        const double e = beam_energy(cs, rep.ue, rep.ap, n);
        if (e > cand_e) {
          cand_e = e;
          cand = n;
        }
      }
      RefineEvent ev;
      ev.iter = iter;
      ev.report = rep;
      if (cand >= 0) {
        row->beam = cand;
        ev.new_beam = cand;
      } else {
        // No free untried beam: fall back to the best-ratio beam seen that
        // is still available (the current beam always is).
        int best = rep.beam;
        double best_ratio = sn.at(rep.beam);
        for (const auto& [n, ratio] : sn) {
          const bool available =
              n == rep.beam || !taken[static_cast<std::size_t>(n)];
          if (!available) continue;
          if (ratio < best_ratio || (ratio == best_ratio && n < best)) {
            best_ratio = ratio;
            best = n;
          }
        }
        row->beam = best;
        ev.new_beam = best;
        ev.frozen = true;
        frozen.insert(key);
      }
      a.trace.push_back(ev);
    }
  }
  for (int l = 0; l < a.L; ++l) {
    detail::sort_rows(a.ap_rows[static_cast<std::size_t>(l)]);
    detail::pad_rows(cs, topo, l, a.N_RF, a.ap_rows[static_cast<std::size_t>(l)]);
  }
  return a;
}

inline BeamAssignment two_stage_assignment(const ChannelSet& cs, const Topology& topo,
                                           const SystemConfig& cfg) {
  return refine_assignment(assign_intra_all(cs, topo, cfg), cs, topo, cfg);
}

inline nlohmann::json BeamAssignment::to_json() const {
  nlohmann::json j;
  j["L"] = L;
  j["N"] = N;
  j["N_RF"] = N_RF;
  nlohmann::json aps = nlohmann::json::array();
  for (int l = 0; l < L; ++l) {
    nlohmann::json rows = nlohmann::json::array();
    for (const BeamRow& r : ap_rows[static_cast<std::size_t>(l)])
      rows.push_back({{"ue", r.ue}, {"beam", r.beam}});
    nlohmann::json tags = nlohmann::json::array();
    for (UserClass c : classification[static_cast<std::size_t>(l)])
      tags.push_back(c == UserClass::NIU ? "NIU" : "IU");
    aps.push_back({{"ap", l}, {"rows", rows}, {"classification", tags}});
  }
  j["assignment"] = std::move(aps);
  j["refine_iterations"] = refine_iterations;
  nlohmann::json tr = nlohmann::json::array();
  for (const RefineEvent& e : trace) {
    tr.push_back({{"iter", e.iter},
                  {"ue", e.report.ue},
                  {"ap", e.report.ap},
                  {"old_beam", e.report.beam},
                  {"ice", e.report.ice},
                  {"oce", e.report.oce},
                  {"ratio", e.report.ratio},
                  {"offender", e.report.offender},
                  {"new_beam", e.new_beam},
                  {"frozen", e.frozen}});
  }
  j["trace"] = std::move(tr);
  return j;
}

}  // namespace cfmm
