#pragma once

// Monte-Carlo experiment driver: seeded multi-drop sweeps over schemes,
// power budgets, antenna counts, and truncated-inverse orders, with CSV or
// JSON result files. Every row is reproducible from (spec, seed): drop d
// always runs from a generator seeded with seed XOR d, so drops are
// independent of execution order and identical across schemes and sweep
// values (paired comparisons).

#include <charconv>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfmm/metrics.hpp"

namespace cfmm {

inline constexpr const char* kVersion = "0.1.0";

// proposed: two-stage beam selection + iterative precoder.
// iabs_only: intra-cluster stage only + iterative precoder.
// zf: two-stage beam selection + zero-forcing baseline.
enum class Scheme { proposed, iabs_only, zf };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::proposed: return "proposed";
    case Scheme::iabs_only: return "iabs_only";
    case Scheme::zf: return "zf";
  }
  throw config_error("unknown scheme");
}

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "proposed") return Scheme::proposed;
  if (s == "iabs_only") return Scheme::iabs_only;
  if (s == "zf") return Scheme::zf;
  throw config_error("unknown scheme: " + s);
}

enum class ExperimentKind { convergence, power_sweep, antenna_sweep, custom };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::convergence: return "convergence";
    case ExperimentKind::power_sweep: return "power_sweep";
    case ExperimentKind::antenna_sweep: return "antenna_sweep";
    case ExperimentKind::custom: return "custom";
  }
  throw config_error("unknown experiment kind");
}

inline ExperimentKind kind_from_string(const std::string& s) {
  if (s == "convergence") return ExperimentKind::convergence;
  if (s == "power_sweep" || s == "power") return ExperimentKind::power_sweep;
  if (s == "antenna_sweep" || s == "antenna") return ExperimentKind::antenna_sweep;
  if (s == "custom") return ExperimentKind::custom;
  throw config_error("unknown experiment kind: " + s);
}

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::power_sweep;
  SystemConfig base;
  std::vector<double> sweep;  // P_max values, antenna counts, or unused
  std::vector<Scheme> schemes = {Scheme::proposed, Scheme::iabs_only, Scheme::zf};
  std::vector<int> nse_orders;  // convergence kind: truncated-inverse orders
  int drops = 100;
  std::uint64_t seed = 1;

  void validate() const {
    if (drops < 1) throw config_error("drops must be >= 1");
    if (schemes.empty()) throw config_error("schemes must be nonempty");
    for (std::size_t i = 1; i < sweep.size(); ++i)
      if (!(sweep[i - 1] < sweep[i]))
        throw config_error("sweep values must be strictly increasing");
    if (kind == ExperimentKind::power_sweep || kind == ExperimentKind::antenna_sweep) {
      if (sweep.empty()) throw config_error("sweep values required for this kind");
    }
    if (kind == ExperimentKind::antenna_sweep) {
      for (double v : sweep) {
        if (v < 1.0 || v != static_cast<double>(static_cast<int>(v)))
          throw config_error("antenna sweep values must be positive integers");
      }
    }
    if (kind == ExperimentKind::convergence) {
      for (std::size_t i = 0; i < nse_orders.size(); ++i) {
        if (nse_orders[i] < 1) throw config_error("nse_orders must be >= 1");
        if (i > 0 && nse_orders[i - 1] >= nse_orders[i])
          throw config_error("nse_orders must be strictly increasing");
      }
      for (Scheme s : schemes)
        if (s == Scheme::zf)
          throw config_error("convergence experiments need an iterative scheme");
    }
  }
};

// One result record. iter is 1-based for per-iteration rows and -1 when the
// row aggregates a whole run (serialized as an empty CSV field / JSON null).
struct SimRow {
  std::string scheme;
  double sweep = 0.0;
  int drop = 0;
  int iter = -1;
  double sum_rate = 0.0;
  std::vector<double> ue_rates;  // JSON output only; not a CSV column
  std::uint64_t flops = 0;
  double wall_ms = 0.0;
};

struct SimResult {
  std::vector<SimRow> rows;
  nlohmann::json meta;
};

struct DropOutcome {
  BeamAssignment assignment;
  EffectiveChannels eff;
  PrecoderState state;
  RateReport report;
};

// One end-to-end drop: placement, path loss, clustering, channels, beam
// selection per scheme, precoding, metrics. The generator carries all
// randomness; two calls with equal (cfg, scheme, mode, generator state)
// produce identical outcomes.
inline DropOutcome run_drop(const SystemConfig& cfg, Scheme scheme,
                            const SolveMode& mode, std::mt19937_64& rng) {
  DropOutcome out;
  Topology topo = generate_drop(cfg, rng);
  const auto gains = large_scale_matrix(topo, cfg, rng);
  form_clusters(topo, gains, cfg);
  const ChannelSet cs = generate_channels(topo, gains, cfg, rng);
  out.assignment = scheme == Scheme::iabs_only ? assign_intra_all(cs, topo, cfg)
                                               : two_stage_assignment(cs, topo, cfg);
  out.eff = effective_channels(cs, out.assignment, topo);
  out.state = scheme == Scheme::zf ? zf_baseline(out.eff, cfg)
                                   : run_wsmse(out.eff, cfg, mode);
  out.report = rate_report(out.state, out.eff, cfg);
  return out;
}

namespace detail {

inline double run_one(std::vector<SimRow>& rows, const SystemConfig& cfg,
                      Scheme scheme, const SolveMode& mode, double sweep_value,
                      int drop, std::uint64_t drop_seed, bool per_iteration) {
  std::mt19937_64 rng(drop_seed);
  const auto t0 = std::chrono::steady_clock::now();
  const DropOutcome out = run_drop(cfg, scheme, mode, rng);
  const auto t1 = std::chrono::steady_clock::now();
  const double wall_ms =
      std::chrono::duration<double, std::milli>(t1 - t0).count();
  if (per_iteration) {
    for (int i = 0; i < out.state.iterations; ++i) {
      SimRow r;
      r.scheme = to_string(scheme);
      r.sweep = sweep_value;
      r.drop = drop;
      r.iter = i + 1;
      r.sum_rate = out.state.sum_rate_history[static_cast<std::size_t>(i)];
      r.flops = out.state.total_flops();
      r.wall_ms = wall_ms;
      if (i + 1 == out.state.iterations) r.ue_rates = out.report.rate_bps_hz;
      rows.push_back(std::move(r));
    }
  } else {
    SimRow r;
    r.scheme = to_string(scheme);
    r.sweep = sweep_value;
    r.drop = drop;
    r.sum_rate = out.report.sum_rate;
    r.ue_rates = out.report.rate_bps_hz;
    r.flops = out.state.total_flops();
    r.wall_ms = wall_ms;
    rows.push_back(std::move(r));
  }
  return wall_ms;
}

}  // namespace detail

inline SimResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  SimResult res;
  res.meta["version"] = kVersion;
  res.meta["kind"] = to_string(spec.kind);
  res.meta["seed"] = spec.seed;
  res.meta["drops"] = spec.drops;
  res.meta["config"] = spec.base.to_json();
  {
    nlohmann::json names = nlohmann::json::array();
    for (Scheme s : spec.schemes) names.push_back(to_string(s));
    res.meta["schemes"] = names;
    res.meta["sweep"] = spec.sweep;
    res.meta["nse_orders"] = spec.nse_orders;
  }

  if (spec.kind == ExperimentKind::convergence) {
    // Per-iteration traces for each truncated-inverse order, plus the exact
    // path recorded under sweep value 0.
    SystemConfig cfg = spec.base;
    cfg.validate();
    for (int drop = 0; drop < spec.drops; ++drop) {
      const std::uint64_t ds = spec.seed ^ static_cast<std::uint64_t>(drop);
      for (Scheme scheme : spec.schemes) {
        detail::run_one(res.rows, cfg, scheme, SolveMode::exact(), 0.0, drop,
                        ds, true);
        for (int t : spec.nse_orders)
          detail::run_one(res.rows, cfg, scheme, SolveMode::nse(t),
                          static_cast<double>(t), drop, ds, true);
      }
    }
    return res;
  }

  std::vector<double> values = spec.sweep;
  if (values.empty()) values.push_back(0.0);
  for (double v : values) {
    SystemConfig cfg = spec.base;
    if (spec.kind == ExperimentKind::power_sweep) cfg.P_max = v;
    if (spec.kind == ExperimentKind::antenna_sweep) cfg.N = static_cast<int>(v);
    cfg.validate();
    const SolveMode mode =
        cfg.nse_order ? SolveMode::nse(*cfg.nse_order) : SolveMode::exact();
    for (int drop = 0; drop < spec.drops; ++drop) {
      const std::uint64_t ds = spec.seed ^ static_cast<std::uint64_t>(drop);
      for (Scheme scheme : spec.schemes)
        detail::run_one(res.rows, cfg, scheme, mode, v, drop, ds, false);
    }
  }
  return res;
}

// Shortest decimal form that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline constexpr const char* kCsvHeader = "scheme,sweep,drop,iter,sum_rate,flops,wall_ms";

inline void write_results(const SimResult& res, const std::string& path,
                          const std::string& format) {
  if (format != "csv" && format != "json")
    throw config_error("format must be csv or json, got: " + format);
  std::ofstream out(path, std::ios::binary);  // binary keeps LF endings
  if (!out) throw io_error("cannot open for writing: " + path);
  if (format == "csv") {
    out << kCsvHeader << "\n";
    for (const SimRow& r : res.rows) {
      out << r.scheme << ',' << format_double(r.sweep) << ',' << r.drop << ',';
      if (r.iter >= 0) out << r.iter;
      out << ',' << format_double(r.sum_rate) << ',' << r.flops << ','
          << format_double(r.wall_ms) << "\n";
    }
  } else {
    nlohmann::json j;
    j["meta"] = res.meta;
    nlohmann::json rows = nlohmann::json::array();
    for (const SimRow& r : res.rows) {
      nlohmann::json jr;
      jr["scheme"] = r.scheme;
      jr["sweep"] = r.sweep;
      jr["drop"] = r.drop;
      if (r.iter >= 0) jr["iter"] = r.iter;
      else jr["iter"] = nullptr;
      jr["sum_rate"] = r.sum_rate;
      jr["ue_rates"] = r.ue_rates;
      jr["flops"] = r.flops;
      jr["wall_ms"] = r.wall_ms;
      rows.push_back(std::move(jr));
    }
    j["rows"] = std::move(rows);
    out << j.dump(2) << "\n";
  }
  out.flush();
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace cfmm
