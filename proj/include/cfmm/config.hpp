#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include <json.hpp>

#include "cfmm/errors.hpp"

namespace cfmm {

// System-level scenario parameters. Field names are mirrored one-to-one by
// the JSON config schema; unknown JSON keys are rejected.
struct SystemConfig {
  int L = 32;        // access points
  int K = 8;         // user terminals
  int N = 16;        // antennas per AP
  int N_RF = 8;      // RF chains (selected beams) per AP
  double P_max = 1.0;      // per-AP transmit power budget, watts
  double noise_dbm = -85.0;
  double area_m = 250.0;   // side of the square deployment area
  int cluster_size = 4;    // serving APs per UE
  double gamma_th = 0.5;   // inter-cluster energy-ratio threshold
  double carrier_hz = 28e9;
  double pl_exponent = 3.19;
  double pl_b = 0.0;
  double pl_f0_hz = 2e9;
  double shadow_var_db2 = 4.2;
  int nlos_paths = 3;
  double nlos_power_offset_db = -10.0;
  std::optional<int> nse_order;  // empty = exact inverse path
  int max_iters = 50;
  double conv_tol = 1e-4;
  std::uint64_t rng_seed = 1;

  // Noise power in watts, cached by validate().
  double noise_w = 0.0;

  void validate() {
    if (L < 1) throw config_error("L must be >= 1");
    if (K < 1) throw config_error("K must be >= 1");
    if (N < 1) throw config_error("N must be >= 1");
    if (N_RF < 1 || N_RF > N) throw config_error("need 1 <= N_RF <= N");
    if (cluster_size < 1 || cluster_size > L) throw config_error("need 1 <= cluster_size <= L");
    if (!(P_max > 0.0)) throw config_error("P_max must be > 0");
    if (!(conv_tol > 0.0)) throw config_error("conv_tol must be > 0");
    if (!(gamma_th > 0.0)) throw config_error("gamma_th must be > 0");
    if (!(area_m >= 0.0)) throw config_error("area_m must be >= 0");
    if (!(carrier_hz > 0.0)) throw config_error("carrier_hz must be > 0");
    if (!(pl_f0_hz > 0.0)) throw config_error("pl_f0_hz must be > 0");
    if (!(shadow_var_db2 >= 0.0)) throw config_error("shadow_var_db2 must be >= 0");
    if (nlos_paths < 0) throw config_error("nlos_paths must be >= 0");
    if (max_iters < 1) throw config_error("max_iters must be >= 1");
    if (nse_order && *nse_order < 0) throw config_error("nse_order must be >= 0 or \"exact\"");
    if (!std::isfinite(noise_dbm)) throw config_error("noise_dbm must be finite");
    noise_w = std::pow(10.0, (noise_dbm - 30.0) / 10.0);
  }

  static SystemConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

inline SystemConfig SystemConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw config_error("config root must be a JSON object");
  SystemConfig c;
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "L") c.L = val.get<int>();
      else if (key == "K") c.K = val.get<int>();
      else if (key == "N") c.N = val.get<int>();
      else if (key == "N_RF") c.N_RF = val.get<int>();
      else if (key == "P_max") c.P_max = val.get<double>();
      else if (key == "noise_dbm") c.noise_dbm = val.get<double>();
      else if (key == "area_m") c.area_m = val.get<double>();
      else if (key == "cluster_size") c.cluster_size = val.get<int>();
      else if (key == "gamma_th") c.gamma_th = val.get<double>();
      else if (key == "carrier_hz") c.carrier_hz = val.get<double>();
      else if (key == "pl_exponent") c.pl_exponent = val.get<double>();
      else if (key == "pl_b") c.pl_b = val.get<double>();
      else if (key == "pl_f0_hz") c.pl_f0_hz = val.get<double>();
      else if (key == "shadow_var_db2") c.shadow_var_db2 = val.get<double>();
      else if (key == "nlos_paths") c.nlos_paths = val.get<int>();
      else if (key == "nlos_power_offset_db") c.nlos_power_offset_db = val.get<double>();
      else if (key == "nse_order") {
        if (val.is_string() && val.get<std::string>() == "exact") c.nse_order.reset();
        else if (val.is_number_integer()) c.nse_order = val.get<int>();
        else throw config_error("nse_order must be an integer or \"exact\"");
      }
      else if (key == "max_iters") c.max_iters = val.get<int>();
      else if (key == "conv_tol") c.conv_tol = val.get<double>();
      else if (key == "rng_seed") c.rng_seed = val.get<std::uint64_t>();
      else throw config_error("unknown config key: " + key);
    } catch (const nlohmann::json::exception& e) {
      throw config_error("config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

inline nlohmann::json SystemConfig::to_json() const {
  nlohmann::json j;
  j["L"] = L;
  j["K"] = K;
  j["N"] = N;
  j["N_RF"] = N_RF;
  j["P_max"] = P_max;
  j["noise_dbm"] = noise_dbm;
  j["area_m"] = area_m;
  j["cluster_size"] = cluster_size;
  j["gamma_th"] = gamma_th;
  j["carrier_hz"] = carrier_hz;
  j["pl_exponent"] = pl_exponent;
  j["pl_b"] = pl_b;
  j["pl_f0_hz"] = pl_f0_hz;
  j["shadow_var_db2"] = shadow_var_db2;
  j["nlos_paths"] = nlos_paths;
  j["nlos_power_offset_db"] = nlos_power_offset_db;
  if (nse_order) j["nse_order"] = *nse_order;
  else j["nse_order"] = "exact";
  j["max_iters"] = max_iters;
  j["conv_tol"] = conv_tol;
  j["rng_seed"] = rng_seed;
  return j;
}

}  // namespace cfmm
