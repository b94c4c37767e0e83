#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfnet/channel_model.hpp"
#include "mfnet/common.hpp"
#include "mfnet/meanfield_reduction.hpp"
#include "mfnet/mfg_delay.hpp"
#include "mfnet/monte_carlo.hpp"
#include "mfnet/transport_capacity.hpp"
#include "mfnet/wtm_solver.hpp"

namespace mfnet {

struct RunOptions {
  std::uint64_t seed = 1;
  int trials = 10000;
  bool full = false;  // raise the trial count to 1e5
  std::string out_dir = ".";

  int effective_trials() const { return full ? 100000 : trials; }
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "fig1_rate_vs_lambda", "fig2_rate_vs_pmax",  "fig8_nc_sensitivity",
      "fig3_csi_resolution", "fig6_tdm",           "fig9_mfg_power",
      "fig4_iesh_s_lambda",  "fig5_iesh_s_rmin",   "fig7_iesh_g_lambda"};
  return names;
}

/// The baseline scenario of the experiments: 10 mW noise, cubic path loss,
/// four-level fading, two direct rings, ten interference rings.
inline NetworkConfig experiment_base_config() {
  NetworkConfig c;
  c.lambda = 1.0;
  c.area_side = 25.0;
  c.d0 = 1.0;
  c.Nm = 2;
  c.NmI = 10;
  c.alpha = 3.0;
  c.noise = 10.0;
  c.fading_levels = {{4.6045, 0.25}, {1.9805, 0.25}, {0.9392, 0.25}, {0.2412, 0.25}};
  c.p_max = 0.1;
  c.r_min = 0.0;
  c.Na = 1;
  c.Nc = 2;
  return c;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

struct CsvWriter {
  std::ofstream os;
  explicit CsvWriter(const std::string& path) : os(path, std::ios::binary) {
    if (!os) throw ConfigError("cannot open output file: " + path);
  }
  void comment(const std::string& line) { os << "# " << line << "\n"; }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ",";
      os << cells[i];
    }
    os << "\n";
  }
};

/// Mean-field prediction and Monte Carlo measurement for one scenario under
/// the solved power policy.
struct ScenarioResult {
  double mf_rate = 0.0;
  double sim_rate = 0.0;
  double sim_stderr = 0.0;
};

inline ScenarioResult evaluate_scenario(const NetworkConfig& cfg, int trials,
                                        std::uint64_t seed, bool with_sim = true) {
  const auto w = wtm_from_config(cfg);
  const auto sol = mapel_solve(w, 0.01);
  ScenarioResult res;
  res.mf_rate = weighted_rate(sol.p, w);
  if (with_sim) {
    const auto interf = interference_gain_distribution(cfg);
    const auto table = build_group_table(cfg, interf);
    const int Ng = static_cast<int>(w.g.size()) / table.NI;
    const auto policy = PowerPolicy::from_powers(sol.p, table.NI, Ng);
    const auto rep = simulate_massive(cfg, policy, trials, seed);
    res.sim_rate = rep.mean_rate;
    res.sim_stderr = rep.rate_stderr;
  }
  return res;
}

}  // namespace detail

// ---- TDM comparison ----

struct TdmScheme {
  std::string name;
  std::vector<std::vector<int>> partition;  // link indices per slot
  std::vector<double> slot_fractions;
};

inline void validate_scheme(const TdmScheme& s, int links) {
  if (s.partition.size() != s.slot_fractions.size())
    throw ConfigError("tdm scheme: one slot fraction per group required");
  double total = 0.0;
  std::set<int> seen;
  for (const auto& group : s.partition)
    for (int idx : group) {
      if (idx < 0 || idx >= links) throw ConfigError("tdm scheme: link index out of range");
      if (!seen.insert(idx).second) throw ConfigError("tdm scheme: groups must be disjoint");
    }
  if (static_cast<int>(seen.size()) != links) throw ConfigError("tdm scheme: groups must cover all links");
  for (double f : s.slot_fractions) total += f;
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("tdm scheme: slot fractions must sum to 1");
}

/// Average network rate of explicit links under a slot partition: each slot
/// solves the reduced problem over its active links, everyone else silent.
inline double tdm_average_rate(const std::vector<double>& link_gains, double cross_distance,
                               double alpha, double noise, double p_max, const TdmScheme& scheme) {
  const int links = static_cast<int>(link_gains.size());
  validate_scheme(scheme, links);
  const double pl = path_loss(cross_distance, alpha);
  double network_rate = 0.0;
  for (std::size_t slot = 0; slot < scheme.partition.size(); ++slot) {
    const auto& group = scheme.partition[slot];
    if (group.empty()) continue;
    MeanFieldWtm w;
    const int m = static_cast<int>(group.size());
    w.omega.assign(static_cast<std::size_t>(m), 1.0 / m);
    w.g.resize(static_cast<std::size_t>(m));
    w.Gt.assign(static_cast<std::size_t>(m) * m, 0.0);
    for (int a = 0; a < m; ++a) {
      w.g[static_cast<std::size_t>(a)] = link_gains[static_cast<std::size_t>(group[static_cast<std::size_t>(a)])] * pl;
      for (int b = 0; b < m; ++b)
        if (a != b)
          w.Gt[static_cast<std::size_t>(a) * m + b] =
              link_gains[static_cast<std::size_t>(group[static_cast<std::size_t>(a)])] * pl;
    }
    w.noise = noise;
    w.p_max = p_max;
    w.r_min = 0.0;
    const auto sol = mapel_solve(w, 0.01);
    double slot_sum = 0.0;
    for (int a = 0; a < m; ++a) slot_sum += std::log2(sol.z[static_cast<std::size_t>(a)]);
    network_rate += scheme.slot_fractions[slot] * slot_sum / links;
  }
  return network_rate;
}

inline std::vector<TdmScheme> fig6_schemes() {
  return {
      {"no_division", {{0, 1, 2, 3}}, {1.0}},
      {"random_pairs", {{0, 2}, {1, 3}}, {0.5, 0.5}},
      {"outer_inner", {{0, 3}, {1, 2}}, {0.5, 0.5}},
      {"strong_weak", {{0, 1}, {2, 3}}, {0.5, 0.5}},
  };
}

// ---- config validation ----

inline std::vector<std::string> validate_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {"cannot open " + path};
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    return {std::string("parse error: ") + e.what()};
  }
  try {
    if (j.contains("T") || j.contains("arrival_pmf")) return mfg_config_from_json(j).diagnostics();
    return network_config_from_json(j).diagnostics();
  } catch (const std::exception& e) {
    return {std::string("schema error: ") + e.what()};
  }
}

// ---- presets ----

inline std::string run_preset(const std::string& name, const RunOptions& opts) {
  const auto path = (std::filesystem::path(opts.out_dir) / (name + ".csv")).string();
  detail::CsvWriter csv(path);
  const int trials = opts.effective_trials();

  if (name == "fig1_rate_vs_lambda") {
    csv.comment("average rate of the massive network vs node intensity");
    csv.comment("columns: method {meanfield|simulation}, lambda, p_max, rate, stderr");
    csv.row({"method", "lambda", "p_max", "rate", "stderr"});
    std::vector<std::array<double, 2>> combos;
    for (double lambda : {0.5, 1.0, 2.0})
      for (double p_max : {0.01, 0.02, 0.1}) combos.push_back({lambda, p_max});
    std::vector<detail::ScenarioResult> results(combos.size());
    for (std::size_t i = 0; i < combos.size(); ++i) {
      NetworkConfig cfg = experiment_base_config();
      cfg.lambda = combos[i][0];
      cfg.p_max = combos[i][1];
      results[i] = detail::evaluate_scenario(cfg, trials, opts.seed + i);
    }
    for (std::size_t i = 0; i < combos.size(); ++i)
      csv.row({"meanfield", detail::fmt(combos[i][0]), detail::fmt(combos[i][1]),
               detail::fmt(results[i].mf_rate), "0"});
    for (std::size_t i = 0; i < combos.size(); ++i)
      csv.row({"simulation", detail::fmt(combos[i][0]), detail::fmt(combos[i][1]),
               detail::fmt(results[i].sim_rate), detail::fmt(results[i].sim_stderr)});
    return path;
  }

  if (name == "fig2_rate_vs_pmax") {
    csv.comment("average rate vs the per-link power cap");
    csv.comment("columns: method, lambda, p_max, rate, stderr");
    csv.row({"method", "lambda", "p_max", "rate", "stderr"});
    std::size_t i = 0;
    for (double lambda : {0.5, 2.0}) {
      for (double p_max : {0.01, 0.02, 0.05, 0.1, 0.2}) {
        NetworkConfig cfg = experiment_base_config();
        cfg.lambda = lambda;
        cfg.p_max = p_max;
        const auto r = detail::evaluate_scenario(cfg, trials, opts.seed + i++);
        csv.row({"meanfield", detail::fmt(lambda), detail::fmt(p_max), detail::fmt(r.mf_rate), "0"});
        csv.row({"simulation", detail::fmt(lambda), detail::fmt(p_max), detail::fmt(r.sim_rate),
                 detail::fmt(r.sim_stderr)});
      }
    }
    return path;
  }

  if (name == "fig8_nc_sensitivity") {
    csv.comment("sensitivity of the mean-field rate to the count-quantization depth");
    csv.comment("columns: Nc, lambda, p_max, rate");
    csv.row({"Nc", "lambda", "p_max", "rate"});
    for (int nc : {1, 2}) {
      for (double p_max : {0.02, 0.05, 0.2}) {
        NetworkConfig cfg = experiment_base_config();
        cfg.Nc = nc;
        cfg.p_max = p_max;
        const auto r = detail::evaluate_scenario(cfg, trials, opts.seed, /*with_sim=*/false);
        csv.row({detail::fmt(nc), detail::fmt(cfg.lambda), detail::fmt(p_max),
                 detail::fmt(r.mf_rate)});
      }
    }
    return path;
  }

  if (name == "fig3_csi_resolution") {
    csv.comment("mean-field rate under coarser/finer quantization of the direct-link fading");
    csv.comment("columns: levels, lambda, rate");
    csv.row({"levels", "lambda", "rate"});
    for (int levels : {2, 4, 6}) {
      for (double lambda : {0.5, 1.0, 2.0}) {
        NetworkConfig cfg = experiment_base_config();
        cfg.lambda = lambda;
        cfg.fading_levels = rayleigh_fading_levels(levels);
        const auto r = detail::evaluate_scenario(cfg, trials, opts.seed, /*with_sim=*/false);
        csv.row({detail::fmt(levels), detail::fmt(lambda), detail::fmt(r.mf_rate)});
      }
    }
    return path;
  }

  if (name == "fig6_tdm") {
    csv.comment("four explicit links at unit distances; channel states 2.1458, 1.4073, 0.9691, 0.4911");
    csv.comment("columns: scheme, average_rate");
    csv.row({"scheme", "average_rate"});
    const std::vector<double> gains = {2.1458, 1.4073, 0.9691, 0.4911};
    for (const auto& scheme : fig6_schemes()) {
      const double rate = tdm_average_rate(gains, 1.0, 3.0, 10.0, 100.0, scheme);
      csv.row({scheme.name, detail::fmt(rate)});
    }
    return path;
  }

  if (name == "fig9_mfg_power") {
    csv.comment("population power to clear the buffers by the deadline; fixed unit-ring channel");
    csv.comment("interference wired from the ring model: gbar = interferer count x mean ring gain");
    csv.comment("columns: arrival_bits, lambda, gbar, total_power, cleared_mass");
    csv.row({"arrival_bits", "lambda", "gbar", "total_power", "cleared_mass"});
    for (double lambda : {0.025, 0.05}) {
      NetworkConfig geom = experiment_base_config();
      geom.lambda = lambda;
      geom.Nm = 1;
      geom.NmI = 3;
      geom.fading_levels = {{1.0, 1.0}};
      const auto interf = interference_gain_distribution(geom);
      const double gbar = interferer_count(geom) * interf.mean();
      for (double a : {1.0, 2.0, 4.0}) {
        MfgConfig mfg;
        mfg.T = 3.0;
        mfg.noise = 0.1;
        mfg.eta = 0.0;
        mfg.gbar = gbar;
        mfg.arrival_pmf = {{a, 1.0}};
        const double h = path_loss(1.0, geom.alpha);
        mfg.h_min = h;
        mfg.h_max = 2.0 * h;
        mfg.h0_weights = {1.0, 0.0};
        mfg.Ns = 16 * static_cast<int>(a) + 32;
        mfg.Nh = 2;
        mfg.Nt = 2 * mfg.Ns;
        const auto sol = pdhg_solve(mfg);
        csv.row({detail::fmt(a), detail::fmt(lambda), detail::fmt(gbar),
                 detail::fmt(sol.total_power), detail::fmt(sol.cleared_mass)});
      }
    }
    return path;
  }

  if (name == "fig4_iesh_s_lambda") {
    csv.comment("transport capacity of the fading-free equivalent single-hop network vs intensity");
    csv.comment("columns: lambda, p_ave, r0_star, rate, capacity");
    csv.row({"lambda", "p_ave", "r0_star", "rate", "capacity"});
    for (double p_ave : {1.0, 4.0}) {
      for (double lambda : {40.0, 80.0, 160.0, 320.0, 640.0}) {
        NetworkConfig cfg;
        cfg.lambda = lambda;
        cfg.d0 = 0.005;
        cfg.Nm = 200;  // 1 m reach
        cfg.NmI = 200;
        cfg.alpha = 3.0;
        cfg.noise = 1.0;
        cfg.fading_levels = {{1.0, 1.0}};
        cfg.p_max = 1e6;
        cfg.p_ave = p_ave;
        cfg.Na = 1;
        cfg.Nc = 2;
        IeshOptions opts_i;
        opts_i.r_min_bracket = 0.02;
        opts_i.r_max_bracket = 0.9;
        opts_i.delta_r = 0.01;
        const auto res = iesh_s_capacity(cfg, opts_i);
        csv.row({detail::fmt(lambda), detail::fmt(p_ave), detail::fmt(res.r0_star),
                 detail::fmt(res.rate_star), detail::fmt(res.transport_capacity)});
      }
    }
    return path;
  }

  if (name == "fig5_iesh_s_rmin") {
    csv.comment("transport capacity vs the minimum allowed hop length");
    csv.comment("columns: lambda, r_min_bracket, r0_star, capacity");
    csv.row({"lambda", "r_min_bracket", "r0_star", "capacity"});
    for (double lambda : {160.0, 320.0}) {
      for (double rmin : {0.05, 0.1, 0.2, 0.3, 0.45}) {
        NetworkConfig cfg;
        cfg.lambda = lambda;
        cfg.d0 = 0.005;
        cfg.Nm = 200;
        cfg.NmI = 200;
        cfg.alpha = 3.0;
        cfg.noise = 1.0;
        cfg.fading_levels = {{1.0, 1.0}};
        cfg.p_max = 1e6;
        cfg.p_ave = 2.0;
        cfg.Na = 1;
        cfg.Nc = 2;
        IeshOptions opts_i;
        opts_i.r_min_bracket = rmin;
        opts_i.r_max_bracket = 0.9;
        opts_i.delta_r = 0.01;
        const auto res = iesh_s_capacity(cfg, opts_i);
        csv.row({detail::fmt(lambda), detail::fmt(rmin), detail::fmt(res.r0_star),
                 detail::fmt(res.transport_capacity)});
      }
    }
    return path;
  }

  if (name == "fig7_iesh_g_lambda") {
    csv.comment("transport capacity of the fading-aware equivalent single-hop network vs intensity");
    csv.comment("columns: lambda, r0_star, rate, capacity");
    csv.row({"lambda", "r0_star", "rate", "capacity"});
    for (double lambda : {5.0, 10.0, 20.0}) {
      NetworkConfig cfg;
      cfg.lambda = lambda;
      cfg.d0 = 0.1;
      cfg.Nm = 10;
      cfg.NmI = 12;
      cfg.alpha = 3.0;
      cfg.noise = 1.0;
      cfg.fading_levels = rayleigh_fading_levels(4);
      cfg.p_max = 0.05;
      cfg.r_min = 0.0;
      cfg.Na = 1;
      cfg.Nc = 2;
      IeshOptions opts_i;
      opts_i.r_min_bracket = 0.15;
      opts_i.r_max_bracket = 0.8;
      opts_i.ds_bins = 5;
      opts_i.delta_r = 0.005;
      opts_i.mapel_delta0 = 0.05;
      const auto res = iesh_g_capacity(cfg, opts_i);
      csv.row({detail::fmt(lambda), detail::fmt(res.r0_star), detail::fmt(res.rate_star),
               detail::fmt(res.transport_capacity)});
    }
    return path;
  }

  throw ConfigError("unknown preset: " + name);
}

}  // namespace mfnet
