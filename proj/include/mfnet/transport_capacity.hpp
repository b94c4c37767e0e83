#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfnet/common.hpp"
#include "mfnet/meanfield_reduction.hpp"
#include "mfnet/routing_oepa.hpp"
#include "mfnet/wtm_solver.hpp"

namespace mfnet {

struct CapacityResult {
  double r0_star = 0.0;
  double rate_star = 0.0;
  double transport_capacity = 0.0;      // r0_star * rate_star
  double multihop_rate = 0.0;           // converted network-wide average
  bool feasible = true;
  std::vector<std::pair<double, double>> trace;  // probed (r0, rate)
};

/// Network-average multi-hop rate from the equivalent single-hop rate.
inline double multihop_rate_from_transport(double rI, double r0, double d0, int Nm) {
  if (Nm < 1) throw ConfigError("multihop_rate_from_transport: Nm must be >= 1");
  return 2.0 * r0 * rI / (d0 * d0 * Nm);
}

/// Reduction over explicitly supplied direct/interference laws (the IESH
/// problems reuse the channel-model pipeline with substituted supports).
inline MeanFieldWtm reduce_custom(const NetworkConfig& config, const GainDistribution& direct,
                                  const GainDistribution& interference) {
  const auto table = build_group_table(config, interference);
  const auto post = posterior_tables(table, interference);
  return build_wtm(config, direct, table, post);
}

namespace detail {

inline GainDistribution sorted_custom(std::vector<double> gains, std::vector<double> probs,
                                      GainDistribution::Kind kind) {
  std::vector<std::size_t> order(gains.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (gains[a] != gains[b]) return gains[a] > gains[b];
    return probs[a] > probs[b];
  });
  GainDistribution d;
  d.kind = kind;
  for (std::size_t i : order) {
    d.gains.push_back(gains[i]);
    d.probs.push_back(probs[i]);
  }
  return d;
}

}  // namespace detail

/// Fading-free equivalent single-hop problem at hop length r0: direct gains
/// from the quantized hop-distance law, ring-law interference, average-power
/// cap active.
inline MeanFieldWtm iesh_s_problem(const NetworkConfig& net, double r0, int ds_bins = 21) {
  if (!net.p_ave) throw ConfigError("iesh_s_problem: p_ave must be set");
  const auto [eta_n, eta_r] = hop_portions(r0, net.d0, net.Nm);
  (void)eta_r;
  const auto grid = default_ds_grid(r0, net.lambda, ds_bins);
  const auto hops = single_hop_pmf(r0, net.lambda, grid, eta_n);

  std::vector<double> dgains(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) dgains[i] = path_loss(grid[i], net.alpha);
  const auto direct = detail::sorted_custom(dgains, hops.eps, GainDistribution::Kind::direct);

  const auto gammaI = distance_pmf(net.NmI);
  std::vector<double> igains(static_cast<std::size_t>(net.NmI));
  for (int a = 1; a <= net.NmI; ++a)
    igains[static_cast<std::size_t>(a - 1)] = path_loss(a * net.d0, net.alpha);
  const auto interference =
      detail::sorted_custom(igains, gammaI, GainDistribution::Kind::interference);

  NetworkConfig cfg = net;
  cfg.r_min = 0.0;  // the common rate is the search variable
  cfg.fading_levels = {{1.0, 1.0}};
  auto w = reduce_custom(cfg, direct, interference);
  return w;
}

/// Fading-aware variant: direct gains are fading x hop-distance products,
/// per-link power caps, rate floor from the config.
inline MeanFieldWtm iesh_g_problem(const NetworkConfig& net, double r0, int ds_bins = 21) {
  const auto [eta_n, eta_r] = hop_portions(r0, net.d0, net.Nm);
  (void)eta_r;
  const auto grid = default_ds_grid(r0, net.lambda, ds_bins);
  const auto hops = single_hop_pmf(r0, net.lambda, grid, eta_n);

  std::vector<double> dgains, dprobs;
  for (const auto& f : net.fading_levels) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      dgains.push_back(f.h * path_loss(grid[i], net.alpha));
      dprobs.push_back(f.beta * hops.eps[i]);
    }
  }
  const auto direct = detail::sorted_custom(dgains, dprobs, GainDistribution::Kind::direct);

  std::vector<double> igains, iprobs;
  const auto gammaI = distance_pmf(net.NmI);
  for (const auto& f : net.fading_levels) {
    for (int a = 1; a <= net.NmI; ++a) {
      igains.push_back(f.h * path_loss(a * net.d0, net.alpha));
      iprobs.push_back(f.beta * gammaI[static_cast<std::size_t>(a - 1)]);
    }
  }
  const auto interference =
      detail::sorted_custom(igains, iprobs, GainDistribution::Kind::interference);

  NetworkConfig cfg = net;
  cfg.p_ave.reset();
  return reduce_custom(cfg, direct, interference);
}

/// Largest common rate every group can sustain under the power caps:
/// exponential bracketing from R = 1, then bisection to 1e-4 bits/s/Hz.
inline double max_common_rate(const MeanFieldWtm& problem) {
  auto feasible_at = [&](double rate) {
    MeanFieldWtm w = problem;
    w.r_min = rate;
    try {
      return feasibility_check(w).feasible;
    } catch (const NumericalError&) {
      return false;
    }
  };
  if (!feasible_at(1e-9)) return 0.0;

  double lo = 0.0;
  double hi = 1.0;
  int doublings = 0;
  while (feasible_at(hi)) {
    lo = hi;
    hi *= 2.0;
    if (++doublings > 16) break;  // cap 2^16
  }
  while (hi - lo > 1e-4) {
    const double mid = 0.5 * (lo + hi);
    if (feasible_at(mid))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

/// Golden-section argmax of a unimodal scalar function, tau = 0.618.
template <typename F>
double golden_section_argmax(F&& f, double lo, double hi, double tol) {
  const double tau = 0.618;
  int guard = 0;
  while (hi - lo > tol && guard++ < 200) {
    const double rl = lo + (1.0 - tau) * (hi - lo);
    const double ru = lo + tau * (hi - lo);
    if (f(rl) > f(ru))
      hi = ru;
    else
      lo = rl;
  }
  return 0.5 * (lo + hi);
}

namespace detail {

template <typename F>
CapacityResult golden_section_max(F&& value, double lo, double hi, double delta_r,
                                  std::vector<std::pair<double, double>>* trace) {
  // tau fixed at the printed 0.618. The shrink keeps the better probe inside
  // the bracket (contracting to [lo, ru] or [rl, hi]); collapsing to [ru, hi]
  // can discard the maximizer when the right probe wins.
  const double tau = 0.618;
  CapacityResult res;
  int guard = 0;
  while (hi - lo > delta_r && guard++ < 200) {
    const double rl = lo + (1.0 - tau) * (hi - lo);
    const double ru = lo + tau * (hi - lo);
    const double fl = value(rl);
    const double fu = value(ru);
    if (trace) {
      trace->emplace_back(rl, fl);
      trace->emplace_back(ru, fu);
    }
    if (rl * fl > ru * fu)
      hi = ru;
    else
      lo = rl;
  }
  res.r0_star = 0.5 * (lo + hi);
  return res;
}

}  // namespace detail

struct IeshOptions {
  double r_min_bracket = 0.0;
  double r_max_bracket = 0.0;
  double delta_r = 0.0;  // 0: defaults to 0.01 * d0
  int ds_bins = 21;
  double mapel_delta0 = 0.01;
};

inline CapacityResult iesh_s_capacity(const NetworkConfig& net, IeshOptions opts) {
  if (!(opts.r_min_bracket > 0.0) || !(opts.r_max_bracket > opts.r_min_bracket))
    throw ConfigError("iesh_s_capacity: need 0 < r_min_bracket < r_max_bracket");
  const double delta_r = opts.delta_r > 0.0 ? opts.delta_r : 0.01 * net.d0;

  auto rate_at = [&](double r0) { return max_common_rate(iesh_s_problem(net, r0, opts.ds_bins)); };

  std::vector<std::pair<double, double>> trace;
  auto res = detail::golden_section_max(rate_at, opts.r_min_bracket, opts.r_max_bracket, delta_r,
                                        &trace);
  res.rate_star = rate_at(res.r0_star);
  res.transport_capacity = res.r0_star * res.rate_star;
  res.multihop_rate = multihop_rate_from_transport(res.rate_star, res.r0_star, net.d0, net.Nm);
  res.trace = std::move(trace);
  res.feasible = res.rate_star > 0.0;
  for (const auto& [r0, rate] : res.trace) res.feasible = res.feasible || rate > 0.0;
  return res;
}

inline CapacityResult iesh_g_capacity(const NetworkConfig& net, IeshOptions opts) {
  if (!(opts.r_min_bracket > 0.0) || !(opts.r_max_bracket > opts.r_min_bracket))
    throw ConfigError("iesh_g_capacity: need 0 < r_min_bracket < r_max_bracket");
  const double delta_r = opts.delta_r > 0.0 ? opts.delta_r : 0.01 * net.d0;

  auto rate_at = [&](double r0) {
    const auto problem = iesh_g_problem(net, r0, opts.ds_bins);
    try {
      if (!feasibility_check(problem).feasible) return 0.0;
      return mapel_solve(problem, opts.mapel_delta0).rate;
    } catch (const ConfigError&) {
      return 0.0;
    }
  };

  std::vector<std::pair<double, double>> trace;
  auto res = detail::golden_section_max(rate_at, opts.r_min_bracket, opts.r_max_bracket, delta_r,
                                        &trace);
  res.rate_star = rate_at(res.r0_star);
  res.transport_capacity = res.r0_star * res.rate_star;
  res.multihop_rate = multihop_rate_from_transport(res.rate_star, res.r0_star, net.d0, net.Nm);
  res.trace = std::move(trace);
  res.feasible = res.rate_star > 0.0;
  return res;
}

inline nlohmann::json capacity_result_to_json(const CapacityResult& r) {
  nlohmann::json j;
  j["r0_star"] = r.r0_star;
  j["rate_star"] = r.rate_star;
  j["transport_capacity"] = r.transport_capacity;
  j["multihop_rate"] = r.multihop_rate;
  j["feasible"] = r.feasible;
  nlohmann::json t = nlohmann::json::array();
  for (const auto& [r0, rate] : r.trace) t.push_back({r0, rate});
  j["trace"] = t;
  return j;
}

inline void write_capacity_trace_csv(const CapacityResult& r, std::ostream& os) {
  os << "r0,rate,capacity\n";
  char buf[96];
  for (const auto& [r0, rate] : r.trace) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g\n", r0, rate, r0 * rate);
    os << buf;
  }
}

}  // namespace mfnet
