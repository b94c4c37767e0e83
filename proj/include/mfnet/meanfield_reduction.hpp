#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfnet/channel_model.hpp"
#include "mfnet/common.hpp"

namespace mfnet {

/// Binomial law of the number of interferers holding one particular
/// interference-gain state, out of Ni total.
inline std::vector<double> interference_count_pmf(double thetaI, int Ni) {
  if (thetaI < 0.0 || thetaI > 1.0)
    throw ConfigError("interference_count_pmf: probability outside [0,1]");
  if (Ni < 0) throw ConfigError("interference_count_pmf: negative Ni");
  std::vector<double> pmf(static_cast<std::size_t>(Ni) + 1, 0.0);
  // Recurrence p(n+1) = p(n) * (Ni-n)/(n+1) * theta/(1-theta); log-space seed
  // keeps large Ni from underflowing to an all-zero pmf.
  if (thetaI == 0.0) {
    pmf[0] = 1.0;
    return pmf;
  }
  if (thetaI == 1.0) {
    pmf.back() = 1.0;
    return pmf;
  }
  const double log_ratio = std::log(thetaI) - std::log1p(-thetaI);
  double log_p = Ni * std::log1p(-thetaI);
  for (int n = 0; n <= Ni; ++n) {
    pmf[static_cast<std::size_t>(n)] = std::exp(log_p);
    if (n < Ni)
      log_p += std::log(static_cast<double>(Ni - n)) -
               std::log(static_cast<double>(n + 1)) + log_ratio;
  }
  return pmf;
}

struct CountQuantization {
  std::vector<std::pair<int, int>> intervals;  // inclusive [lo, hi] count ranges
  std::vector<double> centroids;               // conditional means
  std::vector<double> masses;
};

/// Greedy equal-probability partition of a discrete count pmf: an interval
/// closes once its cumulative mass reaches l/Nc (or when the remaining
/// support is needed by the remaining intervals). Centroids are exact
/// conditional means, not the paper's Nc-scaled sums, so the construction
/// degrades gracefully when the masses cannot be exactly 1/Nc.
inline CountQuantization quantize_counts(const std::vector<double>& pmf, int Nc) {
  if (Nc < 1) throw ConfigError("quantize_counts: Nc must be >= 1");
  const int support = static_cast<int>(pmf.size());
  if (Nc > support)
    throw ConfigError("quantize_counts: Nc exceeds the pmf support size");
  CountQuantization q;
  double cum = 0.0;
  int lo = 0;
  for (int l = 1; l <= Nc; ++l) {
    const double target = static_cast<double>(l) / Nc;
    double mass = 0.0;
    double weighted = 0.0;
    int hi = lo;
    for (int i = lo; i < support; ++i) {
      hi = i;
      mass += pmf[static_cast<std::size_t>(i)];
      weighted += i * pmf[static_cast<std::size_t>(i)];
      cum += pmf[static_cast<std::size_t>(i)];
      const int points_left = support - i - 1;
      const int intervals_left = Nc - l;
      if (l == Nc) continue;              // last interval takes the rest
      if (cum >= target - 1e-15) break;
      if (points_left <= intervals_left) break;
    }
    q.intervals.emplace_back(lo, hi);
    q.masses.push_back(mass);
    q.centroids.push_back(mass > 0.0 ? weighted / mass : static_cast<double>(lo));
    lo = hi + 1;
  }
  return q;
}

/// Group tables of the interference-count quantization: one group per
/// combination of intervals over the Na strongest interference-gain states.
struct InterferenceGroupTable {
  int Ni = 0;                                   // total interfering nodes
  int Na = 0;
  int Nc = 1;
  int NI = 1;                                   // Nc^Na groups
  double xi = 1.0;                              // uniform group prior 1/NI
  std::vector<std::vector<double>> abar;        // Na x Nc centroids
  std::vector<std::vector<std::pair<int, int>>> intervals;  // Na x Nc
  std::vector<std::vector<int>> u;              // NI x Na, entries 1..Nc
  std::vector<double> Nr;                       // residual node count per group
  std::vector<double> gainsI;                   // sorted interference support
  std::vector<double> probsI;

  double residual_gain_tail() const {
    double t = 0.0;
    for (std::size_t m = static_cast<std::size_t>(Na); m < gainsI.size(); ++m)
      t += probsI[m] * gainsI[m];
    return t;
  }
};

/// k = 1 + sum_t (u_t - 1) Nc^(t-1); the base-Nc encoding made bijective
/// onto 1..Nc^Na.
inline int group_index_of(const std::vector<int>& u, int Nc) {
  int k = 0;
  int scale = 1;
  for (int ut : u) {
    k += (ut - 1) * scale;
    scale *= Nc;
  }
  return k + 1;
}

inline std::vector<int> intervals_of_group(int k, int Na, int Nc) {
  std::vector<int> u(static_cast<std::size_t>(Na));
  int rem = k - 1;
  for (int t = 0; t < Na; ++t) {
    u[static_cast<std::size_t>(t)] = rem % Nc + 1;
    rem /= Nc;
  }
  return u;
}

inline int interferer_count(const NetworkConfig& config) {
  const double r = config.NmI * config.d0;
  return static_cast<int>(std::ceil(config.lambda * kPi * r * r));
}

inline InterferenceGroupTable build_group_table(const NetworkConfig& config,
                                                const GainDistribution& interference_dist) {
  config.validate();
  const int NgI = static_cast<int>(interference_dist.gains.size());
  if (config.Na > NgI)
    throw ConfigError("build_group_table: Na exceeds the interference support size");
  double groups = 1.0;
  for (int t = 0; t < config.Na; ++t) {
    groups *= config.Nc;
    if (groups > static_cast<double>(config.group_cap))
      throw SizeError("build_group_table: Nc^Na exceeds the group cap");
  }

  InterferenceGroupTable table;
  table.Ni = interferer_count(config);
  table.Na = config.Na;
  table.Nc = config.Nc;
  table.NI = static_cast<int>(groups);
  table.xi = 1.0 / table.NI;
  table.gainsI = interference_dist.gains;
  table.probsI = interference_dist.probs;

  for (int t = 0; t < config.Na; ++t) {
    const auto pmf = interference_count_pmf(interference_dist.probs[static_cast<std::size_t>(t)],
                                            table.Ni);
    auto q = quantize_counts(pmf, config.Nc);
    table.abar.push_back(std::move(q.centroids));
    table.intervals.push_back(std::move(q.intervals));
  }

  table.u.resize(static_cast<std::size_t>(table.NI));
  table.Nr.resize(static_cast<std::size_t>(table.NI));
  for (int k = 1; k <= table.NI; ++k) {
    auto u = intervals_of_group(k, table.Na, table.Nc);
    double tracked = 0.0;
    for (int t = 0; t < table.Na; ++t)
      tracked += table.abar[static_cast<std::size_t>(t)]
                           [static_cast<std::size_t>(u[static_cast<std::size_t>(t)] - 1)];
    // Independence across tracked indices can overshoot Ni; clamp at zero.
    table.Nr[static_cast<std::size_t>(k - 1)] = std::max(0.0, table.Ni - tracked);
    table.u[static_cast<std::size_t>(k - 1)] = std::move(u);
  }
  return table;
}

/// Assign a measured interference-count vector to its group, clamping counts
/// that fall outside every interval to the nearest one.
inline int assign_group(const InterferenceGroupTable& table, const std::vector<int>& counts) {
  std::vector<int> u(static_cast<std::size_t>(table.Na));
  for (int t = 0; t < table.Na; ++t) {
    const auto& ivs = table.intervals[static_cast<std::size_t>(t)];
    const int c = counts[static_cast<std::size_t>(t)];
    int pick = static_cast<int>(ivs.size());
    for (std::size_t l = 0; l < ivs.size(); ++l) {
      if (c <= ivs[l].second) {
        pick = static_cast<int>(l) + 1;
        break;
      }
    }
    if (pick > static_cast<int>(ivs.size())) pick = static_cast<int>(ivs.size());
    u[static_cast<std::size_t>(t)] = pick;
  }
  return group_index_of(u, table.Nc);
}

struct PosteriorTables {
  std::vector<std::vector<double>> Q1;  // Na x NI: gain index -> group
  std::vector<std::vector<double>> Q2;  // NI x Na: group -> gain index
  std::vector<double> q;                // NI: residual-conditioned group law
};

inline PosteriorTables posterior_tables(const InterferenceGroupTable& table,
                                        const GainDistribution& interference_dist) {
  (void)interference_dist;
  PosteriorTables post;
  const int NI = table.NI;
  const int Na = table.Na;

  post.Q2.assign(static_cast<std::size_t>(NI), std::vector<double>(static_cast<std::size_t>(Na), 0.0));
  for (int i = 0; i < NI; ++i) {
    double total = 0.0;
    for (int t = 0; t < Na; ++t)
      total += table.abar[static_cast<std::size_t>(t)]
                         [static_cast<std::size_t>(table.u[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] - 1)];
    for (int t = 0; t < Na; ++t) {
      const double a = table.abar[static_cast<std::size_t>(t)]
                                 [static_cast<std::size_t>(table.u[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] - 1)];
      post.Q2[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] =
          total > 0.0 ? a / total : 1.0 / Na;  // empty group: keep the row stochastic
    }
  }

  post.Q1.assign(static_cast<std::size_t>(Na), std::vector<double>(static_cast<std::size_t>(NI), 0.0));
  for (int t = 0; t < Na; ++t) {
    double col = 0.0;
    for (int l = 0; l < NI; ++l)
      col += table.abar[static_cast<std::size_t>(t)]
                       [static_cast<std::size_t>(table.u[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)] - 1)];
    if (col <= 0.0)
      throw NumericalError("posterior_tables: degenerate distribution, tracked gain never occurs");
    for (int l = 0; l < NI; ++l)
      post.Q1[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] =
          table.abar[static_cast<std::size_t>(t)]
                    [static_cast<std::size_t>(table.u[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)] - 1)] / col;
  }

  double nr_total = 0.0;
  for (double nr : table.Nr) nr_total += nr;
  post.q.resize(static_cast<std::size_t>(NI));
  for (int l = 0; l < NI; ++l)
    post.q[static_cast<std::size_t>(l)] =
        nr_total > 0.0 ? table.Nr[static_cast<std::size_t>(l)] / nr_total : 1.0 / NI;
  return post;
}

/// The reduced weighted-throughput-maximization problem: one consolidated
/// group per (interference group, direct-gain state) pair.
struct MeanFieldWtm {
  std::vector<double> omega;  // weights, sum to 1
  std::vector<double> g;      // direct gains per consolidated group
  std::vector<double> Gt;     // row-major; Gt[j*N + i] = equivalent gain, group j -> group i
  double noise = 1.0;
  double p_max = 1.0;
  double r_min = 0.0;
  std::optional<double> p_ave;
  bool strict_gamma_min = false;

  int size() const { return static_cast<int>(omega.size()); }

  double interference_at(int i, const std::vector<double>& p) const {
    const int n = size();
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += p[static_cast<std::size_t>(j)] * Gt[static_cast<std::size_t>(j) * n + i];
    return s;
  }

  /// Minimum SINR implied by the rate floor. The Shannon-consistent form is
  /// the default; the strict flag selects the 2^(r-1) variant instead.
  double gamma_min() const {
    return strict_gamma_min ? std::pow(2.0, r_min - 1.0) : std::pow(2.0, r_min) - 1.0;
  }
};

inline int consolidate_index(int group, int state, int Ng) {
  return (group - 1) * Ng + state;  // group 1-based, state 0-based; result 0-based
}

inline MeanFieldWtm build_wtm(const NetworkConfig& config,
                              const GainDistribution& direct_dist,
                              const InterferenceGroupTable& table,
                              const PosteriorTables& post) {
  const int Ng = static_cast<int>(direct_dist.gains.size());
  const int NI = table.NI;
  const int Nt = NI * Ng;
  if (static_cast<int>(post.q.size()) != NI)
    throw NumericalError("build_wtm: posterior/group dimension mismatch");

  MeanFieldWtm wtm;
  wtm.noise = config.noise;
  wtm.p_max = config.p_max;
  wtm.r_min = config.r_min;
  wtm.p_ave = config.p_ave;
  wtm.strict_gamma_min = config.strict_gamma_min;
  wtm.omega.resize(static_cast<std::size_t>(Nt));
  wtm.g.resize(static_cast<std::size_t>(Nt));
  wtm.Gt.assign(static_cast<std::size_t>(Nt) * Nt, 0.0);

  for (int i = 1; i <= NI; ++i) {
    for (int j = 0; j < Ng; ++j) {
      const int k = consolidate_index(i, j, Ng);
      wtm.omega[static_cast<std::size_t>(k)] = table.xi * direct_dist.probs[static_cast<std::size_t>(j)];
      wtm.g[static_cast<std::size_t>(k)] = direct_dist.gains[static_cast<std::size_t>(j)];
    }
  }

  // Equivalent interference gain from a transmitter in consolidated group
  // (l, m) to a destination in consolidated group (i, j). The tracked term
  // distributes each dominant count over source groups by the Bayes posterior
  // Q1 and over source gain states by theta; the residual term does the same
  // with the Nr-proportional posterior q.
  const double tail = table.residual_gain_tail();
  for (int i = 1; i <= NI; ++i) {
    for (int l = 1; l <= NI; ++l) {
      double from_l = 0.0;
      for (int t = 0; t < table.Na; ++t) {
        const double a = table.abar[static_cast<std::size_t>(t)]
                                   [static_cast<std::size_t>(table.u[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(t)] - 1)];
        from_l += a * post.Q1[static_cast<std::size_t>(t)][static_cast<std::size_t>(l - 1)] *
                  table.gainsI[static_cast<std::size_t>(t)];
      }
      from_l += table.Nr[static_cast<std::size_t>(i - 1)] * post.q[static_cast<std::size_t>(l - 1)] * tail;
      for (int j = 0; j < Ng; ++j) {
        for (int m = 0; m < Ng; ++m) {
          const int dest = consolidate_index(i, j, Ng);
          const int src = consolidate_index(l, m, Ng);
          wtm.Gt[static_cast<std::size_t>(src) * Nt + dest] =
              from_l * direct_dist.probs[static_cast<std::size_t>(m)];
        }
      }
    }
  }
  return wtm;
}

/// Full pipeline from a scenario to the reduced problem.
inline MeanFieldWtm wtm_from_config(const NetworkConfig& config) {
  const auto direct = direct_gain_distribution(config);
  const auto interf = interference_gain_distribution(config);
  const auto table = build_group_table(config, interf);
  const auto post = posterior_tables(table, interf);
  return build_wtm(config, direct, table, post);
}

// ---- serialization ----

inline nlohmann::json wtm_to_json(const MeanFieldWtm& w) {
  nlohmann::json j;
  j["omega"] = w.omega;
  j["g"] = w.g;
  j["Gtilde"] = w.Gt;
  j["noise"] = w.noise;
  j["p_max"] = w.p_max;
  j["r_min"] = w.r_min;
  if (w.p_ave) j["p_ave"] = *w.p_ave;
  if (w.strict_gamma_min) j["strict_gamma_min"] = true;
  return j;
}

inline MeanFieldWtm wtm_from_json(const nlohmann::json& j) {
  MeanFieldWtm w;
  w.omega = j.at("omega").get<std::vector<double>>();
  w.g = j.at("g").get<std::vector<double>>();
  w.Gt = j.at("Gtilde").get<std::vector<double>>();
  w.noise = j.at("noise").get<double>();
  w.p_max = j.at("p_max").get<double>();
  w.r_min = j.at("r_min").get<double>();
  if (j.contains("p_ave") && !j.at("p_ave").is_null()) w.p_ave = j.at("p_ave").get<double>();
  w.strict_gamma_min = j.value("strict_gamma_min", false);
  const std::size_t n = w.omega.size();
  if (w.g.size() != n || w.Gt.size() != n * n)
    throw ConfigError("MeanFieldWtm JSON: inconsistent dimensions");
  return w;
}

}  // namespace mfnet
