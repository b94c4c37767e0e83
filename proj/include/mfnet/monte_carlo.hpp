#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include <json.hpp>

#include "mfnet/channel_model.hpp"
#include "mfnet/common.hpp"
#include "mfnet/meanfield_reduction.hpp"
#include "mfnet/routing_oepa.hpp"
#include "mfnet/rng.hpp"

namespace mfnet {

/// Power lookup per (interference group, direct-gain state).
struct PowerPolicy {
  int NI = 1;
  int Ng = 1;
  std::vector<double> table;  // consolidated layout, NI * Ng

  static PowerPolicy uniform(int NI, int Ng, double power) {
    PowerPolicy p;
    p.NI = NI;
    p.Ng = Ng;
    p.table.assign(static_cast<std::size_t>(NI) * Ng, power);
    return p;
  }

  static PowerPolicy from_powers(const std::vector<double>& consolidated, int NI, int Ng) {
    if (static_cast<int>(consolidated.size()) != NI * Ng)
      throw ConfigError("PowerPolicy: dimension mismatch");
    PowerPolicy p;
    p.NI = NI;
    p.Ng = Ng;
    p.table = consolidated;
    return p;
  }

  double at(int group, int state) const {
    const int k = consolidate_index(group, state, Ng);
    if (k < 0 || k >= static_cast<int>(table.size()))
      throw ConfigError("PowerPolicy: group/state outside the table");
    return table[static_cast<std::size_t>(k)];
  }

  double max_power() const {
    double m = 0.0;
    for (double v : table) m = std::max(m, v);
    return m;
  }
};

struct SimReport {
  int trials = 0;
  double mean_rate = 0.0;
  double rate_stderr = 0.0;
  double mean_interference = 0.0;
  double interference_stderr = 0.0;
  std::vector<double> rate_histogram;  // counts over uniform bins on [hist_lo, hist_hi]
  double hist_lo = 0.0;
  double hist_hi = 1.0;
  std::uint64_t seed = 0;
};

namespace detail {

/// Bucket grid with wraparound lookups on the square torus.
class TorusGrid {
 public:
  TorusGrid(const std::vector<Point>& pts, double side, double radius)
      : pts_(pts), side_(side) {
    ncell_ = std::max(1, static_cast<int>(side / radius));
    cell_ = side / ncell_;
    buckets_.assign(static_cast<std::size_t>(ncell_) * ncell_, {});
    for (std::size_t i = 0; i < pts.size(); ++i)
      buckets_[bucket(pts[i])].push_back(static_cast<int>(i));
  }

  template <typename F>
  void for_each_within(const Point& q, double radius, F&& fn) const {
    if (ncell_ < 3) {
      for (std::size_t i = 0; i < pts_.size(); ++i) {
        const double d = torus_distance(pts_[i], q, side_);
        if (d <= radius) fn(static_cast<int>(i), d);
      }
      return;
    }
    const int reach = static_cast<int>(radius / cell_) + 1;
    const int cx = static_cast<int>(q.x / cell_) % ncell_;
    const int cy = static_cast<int>(q.y / cell_) % ncell_;
    for (int dx = -reach; dx <= reach; ++dx) {
      for (int dy = -reach; dy <= reach; ++dy) {
        const int x = ((cx + dx) % ncell_ + ncell_) % ncell_;
        const int y = ((cy + dy) % ncell_ + ncell_) % ncell_;
        for (int idx : buckets_[static_cast<std::size_t>(y) * ncell_ + x]) {
          const double d = torus_distance(pts_[static_cast<std::size_t>(idx)], q, side_);
          if (d <= radius) fn(idx, d);
        }
      }
    }
  }

 private:
  std::size_t bucket(const Point& p) const {
    const int x = std::min(static_cast<int>(p.x / cell_), ncell_ - 1);
    const int y = std::min(static_cast<int>(p.y / cell_), ncell_ - 1);
    return static_cast<std::size_t>(y) * ncell_ + x;
  }

  const std::vector<Point>& pts_;
  double side_;
  int ncell_ = 1;
  double cell_ = 1.0;
  std::vector<std::vector<int>> buckets_;
};

struct TrialResult {
  double rate = 0.0;
  double interference = 0.0;
};

/// Deterministic parallel map over trials: results land in trial order, so
/// the reduction is independent of the thread count.
template <typename F>
std::vector<TrialResult> run_trials(int trials, F&& one_trial) {
  std::vector<TrialResult> results(static_cast<std::size_t>(trials));
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const int workers = static_cast<int>(std::min<unsigned>(hw, 16));
  if (workers <= 1 || trials < 64) {
    for (int t = 0; t < trials; ++t) results[static_cast<std::size_t>(t)] = one_trial(t);
    return results;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  const int chunk = 64;
  for (int wk = 0; wk < workers; ++wk) {
    pool.emplace_back([&]() {
      while (true) {
        const int begin = next.fetch_add(chunk);
        if (begin >= trials) break;
        const int end = std::min(trials, begin + chunk);
        for (int t = begin; t < end; ++t) results[static_cast<std::size_t>(t)] = one_trial(t);
      }
    });
  }
  for (auto& th : pool) th.join();
  return results;
}

inline SimReport aggregate(const std::vector<TrialResult>& results, std::uint64_t seed,
                           double hist_hi) {
  SimReport rep;
  rep.trials = static_cast<int>(results.size());
  rep.seed = seed;
  rep.hist_lo = 0.0;
  rep.hist_hi = hist_hi;
  rep.rate_histogram.assign(50, 0.0);
  double s1 = 0.0, s2 = 0.0, i1 = 0.0, i2 = 0.0;
  for (const auto& r : results) {
    s1 += r.rate;
    s2 += r.rate * r.rate;
    i1 += r.interference;
    i2 += r.interference * r.interference;
    int bin = static_cast<int>(50.0 * r.rate / std::max(hist_hi, 1e-300));
    bin = std::clamp(bin, 0, 49);
    rep.rate_histogram[static_cast<std::size_t>(bin)] += 1.0;
  }
  const double n = std::max(1.0, static_cast<double>(rep.trials));
  rep.mean_rate = s1 / n;
  rep.mean_interference = i1 / n;
  if (rep.trials > 1) {
    rep.rate_stderr = std::sqrt(std::max(0.0, s2 / n - rep.mean_rate * rep.mean_rate) / (n - 1));
    rep.interference_stderr =
        std::sqrt(std::max(0.0, i2 / n - rep.mean_interference * rep.mean_interference) / (n - 1));
  }
  return rep;
}

}  // namespace detail

/// Full per-node simulation of the typical link: one tagged receiver at the
/// area center, every other node an active transmitter whose power follows
/// its own measured (group, state). Realized SINR is computed against every
/// actual interferer within the interference range.
inline SimReport simulate_massive(const NetworkConfig& config, const PowerPolicy& policy,
                                  int trials, std::uint64_t seed) {
  config.validate();
  const double radius = config.NmI * config.d0;
  if (config.area_side < 2.0 * radius)
    throw ConfigError("simulate_massive: area_side must be at least twice the interference range");

  const auto direct = direct_gain_distribution(config);
  const auto interf = interference_gain_distribution(config);
  const auto table = build_group_table(config, interf);
  const int Ng = static_cast<int>(direct.gains.size());
  if (policy.NI != table.NI || policy.Ng != Ng)
    throw ConfigError("simulate_massive: policy does not cover every (group, state) pair");

  const auto direct_map = sorted_index_map(config, config.Nm);
  const auto interf_map = sorted_index_map(config, config.NmI);
  std::vector<double> beta_cum;
  {
    std::vector<double> beta;
    for (const auto& f : config.fading_levels) beta.push_back(f.beta);
    beta_cum = cumulative_weights(beta);
  }
  const double L = config.area_side;
  const Point center{L / 2.0, L / 2.0};
  const double reach = config.Nm * config.d0;

  auto one_trial = [&](int t) {
    RandomStream rng = RandomStream::substream(seed, static_cast<std::uint64_t>(t));
    const auto count = rng.poisson(config.lambda * L * L);
    std::vector<Point> nodes(count);
    for (auto& p : nodes) {
      p.x = rng.uniform(0.0, L);
      p.y = rng.uniform(0.0, L);
    }
    // The tagged transmitter joins the population; its receiver is the probe.
    const double d_tag = reach * std::sqrt(rng.uniform());
    const double ang = rng.uniform(0.0, 2.0 * kPi);
    Point tagged_src{center.x + d_tag * std::cos(ang), center.y + d_tag * std::sin(ang)};
    tagged_src.x = std::fmod(tagged_src.x + L, L);
    tagged_src.y = std::fmod(tagged_src.y + L, L);
    const int tagged_idx = static_cast<int>(nodes.size());
    nodes.push_back(tagged_src);

    detail::TorusGrid grid(nodes, L, radius);

    const int tag_fading = static_cast<int>(rng.categorical(beta_cum));
    const int tag_ring = std::min(ring_index(d_tag, config.d0), config.Nm);
    const int tag_state = direct_map[static_cast<std::size_t>(tag_fading)]
                                    [static_cast<std::size_t>(tag_ring - 1)];
    const double tag_gain = direct.gains[static_cast<std::size_t>(tag_state)];

    // Interferers of the tagged receiver: draw their channel to the probe
    // once and reuse it both for the group measurement and the SINR.
    struct Inter {
      int node;
      double gain;
    };
    std::vector<Inter> inters;
    std::vector<int> counts(static_cast<std::size_t>(std::max(table.Na, 0)), 0);
    grid.for_each_within(center, radius, [&](int idx, double d) {
      if (idx == tagged_idx) return;
      const int ring = std::min(ring_index(d, config.d0), config.NmI);
      const int fading = static_cast<int>(rng.categorical(beta_cum));
      const int gidx = interf_map[static_cast<std::size_t>(fading)][static_cast<std::size_t>(ring - 1)];
      if (gidx < table.Na) ++counts[static_cast<std::size_t>(gidx)];
      inters.push_back({idx, interf.gains[static_cast<std::size_t>(gidx)]});
    });
    const int tag_group = assign_group(table, counts);

    // Each interferer's own power: its gain state and its receiver's
    // measured neighborhood, quantized exactly as the reduction prescribes.
    double interference = 0.0;
    std::vector<int> jcounts(static_cast<std::size_t>(std::max(table.Na, 0)));
    for (const auto& it : inters) {
      const double dj = reach * std::sqrt(rng.uniform());
      const double aj = rng.uniform(0.0, 2.0 * kPi);
      Point dest{nodes[static_cast<std::size_t>(it.node)].x + dj * std::cos(aj),
                 nodes[static_cast<std::size_t>(it.node)].y + dj * std::sin(aj)};
      dest.x = std::fmod(dest.x + L, L);
      dest.y = std::fmod(dest.y + L, L);
      const int j_fading = static_cast<int>(rng.categorical(beta_cum));
      const int j_ring = std::min(ring_index(dj, config.d0), config.Nm);
      const int j_state = direct_map[static_cast<std::size_t>(j_fading)]
                                    [static_cast<std::size_t>(j_ring - 1)];
      std::fill(jcounts.begin(), jcounts.end(), 0);
      grid.for_each_within(dest, radius, [&](int idx, double d) {
        if (idx == it.node) return;
        const int ring = std::min(ring_index(d, config.d0), config.NmI);
        const int fading = static_cast<int>(rng.categorical(beta_cum));
        const int gidx = interf_map[static_cast<std::size_t>(fading)][static_cast<std::size_t>(ring - 1)];
        if (gidx < table.Na) ++jcounts[static_cast<std::size_t>(gidx)];
      });
      const int j_group = assign_group(table, jcounts);
      interference += policy.at(j_group, j_state) * it.gain;
    }

    detail::TrialResult res;
    res.interference = interference;
    const double p_tag = policy.at(tag_group, tag_state);
    res.rate = shannon_rate(p_tag * tag_gain / (interference + config.noise));
    return res;
  };

  const auto results = detail::run_trials(trials, one_trial);
  const double hist_hi =
      shannon_rate(direct.gains.front() * std::max(policy.max_power(), 1e-300) / config.noise) +
      1e-9;
  return detail::aggregate(results, seed, hist_hi);
}

/// Analytic interference bound at a typical receiver.
inline double lemma1_bound(double lambda, double pbar, double hbar, double alpha, double ro) {
  if (!(alpha > 2.0)) throw ConfigError("lemma1_bound: alpha must exceed 2");
  return (lambda * kPi + 1.0 / (ro * ro)) * pbar * hbar / ((alpha - 2.0) * (alpha - 1.0));
}

/// Empirical mean interference at a typical receiver, with the analytic
/// bound evaluated at the same parameters. Interferer powers are drawn from
/// the policy under the (group, state) priors, so the average power entering
/// the bound matches the one realized in the draw.
inline std::pair<double, double> empirical_interference(const NetworkConfig& config,
                                                        const PowerPolicy& policy, int trials,
                                                        std::uint64_t seed) {
  config.validate();
  const double ro = config.NmI * config.d0;
  std::vector<double> beta_cum;
  double hbar = 0.0;
  {
    std::vector<double> beta;
    for (const auto& f : config.fading_levels) {
      beta.push_back(f.beta);
      hbar += f.beta * f.h;
    }
    beta_cum = cumulative_weights(beta);
  }
  // Interferer (group, state) drawn from the uniform group prior and the
  // direct-gain law; the bound's average power uses the same weighting.
  const auto direct = direct_gain_distribution(config);
  const auto state_cum = cumulative_weights(direct.probs);
  double pbar = 0.0;
  for (int k = 1; k <= policy.NI; ++k)
    for (int m = 0; m < policy.Ng; ++m)
      pbar += (1.0 / policy.NI) * direct.probs[static_cast<std::size_t>(m)] * policy.at(k, m);

  auto one_trial = [&](int t) {
    RandomStream rng = RandomStream::substream(seed, static_cast<std::uint64_t>(t));
    const auto count = rng.poisson(config.lambda * kPi * ro * ro);
    double inter = 0.0;
    for (std::uint64_t i = 0; i < count; ++i) {
      const double d = ro * std::sqrt(rng.uniform());
      const int ring = std::min(ring_index(d, config.d0), config.NmI);
      const int fading = static_cast<int>(rng.categorical(beta_cum));
      const int group = 1 + static_cast<int>(rng.uniform() * policy.NI) % policy.NI;
      const int state = static_cast<int>(rng.categorical(state_cum));
      inter += policy.at(group, state) * config.fading_levels[static_cast<std::size_t>(fading)].h *
               path_loss(ring * config.d0, config.alpha);
    }
    detail::TrialResult res;
    res.interference = inter;
    return res;
  };

  const auto results = detail::run_trials(trials, one_trial);
  double mean = 0.0;
  for (const auto& r : results) mean += r.interference;
  mean /= std::max<std::size_t>(1, results.size());
  return {mean, lemma1_bound(config.lambda, pbar, hbar, config.alpha, ro)};
}

/// Multi-hop rate measurement: routes planned over the sampled nodes, the
/// link rate composed by the sequential store-and-forward rule.
struct MultihopOptions {
  double fixed_hop_rate = 1.0;  // rate of every hop
  int links_per_trial = 100;
};

inline SimReport simulate_multihop(const NetworkConfig& config, double r0,
                                   const MultihopOptions& opts, int trials, std::uint64_t seed) {
  config.validate();
  if (!(r0 > 0.0)) throw ConfigError("simulate_multihop: r0 must be positive");
  const double reach = config.Nm * config.d0;
  const double margin = reach + 4.0 / std::sqrt(kPi * config.lambda) + r0;
  const double L = config.area_side;
  if (L <= 2.0 * margin)
    throw ConfigError("simulate_multihop: area too small for the transmission range");

  auto one_trial = [&](int t) {
    RandomStream rng = RandomStream::substream(seed, static_cast<std::uint64_t>(t));
    const auto count = rng.poisson(config.lambda * L * L);
    std::vector<Point> nodes(count);
    for (auto& p : nodes) {
      p.x = rng.uniform(0.0, L);
      p.y = rng.uniform(0.0, L);
    }
    NodeIndex index(nodes);
    double rate_sum = 0.0;
    for (int l = 0; l < opts.links_per_trial; ++l) {
      const Point src{rng.uniform(margin, L - margin), rng.uniform(margin, L - margin)};
      const double d = reach * std::sqrt(rng.uniform());
      const double ang = rng.uniform(0.0, 2.0 * kPi);
      const Point dst{src.x + d * std::cos(ang), src.y + d * std::sin(ang)};
      const auto plan = plan_route(src, dst, r0, nodes, index);
      rate_sum += opts.fixed_hop_rate / std::max(1, plan.hop_count());
    }
    detail::TrialResult res;
    res.rate = rate_sum / opts.links_per_trial;
    return res;
  };

  const auto results = detail::run_trials(trials, one_trial);
  return detail::aggregate(results, seed, opts.fixed_hop_rate + 1e-9);
}

/// Theorem-style sandwich bounds for the multi-hop average rate at a given
/// per-hop rate: the (2i-1) and (2i+1) hop-law constructions.
inline std::pair<double, double> multihop_rate_bounds(double rI, double r0, double d0, int Nm) {
  const double denom = d0 * d0 * Nm * Nm;
  const int n_lower = static_cast<int>(std::ceil(Nm * d0 / r0 - 1e-12));
  const int n_upper = std::max(1, static_cast<int>(std::floor(Nm * d0 / r0 + 1e-12)));
  double lower = 0.0;
  for (int i = 1; i <= n_lower; ++i) lower += (rI / i) * (2.0 * i - 1.0) * r0 * r0 / denom;
  double upper = 0.0;
  for (int i = 1; i <= n_upper; ++i) upper += (rI / i) * (2.0 * i + 1.0) * r0 * r0 / denom;
  return {lower, upper};
}

inline nlohmann::json sim_report_to_json(const SimReport& r) {
  nlohmann::json j;
  j["trials"] = r.trials;
  j["mean_rate"] = r.mean_rate;
  j["rate_stderr"] = r.rate_stderr;
  j["mean_interference"] = r.mean_interference;
  j["interference_stderr"] = r.interference_stderr;
  j["seed"] = r.seed;
  j["rate_histogram"] = r.rate_histogram;
  j["hist_range"] = {r.hist_lo, r.hist_hi};
  return j;
}

inline void write_histogram_csv(const SimReport& r, std::ostream& os) {
  os << "bin_lo,bin_hi,count\n";
  char buf[96];
  const double width = (r.hist_hi - r.hist_lo) / static_cast<double>(r.rate_histogram.size());
  for (std::size_t b = 0; b < r.rate_histogram.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%g\n", r.hist_lo + b * width,
                  r.hist_lo + (b + 1) * width, r.rate_histogram[b]);
    os << buf;
  }
}

}  // namespace mfnet
