#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfnet/common.hpp"
#include "mfnet/rng.hpp"

namespace mfnet {

struct FadingLevel {
  double h = 1.0;     // linear gain
  double beta = 1.0;  // probability
};

/// Scenario parameters shared by the distribution builders, the mean-field
/// reduction and the network simulator. Powers in mW, distances in meters,
/// rates in bits/s/Hz.
struct NetworkConfig {
  double lambda = 1.0;     // node intensity, nodes per square meter
  double area_side = 30.0; // side of the (toroidal) square area, meters
  double d0 = 1.0;         // distance quantum, meters
  int Nm = 2;              // max direct-link distance in units of d0
  int NmI = 10;            // max interference distance in units of d0
  double alpha = 3.0;      // path-loss exponent
  double noise = 10.0;     // noise power n, mW
  std::vector<FadingLevel> fading_levels = {{1.0, 1.0}};
  double p_max = 0.1;      // per-link power cap, mW
  std::optional<double> p_ave; // average power cap, mW (IESH-s)
  double r_min = 0.0;      // minimum rate, bits/s/Hz
  int Na = 1;              // dominant interference-gain indices tracked
  int Nc = 2;              // quantization intervals per tracked index
  bool strict_gamma_min = false;   // select the printed SINR-floor variant
  std::size_t group_cap = 4096;    // cap on Nc^Na

  /// All invariant violations, as human-readable diagnostics.
  std::vector<std::string> diagnostics() const {
    std::vector<std::string> out;
    auto bad = [&out](const std::string& m) { out.push_back(m); };
    if (!(lambda > 0.0)) bad("lambda must be > 0");
    if (!(area_side > 0.0)) bad("area_side must be > 0");
    if (!(d0 > 0.0)) bad("d0 must be > 0");
    if (Nm < 1) bad("Nm must be >= 1");
    if (NmI < Nm) bad("NmI must be >= Nm");
    if (!(alpha > 2.0)) bad("alpha must be > 2 (interference mean diverges otherwise)");
    if (!(noise > 0.0)) bad("noise must be > 0");
    if (!(p_max > 0.0)) bad("p_max must be > 0");
    if (p_ave && !(*p_ave > 0.0)) bad("p_ave must be > 0 when set");
    if (r_min < 0.0) bad("r_min must be >= 0");
    if (Na < 0) bad("Na must be >= 0");
    if (Nc < 1) bad("Nc must be >= 1");
    if (fading_levels.empty()) bad("fading_levels must be non-empty");
    double beta_sum = 0.0;
    for (std::size_t i = 0; i < fading_levels.size(); ++i) {
      if (!(fading_levels[i].h > 0.0)) bad("fading gain h must be > 0");
      if (fading_levels[i].beta < 0.0) bad("fading probability must be >= 0");
      if (i > 0 && fading_levels[i].h > fading_levels[i - 1].h + 1e-15)
        bad("fading gains must be sorted descending");
      beta_sum += fading_levels[i].beta;
    }
    if (!fading_levels.empty() && std::abs(beta_sum - 1.0) > 1e-12)
      bad("fading probabilities must sum to 1");
    return out;
  }

  void validate() const {
    auto d = diagnostics();
    if (!d.empty()) throw ConfigError("invalid NetworkConfig: " + d.front());
  }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct NodeSet {
  std::vector<Point> positions;
  std::uint64_t seed = 0;
};

/// Sorted discrete channel-gain support with probabilities.
struct GainDistribution {
  enum class Kind { direct, interference };
  std::vector<double> gains;  // strictly non-increasing
  std::vector<double> probs;
  Kind kind = Kind::direct;

  double mean() const { return dot(gains, probs); }
};

/// Bounded path-loss model, finite at the origin.
inline double path_loss(double d, double alpha) {
  if (d < 0.0) throw ConfigError("path_loss: negative distance");
  return std::pow(1.0 + d, -alpha);
}

/// Ring probabilities for a destination drawn uniformly within Nm*d0.
inline std::vector<double> distance_pmf(int Nm) {
  if (Nm < 1) throw ConfigError("distance_pmf: Nm must be >= 1");
  std::vector<double> gamma(static_cast<std::size_t>(Nm));
  const double denom = static_cast<double>(Nm) * Nm;
  for (int k = 1; k <= Nm; ++k)
    gamma[static_cast<std::size_t>(k - 1)] =
        (static_cast<double>(k) * k - static_cast<double>(k - 1) * (k - 1)) / denom;
  return gamma;
}

inline NodeSet sample_ppp(const NetworkConfig& config, std::uint64_t seed) {
  if (config.lambda < 0.0) throw ConfigError("sample_ppp: negative lambda");
  if (!(config.area_side > 0.0)) throw ConfigError("sample_ppp: non-positive area");
  RandomStream rng(seed);
  const double area = config.area_side * config.area_side;
  const std::uint64_t n = rng.poisson(config.lambda * area);
  NodeSet nodes;
  nodes.seed = seed;
  nodes.positions.resize(n);
  for (auto& p : nodes.positions) {
    p.x = rng.uniform(0.0, config.area_side);
    p.y = rng.uniform(0.0, config.area_side);
  }
  return nodes;
}

namespace detail {

struct GainEntry {
  double gain;
  double prob;
  int fading_index;   // 0-based
  int distance_index; // 0-based ring index
};

inline std::vector<GainEntry> sorted_gain_entries(const NetworkConfig& config,
                                                  int max_rings) {
  const auto gamma = distance_pmf(max_rings);
  std::vector<GainEntry> entries;
  entries.reserve(config.fading_levels.size() * static_cast<std::size_t>(max_rings));
  for (std::size_t k = 0; k < config.fading_levels.size(); ++k) {
    for (int l = 1; l <= max_rings; ++l) {
      GainEntry e;
      e.gain = config.fading_levels[k].h * path_loss(l * config.d0, config.alpha);
      e.prob = config.fading_levels[k].beta * gamma[static_cast<std::size_t>(l - 1)];
      e.fading_index = static_cast<int>(k);
      e.distance_index = l - 1;
      entries.push_back(e);
    }
  }
  // Ties stay as separate entries: stable sort by descending gain, then
  // descending probability, so the (gain, prob) pairing is preserved.
  std::stable_sort(entries.begin(), entries.end(), [](const GainEntry& a, const GainEntry& b) {
    if (a.gain != b.gain) return a.gain > b.gain;
    return a.prob > b.prob;
  });
  return entries;
}

}  // namespace detail

inline GainDistribution direct_gain_distribution(const NetworkConfig& config) {
  config.validate();
  auto entries = detail::sorted_gain_entries(config, config.Nm);
  GainDistribution dist;
  dist.kind = GainDistribution::Kind::direct;
  for (const auto& e : entries) {
    dist.gains.push_back(e.gain);
    dist.probs.push_back(e.prob);
  }
  return dist;
}

inline GainDistribution interference_gain_distribution(const NetworkConfig& config) {
  config.validate();
  auto entries = detail::sorted_gain_entries(config, config.NmI);
  GainDistribution dist;
  dist.kind = GainDistribution::Kind::interference;
  for (const auto& e : entries) {
    dist.gains.push_back(e.gain);
    dist.probs.push_back(e.prob);
  }
  return dist;
}

/// Map from (fading index, ring index) to the position of that state in the
/// sorted gain list. Needed by the simulator to assign measured links the
/// same state indices the reduction uses.
inline std::vector<std::vector<int>> sorted_index_map(const NetworkConfig& config,
                                                      int max_rings) {
  auto entries = detail::sorted_gain_entries(config, max_rings);
  std::vector<std::vector<int>> map(config.fading_levels.size(),
                                    std::vector<int>(static_cast<std::size_t>(max_rings), -1));
  for (std::size_t m = 0; m < entries.size(); ++m)
    map[static_cast<std::size_t>(entries[m].fading_index)]
       [static_cast<std::size_t>(entries[m].distance_index)] = static_cast<int>(m);
  return map;
}

/// Equal-probability quantization of a unit Rayleigh variable; each level is
/// the squared conditional mean of its interval. With four levels this
/// reproduces the usual {4.6045, 1.9805, 0.9392, 0.2412} table.
inline std::vector<FadingLevel> rayleigh_fading_levels(int levels) {
  if (levels < 1) throw ConfigError("rayleigh_fading_levels: levels must be >= 1");
  // A(x) = integral over [x, inf) of t * (t e^{-t^2/2}) dt
  auto upper_moment = [](double x) {
    return x * std::exp(-0.5 * x * x) +
           std::sqrt(kPi / 2.0) * std::erfc(x / std::sqrt(2.0));
  };
  std::vector<FadingLevel> out(static_cast<std::size_t>(levels));
  const double p = 1.0 / levels;
  for (int i = 0; i < levels; ++i) {
    const double lo_q = static_cast<double>(i) / levels;
    const double hi_q = static_cast<double>(i + 1) / levels;
    const double lo = lo_q > 0.0 ? std::sqrt(-2.0 * std::log(1.0 - lo_q)) : 0.0;
    const double centroid =
        (upper_moment(lo) - (hi_q < 1.0 ? upper_moment(std::sqrt(-2.0 * std::log(1.0 - hi_q))) : 0.0)) / p;
    // Strongest gain first.
    out[static_cast<std::size_t>(levels - 1 - i)] = {centroid * centroid, p};
  }
  return out;
}

inline int ring_index(double d, double d0) {
  const int k = static_cast<int>(std::ceil(d / d0 - 1e-12));
  return k < 1 ? 1 : k;
}

/// Minimum-image (toroidal) distance on the square of side L.
inline double torus_distance(const Point& a, const Point& b, double L) {
  double dx = std::abs(a.x - b.x);
  double dy = std::abs(a.y - b.y);
  if (dx > 0.5 * L) dx = L - dx;
  if (dy > 0.5 * L) dy = L - dy;
  return std::hypot(dx, dy);
}

// ---- serialization ----

inline NetworkConfig network_config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.lambda = j.at("lambda").get<double>();
  c.area_side = j.value("area_side", c.area_side);
  c.d0 = j.at("d0").get<double>();
  c.Nm = j.at("Nm").get<int>();
  c.NmI = j.at("NmI").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.noise = j.at("noise").get<double>();
  c.fading_levels.clear();
  for (const auto& f : j.at("fading_levels")) {
    if (f.is_array())
      c.fading_levels.push_back({f.at(0).get<double>(), f.at(1).get<double>()});
    else
      c.fading_levels.push_back({f.at("h").get<double>(), f.at("beta").get<double>()});
  }
  c.p_max = j.at("p_max").get<double>();
  if (j.contains("p_ave") && !j.at("p_ave").is_null())
    c.p_ave = j.at("p_ave").get<double>();
  c.r_min = j.value("r_min", 0.0);
  c.Na = j.at("Na").get<int>();
  c.Nc = j.at("Nc").get<int>();
  c.strict_gamma_min = j.value("strict_gamma_min", false);
  return c;
}

inline nlohmann::json network_config_to_json(const NetworkConfig& c) {
  nlohmann::json j;
  j["lambda"] = c.lambda;
  j["area_side"] = c.area_side;
  j["d0"] = c.d0;
  j["Nm"] = c.Nm;
  j["NmI"] = c.NmI;
  j["alpha"] = c.alpha;
  j["noise"] = c.noise;
  nlohmann::json fl = nlohmann::json::array();
  for (const auto& f : c.fading_levels) fl.push_back({f.h, f.beta});
  j["fading_levels"] = fl;
  j["p_max"] = c.p_max;
  if (c.p_ave) j["p_ave"] = *c.p_ave;
  j["r_min"] = c.r_min;
  j["Na"] = c.Na;
  j["Nc"] = c.Nc;
  j["strict_gamma_min"] = c.strict_gamma_min;
  return j;
}

inline void write_nodes_csv(const NodeSet& nodes, std::ostream& os) {
  os << "x,y\n";
  char buf[64];
  for (const auto& p : nodes.positions) {
    std::snprintf(buf, sizeof(buf), "%.12g,%.12g\n", p.x, p.y);
    os << buf;
  }
}

}  // namespace mfnet
