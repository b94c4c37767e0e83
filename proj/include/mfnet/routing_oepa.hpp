#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <vector>

#include "mfnet/channel_model.hpp"
#include "mfnet/common.hpp"

namespace mfnet {

/// Grid-bucket nearest-neighbor index over a fixed point set. Ties break to
/// the lowest node index so route planning is deterministic.
class NodeIndex {
 public:
  explicit NodeIndex(const std::vector<Point>& pts) : pts_(pts) {
    if (pts.empty()) return;
    min_ = max_ = pts[0];
    for (const auto& p : pts) {
      min_.x = std::min(min_.x, p.x);
      min_.y = std::min(min_.y, p.y);
      max_.x = std::max(max_.x, p.x);
      max_.y = std::max(max_.y, p.y);
    }
    const double span = std::max({max_.x - min_.x, max_.y - min_.y, 1e-9});
    const int target = static_cast<int>(std::sqrt(static_cast<double>(pts.size()))) + 1;
    cells_ = std::clamp(target, 1, 1024);
    cell_ = span / cells_;
    buckets_.assign(static_cast<std::size_t>(cells_) * cells_, {});
    for (std::size_t i = 0; i < pts.size(); ++i)
      buckets_[bucket_of(pts[i])].push_back(static_cast<int>(i));
  }

  bool empty() const { return pts_.empty(); }

  int nearest(const Point& q) const {
    if (pts_.empty()) return -1;
    const int cx = cell_x(q.x);
    const int cy = cell_y(q.y);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int ring = 0; ring < 2 * cells_ + 2; ++ring) {
      // Once a candidate is held, rings beyond its distance cannot improve.
      if (best >= 0 && (ring - 1) * cell_ > best_d) break;
      bool any_cell = false;
      for (int dx = -ring; dx <= ring; ++dx) {
        for (int dy = -ring; dy <= ring; ++dy) {
          if (std::max(std::abs(dx), std::abs(dy)) != ring) continue;
          const int x = cx + dx, y = cy + dy;
          if (x < 0 || x >= cells_ || y < 0 || y >= cells_) continue;
          any_cell = true;
          for (int idx : buckets_[static_cast<std::size_t>(y) * cells_ + x]) {
            const double d = std::hypot(pts_[static_cast<std::size_t>(idx)].x - q.x,
                                        pts_[static_cast<std::size_t>(idx)].y - q.y);
            if (d < best_d || (d == best_d && idx < best)) {
              best_d = d;
              best = idx;
            }
          }
        }
      }
      if (!any_cell && best >= 0) break;
    }
    return best;
  }

  /// All indices within `radius` of q (plain Euclidean).
  std::vector<int> within(const Point& q, double radius) const {
    std::vector<int> out;
    if (pts_.empty()) return out;
    const int r_cells = static_cast<int>(radius / cell_) + 1;
    const int cx = cell_x(q.x), cy = cell_y(q.y);
    for (int x = std::max(0, cx - r_cells); x <= std::min(cells_ - 1, cx + r_cells); ++x)
      for (int y = std::max(0, cy - r_cells); y <= std::min(cells_ - 1, cy + r_cells); ++y)
        for (int idx : buckets_[static_cast<std::size_t>(y) * cells_ + x])
          if (std::hypot(pts_[static_cast<std::size_t>(idx)].x - q.x,
                         pts_[static_cast<std::size_t>(idx)].y - q.y) <= radius)
            out.push_back(idx);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t bucket_of(const Point& p) const {
    return static_cast<std::size_t>(cell_y(p.y)) * cells_ + cell_x(p.x);
  }
  int cell_x(double x) const {
    return std::clamp(static_cast<int>((x - min_.x) / cell_), 0, cells_ - 1);
  }
  int cell_y(double y) const {
    return std::clamp(static_cast<int>((y - min_.y) / cell_), 0, cells_ - 1);
  }

  const std::vector<Point>& pts_;
  Point min_{}, max_{};
  int cells_ = 1;
  double cell_ = 1.0;
  std::vector<std::vector<int>> buckets_;
};

/// Relay sequence from source to destination; endpoints carry node index -1.
struct RoutePlan {
  std::vector<int> hops;             // per point: relay node index, -1 at the ends
  std::vector<Point> points;         // source, relays..., destination
  std::vector<double> hop_distances; // meters per hop
  std::vector<double> deviations;    // relay distance to its ideal location

  int hop_count() const { return static_cast<int>(hop_distances.size()); }
};

/// Equidistant-path routing: ideal points every r0 along the segment, each
/// relay the nearest node to its ideal point. Relays that repeat a node are
/// collapsed and the hop skipped.
inline RoutePlan plan_route(const Point& source, const Point& destination, double r0,
                            const std::vector<Point>& nodes, const NodeIndex& index) {
  if (!(r0 > 0.0)) throw ConfigError("plan_route: r0 must be positive");
  const double dist = std::hypot(destination.x - source.x, destination.y - source.y);
  const int relays = std::max(0, static_cast<int>(std::ceil(dist / r0 - 1e-12)) - 1);

  RoutePlan plan;
  plan.points.push_back(source);
  plan.hops.push_back(-1);
  if (relays > 0) {
    if (nodes.empty()) throw ConfigError("plan_route: relays required but the node set is empty");
    const double ux = (destination.x - source.x) / dist;
    const double uy = (destination.y - source.y) / dist;
    int prev = -1;
    for (int j = 1; j <= relays; ++j) {
      const Point ideal{source.x + j * r0 * ux, source.y + j * r0 * uy};
      const int pick = index.nearest(ideal);
      if (pick == prev) continue;
      prev = pick;
      plan.points.push_back(nodes[static_cast<std::size_t>(pick)]);
      plan.hops.push_back(pick);
      plan.deviations.push_back(std::hypot(nodes[static_cast<std::size_t>(pick)].x - ideal.x,
                                           nodes[static_cast<std::size_t>(pick)].y - ideal.y));
    }
  }
  plan.points.push_back(destination);
  plan.hops.push_back(-1);
  for (std::size_t i = 1; i < plan.points.size(); ++i)
    plan.hop_distances.push_back(std::hypot(plan.points[i].x - plan.points[i - 1].x,
                                            plan.points[i].y - plan.points[i - 1].y));
  return plan;
}

inline RoutePlan plan_route(const Point& source, const Point& destination, double r0,
                            const std::vector<Point>& nodes) {
  NodeIndex index(nodes);
  return plan_route(source, destination, r0, nodes, index);
}

/// Hop-count law under the ring distance model. The printed atoms sum to one
/// only when Nm*d0/r0 is an integer; the residual goes to the last atom.
inline std::vector<double> hop_count_pmf(double r0, double d0, int Nm) {
  if (!(r0 > 0.0)) throw ConfigError("hop_count_pmf: r0 must be positive");
  if (Nm < 1) throw ConfigError("hop_count_pmf: Nm must be >= 1");
  const double reach = Nm * d0;
  const int atoms = std::max(1, static_cast<int>(std::ceil(reach / r0 - 1e-12)));
  std::vector<double> pmf(static_cast<std::size_t>(atoms), 0.0);
  double cum = 0.0;
  for (int a = 1; a < atoms; ++a) {
    pmf[static_cast<std::size_t>(a - 1)] = (2.0 * a - 1.0) * r0 * r0 / (d0 * d0 * Nm * Nm);
    cum += pmf[static_cast<std::size_t>(a - 1)];
  }
  pmf.back() = 1.0 - cum;
  return pmf;
}

/// Rayleigh parameter of the nearest-node deviation: sigma^2 = 1/(2 pi lambda).
inline double deviation_sigma_squared(double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("deviation_sigma_squared: lambda must be positive");
  return 1.0 / (2.0 * kPi * lambda);
}

/// Portions of endpoint-type and relay-relay-type hops in the equivalent
/// single-hop network: the first and last hop of an a-hop link are
/// endpoint-type, the remaining a-2 are relay-relay.
inline std::pair<double, double> hop_portions(double r0, double d0, int Nm) {
  const auto pmf = hop_count_pmf(r0, d0, Nm);
  double eta_n = pmf[0];
  for (std::size_t a = 2; a <= pmf.size(); ++a)
    eta_n += (2.0 / static_cast<double>(a)) * pmf[a - 1];
  return {eta_n, 1.0 - eta_n};
}

struct IeshDistribution {
  std::vector<double> ds_values;  // quantized single-hop distances
  std::vector<double> eps;        // probabilities
  double eta_n = 1.0;
  double eta_r = 0.0;
  double r0 = 1.0;
  bool sigma_warning = false;     // deviation spread not small against r0

  double mean() const { return dot(ds_values, eps); }
};

inline double gaussian_cdf(double x, double mean, double variance) {
  return 0.5 * std::erfc((mean - x) / std::sqrt(2.0 * variance));
}

/// Default quantization grid: uniform bins covering r0 +/- 4 sigma of the
/// wider (relay-relay) hop law.
inline std::vector<double> default_ds_grid(double r0, double lambda, int bins = 21) {
  if (bins < 1) throw ConfigError("default_ds_grid: bins must be >= 1");
  if (bins == 1) return {r0};
  const double sigma_rr = std::sqrt(1.0 / (kPi * lambda));
  double lo = r0 - 4.0 * sigma_rr;
  const double hi = r0 + 4.0 * sigma_rr;
  if (lo < 1e-6 * r0) lo = 1e-6 * r0;
  std::vector<double> grid(static_cast<std::size_t>(bins));
  for (int i = 0; i < bins; ++i)
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (bins - 1);
  return grid;
}

/// Single-hop distance law of the IESH network: the eta-weighted mixture of
/// the two Gaussian hop laws, quantized to the grid with midpoint bin edges
/// (outer bins extend to +/- infinity).
inline IeshDistribution single_hop_pmf(double r0, double lambda,
                                       const std::vector<double>& ds_grid, double eta_n) {
  if (ds_grid.empty()) throw ConfigError("single_hop_pmf: empty grid");
  for (std::size_t i = 1; i < ds_grid.size(); ++i)
    if (!(ds_grid[i] > ds_grid[i - 1]))
      throw ConfigError("single_hop_pmf: grid must be strictly increasing");
  if (!(lambda > 0.0)) throw ConfigError("single_hop_pmf: lambda must be positive");

  const double var_nr = 1.0 / (2.0 * kPi * lambda);
  const double var_rr = 1.0 / (kPi * lambda);
  IeshDistribution dist;
  dist.ds_values = ds_grid;
  dist.r0 = r0;
  dist.eta_n = eta_n;
  dist.eta_r = 1.0 - eta_n;
  dist.sigma_warning = 3.0 * std::sqrt(var_rr) >= r0;
  const std::size_t n = ds_grid.size();
  dist.eps.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = i == 0 ? -std::numeric_limits<double>::infinity()
                             : 0.5 * (ds_grid[i - 1] + ds_grid[i]);
    const double hi = i + 1 == n ? std::numeric_limits<double>::infinity()
                                 : 0.5 * (ds_grid[i] + ds_grid[i + 1]);
    auto bin = [&](double variance) {
      const double upper = std::isinf(hi) ? 1.0 : gaussian_cdf(hi, r0, variance);
      const double lower = std::isinf(lo) ? 0.0 : gaussian_cdf(lo, r0, variance);
      return upper - lower;
    };
    dist.eps[i] = dist.eta_n * bin(var_nr) + dist.eta_r * bin(var_rr);
  }
  return dist;
}

inline void write_route_csv(const RoutePlan& plan, int link_id, std::ostream& os,
                            bool header = true) {
  if (header) os << "link_id,hop_index,x,y,hop_distance\n";
  char buf[128];
  for (std::size_t i = 0; i < plan.points.size(); ++i) {
    const double hd = i == 0 ? 0.0 : plan.hop_distances[i - 1];
    std::snprintf(buf, sizeof(buf), "%d,%zu,%.12g,%.12g,%.12g\n", link_id, i, plan.points[i].x,
                  plan.points[i].y, hd);
    os << buf;
  }
}

}  // namespace mfnet
