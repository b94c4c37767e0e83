#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfnet/common.hpp"

namespace mfnet {

/// Delay-constrained population control problem on a (buffer s, channel h,
/// time tau) grid.
struct MfgConfig {
  double T = 3.0;             // deadline, seconds
  double eta = 0.0;           // channel diffusion coefficient
  double gbar = 0.0;          // aggregate interference gain
  double noise = 0.1;         // mW
  std::vector<std::pair<double, double>> arrival_pmf = {{1.0, 1.0}};  // (bits, prob)
  double h_min = 1.0;
  double h_max = 2.0;
  int Ns = 40;
  int Nh = 2;
  int Nt = 64;
  std::vector<double> h0_weights;  // channel marginal at tau = 0; defaults to row 0
  std::vector<double> rho0;        // explicit initial density (Ns*Nh), optional
  double s_max = 0.0;              // 0: derived from the arrival support

  // solver knobs
  double penalty0 = 10.0;
  int max_pdhg_iters = 3000;
  int max_continuation = 8;
  double tol = 1e-4;
  double residual_tol = 1e-3;

  std::vector<std::string> diagnostics() const {
    std::vector<std::string> out;
    if (!(T > 0.0)) out.push_back("T must be > 0");
    if (eta < 0.0) out.push_back("eta must be >= 0");
    if (gbar < 0.0) out.push_back("gbar must be >= 0");
    if (!(noise > 0.0)) out.push_back("noise must be > 0");
    if (Ns < 2 || Nh < 2 || Nt < 2) out.push_back("grid dimensions must each be >= 2");
    if (!(h_max > h_min) || !(h_min > 0.0)) out.push_back("h_range must satisfy 0 < h_min < h_max");
    if (arrival_pmf.empty()) out.push_back("arrival_pmf must be non-empty");
    double mass = 0.0;
    for (const auto& [bits, prob] : arrival_pmf) {
      if (bits < 0.0) out.push_back("arrival sizes must be >= 0");
      if (prob < 0.0) out.push_back("arrival probabilities must be >= 0");
      mass += prob;
    }
    if (!arrival_pmf.empty() && std::abs(mass - 1.0) > 1e-8)
      out.push_back("arrival probabilities must sum to 1");
    return out;
  }

  void validate() const {
    auto d = diagnostics();
    if (!d.empty()) throw ConfigError("invalid MfgConfig: " + d.front());
  }

  double max_arrival() const {
    double m = 0.0;
    for (const auto& [bits, prob] : arrival_pmf)
      if (prob > 0.0) m = std::max(m, bits);
    return m;
  }

  double mean_arrival() const {
    double m = 0.0;
    for (const auto& [bits, prob] : arrival_pmf) m += bits * prob;
    return m;
  }
};

struct GridGeom {
  int Ns = 2, Nh = 2, Nt = 2;
  double ds = 1.0, dh = 1.0, dt = 1.0;
  double h_min = 1.0;
  double eta = 0.0;

  int slice_size() const { return Ns * Nh; }
  int field_size() const { return Ns * Nh * Nt; }
  double cell() const { return ds * dh; }
  double h_at(int j) const { return h_min + j * dh; }
  int idx(int i, int j) const { return i + Ns * j; }
  int fidx(int i, int j, int k) const { return i + Ns * (j + Nh * k); }
};

inline GridGeom make_geom(const MfgConfig& c) {
  GridGeom g;
  g.Ns = c.Ns;
  g.Nh = c.Nh;
  g.Nt = c.Nt;
  const double smax = c.s_max > 0.0 ? c.s_max : std::max(c.max_arrival() * 1.05, 1e-6);
  g.ds = smax / (c.Ns - 1);
  g.dh = (c.h_max - c.h_min) / (c.Nh - 1);
  g.dt = c.T / (c.Nt - 1);
  g.h_min = c.h_min;
  g.eta = c.eta;
  return g;
}

/// Density, power and multiplier fields plus the cell sizes.
struct MfgGrid {
  GridGeom geom;
  std::vector<double> rho;  // Ns*Nh*Nt
  std::vector<double> p;    // Ns*Nh*Nt
  std::vector<double> phi;  // Ns*Nh*(Nt-1), one multiplier slice per residual
};

struct MfgSolution {
  double total_power = 0.0;
  double cleared_mass = 0.0;
  double pde_residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

inline std::vector<double> rho0_from_config(const MfgConfig& c, const GridGeom& g) {
  if (!c.rho0.empty()) {
    if (static_cast<int>(c.rho0.size()) != g.slice_size())
      throw ConfigError("rho0 size does not match the grid");
    double mass = 0.0;
    for (double v : c.rho0) mass += v * g.cell();
    if (std::abs(mass - 1.0) > 1e-8) throw ConfigError("rho0 must integrate to 1");
    return c.rho0;
  }
  std::vector<double> h0 = c.h0_weights;
  if (h0.empty()) {
    h0.assign(static_cast<std::size_t>(g.Nh), 0.0);
    h0[0] = 1.0;
  }
  if (static_cast<int>(h0.size()) != g.Nh) throw ConfigError("h0_weights size mismatch");
  double hsum = 0.0;
  for (double v : h0) hsum += v;
  if (!(hsum > 0.0)) throw ConfigError("h0_weights must have positive mass");

  std::vector<double> rho(static_cast<std::size_t>(g.slice_size()), 0.0);
  for (const auto& [bits, prob] : c.arrival_pmf) {
    int cell = static_cast<int>(std::round(bits / g.ds));
    cell = std::clamp(cell, 0, g.Ns - 1);
    for (int j = 0; j < g.Nh; ++j)
      rho[static_cast<std::size_t>(g.idx(cell, j))] += prob * (h0[static_cast<std::size_t>(j)] / hsum) / g.cell();
  }
  return rho;
}

/// r = log2(1 + p h / (gbar <p, rho> + n)) slice by slice; <p, rho> is the
/// grid quadrature of the power actually spent at that instant.
inline std::vector<double> rate_field(const std::vector<double>& p, const std::vector<double>& rho,
                                      const MfgConfig& c, const GridGeom& g) {
  std::vector<double> r(p.size(), 0.0);
  for (int k = 0; k < g.Nt; ++k) {
    double mf = 0.0;
    for (int j = 0; j < g.Nh; ++j)
      for (int i = 0; i < g.Ns; ++i)
        mf += p[static_cast<std::size_t>(g.fidx(i, j, k))] * rho[static_cast<std::size_t>(g.fidx(i, j, k))];
    mf *= g.cell();
    const double denom = c.gbar * mf + c.noise;
    for (int j = 0; j < g.Nh; ++j)
      for (int i = 0; i < g.Ns; ++i)
        r[static_cast<std::size_t>(g.fidx(i, j, k))] =
            std::log2(1.0 + p[static_cast<std::size_t>(g.fidx(i, j, k))] * g.h_at(j) / denom);
  }
  return r;
}

// ---- transport generator on one time slice ----
// Mass drains toward s = 0 at speed v (v is clamped to zero on the s = 0 slab
// so cleared mass accumulates there); h-diffusion uses reflecting ends.

inline void generator_apply(const std::vector<double>& v, const std::vector<double>& x,
                            const GridGeom& g, std::vector<double>& out) {
  const double cdiff = g.eta / (g.dh * g.dh);
  for (int j = 0; j < g.Nh; ++j) {
    for (int i = 0; i < g.Ns; ++i) {
      const int id = g.idx(i, j);
      double acc = 0.0;
      if (i + 1 < g.Ns)
        acc += v[static_cast<std::size_t>(g.idx(i + 1, j))] * x[static_cast<std::size_t>(g.idx(i + 1, j))];
      if (i >= 1) acc -= v[static_cast<std::size_t>(id)] * x[static_cast<std::size_t>(id)];
      acc /= g.ds;
      const double xm = j >= 1 ? x[static_cast<std::size_t>(g.idx(i, j - 1))] : x[static_cast<std::size_t>(id)];
      const double xp = j + 1 < g.Nh ? x[static_cast<std::size_t>(g.idx(i, j + 1))] : x[static_cast<std::size_t>(id)];
      acc += cdiff * (xp - 2.0 * x[static_cast<std::size_t>(id)] + xm);
      out[static_cast<std::size_t>(id)] = acc;
    }
  }
}

/// Advection part alone; the velocity derivative of the generator.
inline void advection_apply(const std::vector<double>& v, const std::vector<double>& x,
                            const GridGeom& g, std::vector<double>& out) {
  for (int j = 0; j < g.Nh; ++j) {
    for (int i = 0; i < g.Ns; ++i) {
      const int id = g.idx(i, j);
      double acc = 0.0;
      if (i + 1 < g.Ns)
        acc += v[static_cast<std::size_t>(g.idx(i + 1, j))] * x[static_cast<std::size_t>(g.idx(i + 1, j))];
      if (i >= 1) acc -= v[static_cast<std::size_t>(id)] * x[static_cast<std::size_t>(id)];
      out[static_cast<std::size_t>(id)] = acc / g.ds;
    }
  }
}

inline void generator_adjoint(const std::vector<double>& v, const std::vector<double>& y,
                              const GridGeom& g, std::vector<double>& out) {
  const double cdiff = g.eta / (g.dh * g.dh);
  for (int j = 0; j < g.Nh; ++j) {
    for (int i = 0; i < g.Ns; ++i) {
      const int id = g.idx(i, j);
      double acc = 0.0;
      if (i >= 1)
        acc += v[static_cast<std::size_t>(id)] *
               (y[static_cast<std::size_t>(g.idx(i - 1, j))] - y[static_cast<std::size_t>(id)]) / g.ds;
      const double ym = j >= 1 ? y[static_cast<std::size_t>(g.idx(i, j - 1))] : y[static_cast<std::size_t>(id)];
      const double yp = j + 1 < g.Nh ? y[static_cast<std::size_t>(g.idx(i, j + 1))] : y[static_cast<std::size_t>(id)];
      acc += cdiff * (yp - 2.0 * y[static_cast<std::size_t>(id)] + ym);
      out[static_cast<std::size_t>(id)] = acc;
    }
  }
}

/// One explicit step of the conservative upwind transport. Throws when the
/// step violates the stability bound, naming the offending ratio.
inline std::vector<double> transport_step(const std::vector<double>& rho_slice,
                                          const std::vector<double>& r_slice, const GridGeom& g) {
  double vmax = 0.0;
  for (double r : r_slice) vmax = std::max(vmax, std::abs(r));
  const double adv_limit = vmax > 0.0 ? g.ds / vmax : std::numeric_limits<double>::infinity();
  const double diff_limit =
      g.eta > 0.0 ? g.dh * g.dh / (2.0 * g.eta) : std::numeric_limits<double>::infinity();
  const double limit = 0.9 * std::min(adv_limit, diff_limit);
  if (g.dt > limit)
    throw NumericalError("transport_step: dt " + std::to_string(g.dt) +
                         " exceeds the stability limit " + std::to_string(limit) +
                         " (dt/limit = " + std::to_string(g.dt / limit) + ")");
  std::vector<double> gen(rho_slice.size());
  generator_apply(r_slice, rho_slice, g, gen);
  std::vector<double> next(rho_slice.size());
  for (std::size_t i = 0; i < rho_slice.size(); ++i) next[i] = rho_slice[i] + g.dt * gen[i];
  return next;
}

/// Forward rollout of the density under a given power field.
inline std::vector<double> forward_roll(const std::vector<double>& p,
                                        const std::vector<double>& rho0, const MfgConfig& c,
                                        const GridGeom& g) {
  std::vector<double> rho(static_cast<std::size_t>(g.field_size()), 0.0);
  std::copy(rho0.begin(), rho0.end(), rho.begin());
  std::vector<double> p_slice(static_cast<std::size_t>(g.slice_size()));
  std::vector<double> rho_slice(rho0.begin(), rho0.end());
  for (int k = 0; k + 1 < g.Nt; ++k) {
    double mf = 0.0;
    for (int id = 0; id < g.slice_size(); ++id) {
      p_slice[static_cast<std::size_t>(id)] = p[static_cast<std::size_t>(id + k * g.slice_size())];
      mf += p_slice[static_cast<std::size_t>(id)] * rho_slice[static_cast<std::size_t>(id)];
    }
    mf *= g.cell();
    const double denom = c.gbar * mf + c.noise;
    std::vector<double> r_slice(static_cast<std::size_t>(g.slice_size()));
    for (int j = 0; j < g.Nh; ++j)
      for (int i = 0; i < g.Ns; ++i)
        r_slice[static_cast<std::size_t>(g.idx(i, j))] =
            std::log2(1.0 + p_slice[static_cast<std::size_t>(g.idx(i, j))] * g.h_at(j) / denom);
    rho_slice = transport_step(rho_slice, r_slice, g);
    std::copy(rho_slice.begin(), rho_slice.end(), rho.begin() + (k + 1) * g.slice_size());
  }
  return rho;
}

inline double cleared_mass(const std::vector<double>& rho, const GridGeom& g) {
  double m = 0.0;
  for (int j = 0; j < g.Nh; ++j) m += rho[static_cast<std::size_t>(g.fidx(0, j, g.Nt - 1))];
  return m * g.cell();
}

inline double slice_mass(const std::vector<double>& rho, const GridGeom& g, int k) {
  double m = 0.0;
  for (int id = 0; id < g.slice_size(); ++id)
    m += rho[static_cast<std::size_t>(id + k * g.slice_size())];
  return m * g.cell();
}

/// Trapezoidal quadrature of p*rho over the whole grid.
inline double total_power(const std::vector<double>& p, const std::vector<double>& rho,
                          const GridGeom& g) {
  double total = 0.0;
  for (int k = 0; k < g.Nt; ++k) {
    const double tw = (k == 0 || k == g.Nt - 1) ? 0.5 : 1.0;
    double s = 0.0;
    for (int id = 0; id < g.slice_size(); ++id)
      s += p[static_cast<std::size_t>(id + k * g.slice_size())] *
           rho[static_cast<std::size_t>(id + k * g.slice_size())];
    total += tw * s * g.cell() * g.dt;
  }
  return total;
}

/// Residual of the discrete transport equation per inner time slice:
/// E^k = (rho^{k+1} - rho^k)/dt - A(r^k) rho^k.
inline std::vector<double> transport_residual(const std::vector<double>& rho,
                                              const std::vector<double>& r, const GridGeom& g) {
  const int ss = g.slice_size();
  std::vector<double> e(static_cast<std::size_t>(ss) * (g.Nt - 1));
  std::vector<double> vslice(static_cast<std::size_t>(ss));
  std::vector<double> xslice(static_cast<std::size_t>(ss));
  std::vector<double> gen(static_cast<std::size_t>(ss));
  for (int k = 0; k + 1 < g.Nt; ++k) {
    for (int id = 0; id < ss; ++id) {
      vslice[static_cast<std::size_t>(id)] = r[static_cast<std::size_t>(id + k * ss)];
      xslice[static_cast<std::size_t>(id)] = rho[static_cast<std::size_t>(id + k * ss)];
    }
    generator_apply(vslice, xslice, g, gen);
    for (int id = 0; id < ss; ++id)
      e[static_cast<std::size_t>(id + k * ss)] =
          (rho[static_cast<std::size_t>(id + (k + 1) * ss)] - xslice[static_cast<std::size_t>(id)]) / g.dt -
          gen[static_cast<std::size_t>(id)];
  }
  return e;
}

namespace detail {

/// Euclidean projection onto {x >= 0, sum x = mass} (slice-wise density mass).
inline void simplex_project(std::vector<double>& x, int begin, int count, double mass) {
  std::vector<double> u(x.begin() + begin, x.begin() + begin + count);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0;
  double theta = 0.0;
  for (int i = 0; i < count; ++i) {
    cum += u[static_cast<std::size_t>(i)];
    const double t = (cum - mass) / (i + 1);
    if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
  }
  for (int i = 0; i < count; ++i) {
    double& v = x[static_cast<std::size_t>(begin + i)];
    v = std::max(0.0, v - theta);
  }
}

/// Screened-Poisson preconditioner for the multiplier update: a direct
/// factorization of (I - Laplacian) on the multiplier box, Neumann ends.
class H1Inverse {
 public:
  H1Inverse(const GridGeom& g, int slices) : g_(g), slices_(slices) {
    const int n = g.slice_size() * slices;
    Eigen::SparseMatrix<double> A(n, n);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(n) * 7);
    const double cs = 1.0 / (g.ds * g.ds);
    const double ch = 1.0 / (g.dh * g.dh);
    const double ct = 1.0 / (g.dt * g.dt);
    auto id3 = [&](int i, int j, int k) { return i + g_.Ns * (j + g_.Nh * k); };
    for (int k = 0; k < slices; ++k) {
      for (int j = 0; j < g.Nh; ++j) {
        for (int i = 0; i < g.Ns; ++i) {
          const int row = id3(i, j, k);
          double diag = 1.0;
          auto link = [&](int col, double c) {
            trip.emplace_back(row, col, -c);
            diag += c;
          };
          if (i > 0) link(id3(i - 1, j, k), cs);
          if (i + 1 < g.Ns) link(id3(i + 1, j, k), cs);
          if (j > 0) link(id3(i, j - 1, k), ch);
          if (j + 1 < g.Nh) link(id3(i, j + 1, k), ch);
          if (k > 0) link(id3(i, j, k - 1), ct);
          if (k + 1 < slices) link(id3(i, j, k + 1), ct);
          trip.emplace_back(row, row, diag);
        }
      }
    }
    A.setFromTriplets(trip.begin(), trip.end());
    solver_.compute(A);
    if (solver_.info() != Eigen::Success)
      throw NumericalError("H1Inverse: factorization failed");
  }

  std::vector<double> apply(const std::vector<double>& rhs) const {
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::VectorXd x = solver_.solve(b);
    return std::vector<double>(x.data(), x.data() + x.size());
  }

 private:
  GridGeom g_;
  int slices_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

struct RateDerivs {
  std::vector<double> direct;  // dr/dp at each cell
  std::vector<double> mean;    // dr/dM at each cell (M = slice quadrature of p rho)
};

inline RateDerivs rate_derivatives(const std::vector<double>& p, const std::vector<double>& rho,
                                   const MfgConfig& c, const GridGeom& g) {
  RateDerivs d;
  d.direct.assign(p.size(), 0.0);
  d.mean.assign(p.size(), 0.0);
  const double ln2 = std::log(2.0);
  for (int k = 0; k < g.Nt; ++k) {
    double mf = 0.0;
    for (int id = 0; id < g.slice_size(); ++id)
      mf += p[static_cast<std::size_t>(id + k * g.slice_size())] *
            rho[static_cast<std::size_t>(id + k * g.slice_size())];
    mf *= g.cell();
    const double D = c.gbar * mf + c.noise;
    for (int j = 0; j < g.Nh; ++j) {
      for (int i = 0; i < g.Ns; ++i) {
        const std::size_t id = static_cast<std::size_t>(g.fidx(i, j, k));
        const double h = g.h_at(j);
        const double ph = p[id] * h;
        d.direct[id] = (h / (D + ph)) / ln2;
        d.mean[id] = -(ph * c.gbar / (D * (D + ph))) / ln2;
      }
    }
  }
  return d;
}

}  // namespace detail

/// Saddle-point solver: proximal descent in p, proximal descent in rho with
/// slice-wise simplex reprojection, proximal ascent in the multiplier under
/// the screened-Poisson metric. The terminal clearing constraint enters as a
/// quadratic penalty whose weight grows on a continuation schedule; the
/// reported fields are the forward rollout of the converged power.
inline MfgSolution pdhg_solve(const MfgConfig& cfg, MfgGrid* out_grid = nullptr) {
  cfg.validate();
  const GridGeom g = make_geom(cfg);
  const int ss = g.slice_size();
  const int fs = g.field_size();
  const int phis = ss * (g.Nt - 1);
  const auto rho0 = rho0_from_config(cfg, g);

  // Power cap keeping every realizable rate inside the stability bound of
  // the explicit transport scheme (rate is largest when the interference
  // term vanishes, so the noise-only form is the binding one).
  const double rate_cap = 0.88 * g.ds / g.dt;
  std::vector<double> p_cap(static_cast<std::size_t>(g.Nh));
  for (int j = 0; j < g.Nh; ++j)
    p_cap[static_cast<std::size_t>(j)] = (std::pow(2.0, rate_cap) - 1.0) * cfg.noise / g.h_at(j);

  // Proportional-feedback warm start: drain the remaining backlog at rate
  // s/(T - tau), which is constant along every characteristic and
  // self-corrects against the scheme's numerical diffusion.
  std::vector<double> p(static_cast<std::size_t>(fs), 0.0);
  if (cfg.mean_arrival() > 0.0) {
    for (int k = 0; k < g.Nt; ++k) {
      const double remain = cfg.T - k * g.dt;
      for (int j = 0; j < g.Nh; ++j) {
        for (int i = 1; i < g.Ns; ++i) {
          const double r = remain > 1e-12 ? std::min(i * g.ds / remain, rate_cap) : rate_cap;
          p[static_cast<std::size_t>(g.fidx(i, j, k))] =
              std::min((std::pow(2.0, r) - 1.0) * cfg.noise / g.h_at(j),
                       p_cap[static_cast<std::size_t>(j)]);
        }
      }
    }
  }

  std::vector<double> rho = forward_roll(p, rho0, cfg, g);
  std::vector<double> phi(static_cast<std::size_t>(phis), 0.0);
  const detail::H1Inverse h1(g, g.Nt - 1);

  const double w = g.cell() * g.dt;
  auto trapezoid_weight = [&](int k) { return (k == 0 || k == g.Nt - 1) ? 0.5 : 1.0; };

  // dL/dp: objective term plus the constraint term chained through the rate.
  auto grad_p = [&](const std::vector<double>& pv, const std::vector<double>& rv,
                    const std::vector<double>& phiv, std::vector<double>& out) {
    const auto derivs = detail::rate_derivatives(pv, rv, cfg, g);
    std::fill(out.begin(), out.end(), 0.0);
    for (int k = 0; k < g.Nt; ++k) {
      const double tw = trapezoid_weight(k);
      double mf_acc = 0.0;
      if (k + 1 < g.Nt) {
        for (int j = 0; j < g.Nh; ++j) {
          for (int i = 1; i < g.Ns; ++i) {
            const std::size_t id = static_cast<std::size_t>(g.fidx(i, j, k));
            const std::size_t pid = static_cast<std::size_t>(g.idx(i, j) + k * ss);
            const double gr = -w * rv[id] *
                              (phiv[static_cast<std::size_t>(g.idx(i - 1, j) + k * ss)] - phiv[pid]) / g.ds;
            out[id] += gr * derivs.direct[id];
            mf_acc += gr * derivs.mean[id];
          }
        }
      }
      for (int j = 0; j < g.Nh; ++j) {
        for (int i = 0; i < g.Ns; ++i) {
          const std::size_t id = static_cast<std::size_t>(g.fidx(i, j, k));
          out[id] += tw * g.dt * rv[id] * g.cell();
          if (k + 1 < g.Nt) out[id] += mf_acc * rv[id] * g.cell();
        }
      }
    }
  };

  // dL/drho with the rate field frozen (semi-implicit linearization).
  auto grad_rho = [&](const std::vector<double>& pv, const std::vector<double>& phiv,
                      const std::vector<double>& rate, double kappa, double uncleared,
                      std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> vslice(static_cast<std::size_t>(ss));
    std::vector<double> yslice(static_cast<std::size_t>(ss));
    std::vector<double> adj(static_cast<std::size_t>(ss));
    for (int k = 1; k < g.Nt; ++k) {
      const double tw = trapezoid_weight(k);
      for (int id = 0; id < ss; ++id)
        out[static_cast<std::size_t>(id + k * ss)] =
            tw * g.dt * pv[static_cast<std::size_t>(id + k * ss)] * g.cell() +
            w * phiv[static_cast<std::size_t>(id + (k - 1) * ss)] / g.dt;
      if (k + 1 < g.Nt) {
        for (int id = 0; id < ss; ++id) {
          vslice[static_cast<std::size_t>(id)] = rate[static_cast<std::size_t>(id + k * ss)];
          yslice[static_cast<std::size_t>(id)] = phiv[static_cast<std::size_t>(id + k * ss)];
        }
        generator_adjoint(vslice, yslice, g, adj);
        for (int id = 0; id < ss; ++id)
          out[static_cast<std::size_t>(id + k * ss)] +=
              w * (-yslice[static_cast<std::size_t>(id)] / g.dt - adj[static_cast<std::size_t>(id)]);
      }
    }
    for (int j = 0; j < g.Nh; ++j)
      out[static_cast<std::size_t>(g.fidx(0, j, g.Nt - 1))] -= kappa * uncleared * g.cell();
  };

  // Costate sweep: the multiplier that makes dL/drho vanish along the
  // current trajectory. Used to initialize the ascent at each continuation
  // round so the descent in p starts from a consistent saddle estimate.
  auto adjoint_sweep = [&](const std::vector<double>& pv, const std::vector<double>& rate,
                           double kappa, double uncleared, std::vector<double>& phiv) {
    std::vector<double> vs(static_cast<std::size_t>(ss));
    std::vector<double> ys(static_cast<std::size_t>(ss));
    std::vector<double> adj(static_cast<std::size_t>(ss));
    for (int id = 0; id < ss; ++id) {
      const int i = id % g.Ns;
      phiv[static_cast<std::size_t>(id + (g.Nt - 2) * ss)] =
          (i == 0 ? kappa * uncleared : 0.0) -
          0.5 * g.dt * pv[static_cast<std::size_t>(id + (g.Nt - 1) * ss)];
    }
    for (int k = g.Nt - 2; k >= 1; --k) {
      for (int id = 0; id < ss; ++id) {
        vs[static_cast<std::size_t>(id)] = rate[static_cast<std::size_t>(id + k * ss)];
        ys[static_cast<std::size_t>(id)] = phiv[static_cast<std::size_t>(id + k * ss)];
      }
      generator_adjoint(vs, ys, g, adj);
      for (int id = 0; id < ss; ++id)
        phiv[static_cast<std::size_t>(id + (k - 1) * ss)] =
            ys[static_cast<std::size_t>(id)] + g.dt * adj[static_cast<std::size_t>(id)] -
            g.dt * pv[static_cast<std::size_t>(id + k * ss)];
    }
  };

  // Norm of the residual linearization at the current point, by power
  // iteration with the exact transpose pieces.
  auto operator_norm = [&](const std::vector<double>& rate, const std::vector<double>& rv) {
    std::vector<double> xp(static_cast<std::size_t>(fs), 1.0);
    std::vector<double> xr(static_cast<std::size_t>(fs), 1.0);
    const auto derivs = detail::rate_derivatives(p, rv, cfg, g);
    std::vector<double> y(static_cast<std::size_t>(phis));
    std::vector<double> vs(static_cast<std::size_t>(ss)), buf(static_cast<std::size_t>(ss)),
        buf2(static_cast<std::size_t>(ss));
    double norm = 1.0;
    for (int it = 0; it < 25; ++it) {
      // y = K (xp, xr)
      for (int k = 0; k + 1 < g.Nt; ++k) {
        // linearized residual slice: (xr^{k+1} - xr^k)/dt - A(r) xr^k - A'(dr) rho^k
        for (int id = 0; id < ss; ++id)
          vs[static_cast<std::size_t>(id)] = rate[static_cast<std::size_t>(id + k * ss)];
        std::vector<double> xs(xr.begin() + k * ss, xr.begin() + (k + 1) * ss);
        generator_apply(vs, xs, g, buf);
        double mfp = 0.0;
        for (int id = 0; id < ss; ++id)
          mfp += rv[static_cast<std::size_t>(id + k * ss)] * xp[static_cast<std::size_t>(id + k * ss)];
        mfp *= g.cell();
        std::vector<double> dr(static_cast<std::size_t>(ss));
        for (int id = 0; id < ss; ++id) {
          const std::size_t fid = static_cast<std::size_t>(id + k * ss);
          dr[static_cast<std::size_t>(id)] = derivs.direct[fid] * xp[fid] + derivs.mean[fid] * mfp;
        }
        std::vector<double> rs(rv.begin() + k * ss, rv.begin() + (k + 1) * ss);
        advection_apply(dr, rs, g, buf2);
        for (int id = 0; id < ss; ++id)
          y[static_cast<std::size_t>(id + k * ss)] =
              w * ((xr[static_cast<std::size_t>(id + (k + 1) * ss)] - xs[static_cast<std::size_t>(id)]) / g.dt -
                   buf[static_cast<std::size_t>(id)] - buf2[static_cast<std::size_t>(id)]);
      }
      // (xp, xr) = K^T y
      std::vector<double> nxp(static_cast<std::size_t>(fs), 0.0);
      std::vector<double> nxr(static_cast<std::size_t>(fs), 0.0);
      for (int k = 0; k + 1 < g.Nt; ++k) {
        double mf_acc = 0.0;
        for (int j = 0; j < g.Nh; ++j) {
          for (int i = 1; i < g.Ns; ++i) {
            const std::size_t fid = static_cast<std::size_t>(g.fidx(i, j, k));
            const std::size_t pid = static_cast<std::size_t>(g.idx(i, j) + k * ss);
            const double gr = -w * rv[fid] *
                              (y[static_cast<std::size_t>(g.idx(i - 1, j) + k * ss)] - y[pid]) / g.ds;
            nxp[fid] += gr * derivs.direct[fid];
            mf_acc += gr * derivs.mean[fid];
          }
        }
        for (int id = 0; id < ss; ++id) {
          const std::size_t fid = static_cast<std::size_t>(id + k * ss);
          nxp[fid] += mf_acc * rv[fid] * g.cell();
        }
        for (int id = 0; id < ss; ++id)
          vs[static_cast<std::size_t>(id)] = rate[static_cast<std::size_t>(id + k * ss)];
        std::vector<double> ys(y.begin() + k * ss, y.begin() + (k + 1) * ss);
        generator_adjoint(vs, ys, g, buf);
        for (int id = 0; id < ss; ++id) {
          nxr[static_cast<std::size_t>(id + k * ss)] +=
              w * (-ys[static_cast<std::size_t>(id)] / g.dt - buf[static_cast<std::size_t>(id)]);
          nxr[static_cast<std::size_t>(id + (k + 1) * ss)] += w * ys[static_cast<std::size_t>(id)] / g.dt;
        }
      }
      double nn = 0.0;
      for (double vv : nxp) nn += vv * vv;
      for (double vv : nxr) nn += vv * vv;
      nn = std::sqrt(nn);
      if (nn < 1e-300) return 1e-12;
      for (auto& vv : nxp) vv /= nn;
      for (auto& vv : nxr) vv /= nn;
      xp.swap(nxp);
      xr.swap(nxr);
      norm = std::sqrt(nn);
    }
    return std::max(norm, 1e-12);
  };

  MfgSolution sol;
  double kappa = cfg.penalty0;
  std::vector<double> r_prev = rate_field(p, rho, cfg, g);
  std::vector<double> gp(static_cast<std::size_t>(fs));
  std::vector<double> gr(static_cast<std::size_t>(fs));
  int total_iters = 0;
  bool settled = false;

  // Cheapest power field whose rollout clears the deadline constraint.
  std::vector<double> best_p;
  double best_cost = std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<double>& cand) {
    const auto rf = forward_roll(cand, rho0, cfg, g);
    if (cleared_mass(rf, g) >= 0.999) {
      const double cost = total_power(cand, rf, g);
      if (cost < best_cost) {
        best_cost = cost;
        best_p = cand;
      }
      return true;
    }
    return false;
  };
  consider(p);

  bool polish = false;
  for (int round = 0; round < cfg.max_continuation; ++round) {
    adjoint_sweep(p, r_prev, kappa, 1.0 - cleared_mass(rho, g), phi);
    const double knorm = operator_norm(r_prev, rho);
    const double step = 0.1 / knorm;
    const double mass_per_slice = slice_mass(rho, g, 0) / g.cell();

    settled = false;
    for (int it = 0; it < cfg.max_pdhg_iters; ++it) {
      ++total_iters;
      grad_p(p, rho, phi, gp);
      std::vector<double> p_new = p;
      double dp = 0.0, pnorm = 1e-30;
      for (int k = 0; k < g.Nt; ++k)
        for (int j = 0; j < g.Nh; ++j)
          for (int i = 0; i < g.Ns; ++i) {
            const std::size_t id = static_cast<std::size_t>(g.fidx(i, j, k));
            double v = i == 0 ? 0.0
                              : std::clamp(p[id] - step * gp[id], 0.0,
                                           p_cap[static_cast<std::size_t>(j)]);
            dp += (v - p[id]) * (v - p[id]);
            pnorm += p[id] * p[id];
            p_new[id] = v;
          }

      const auto rate_new = rate_field(p_new, rho, cfg, g);
      const double uncleared = 1.0 - cleared_mass(rho, g);
      grad_rho(p_new, phi, rate_new, kappa, uncleared, gr);
      std::vector<double> rho_new = rho;
      double drh = 0.0, rnorm = 1e-30;
      for (int k = 1; k < g.Nt; ++k) {
        for (int id = 0; id < ss; ++id) {
          const std::size_t fid = static_cast<std::size_t>(id + k * ss);
          rho_new[fid] = rho[fid] - step * gr[fid];
        }
        detail::simplex_project(rho_new, k * ss, ss, mass_per_slice);
        for (int id = 0; id < ss; ++id) {
          const std::size_t fid = static_cast<std::size_t>(id + k * ss);
          drh += (rho_new[fid] - rho[fid]) * (rho_new[fid] - rho[fid]);
          rnorm += rho[fid] * rho[fid];
        }
      }

      const auto rate_next = rate_field(p_new, rho_new, cfg, g);
      std::vector<double> rho_bar(static_cast<std::size_t>(fs));
      std::vector<double> rate_bar(static_cast<std::size_t>(fs));
      for (int id = 0; id < fs; ++id) {
        rho_bar[static_cast<std::size_t>(id)] =
            2.0 * rho_new[static_cast<std::size_t>(id)] - rho[static_cast<std::size_t>(id)];
        rate_bar[static_cast<std::size_t>(id)] =
            2.0 * rate_next[static_cast<std::size_t>(id)] - r_prev[static_cast<std::size_t>(id)];
      }
      auto resid = transport_residual(rho_bar, rate_bar, g);
      for (auto& e : resid) e *= w;
      const auto dphi = h1.apply(resid);
      double dph = 0.0, phnorm = 1e-30;
      for (int id = 0; id < phis; ++id) {
        phi[static_cast<std::size_t>(id)] += step * dphi[static_cast<std::size_t>(id)];
        dph += step * step * dphi[static_cast<std::size_t>(id)] * dphi[static_cast<std::size_t>(id)];
        phnorm += phi[static_cast<std::size_t>(id)] * phi[static_cast<std::size_t>(id)];
      }

      p.swap(p_new);
      rho.swap(rho_new);
      r_prev = rate_next;

      if (total_iters % 50 == 0) consider(p);

      const double rel = std::sqrt(dp / pnorm) + std::sqrt(drh / rnorm) + std::sqrt(dph / phnorm);
      if (rel < cfg.tol) {
        settled = true;
        break;
      }
      if (!std::isfinite(rel))
        throw NumericalError("pdhg_solve: diverged; reduce the step sizes");
    }

    const auto rho_fwd = forward_roll(p, rho0, cfg, g);
    const bool feasible = consider(p) || !best_p.empty();
    rho = rho_fwd;
    r_prev = rate_field(p, rho, cfg, g);
    if (feasible) {
      // One extra round at the same penalty lets the descent trim the
      // overshoot accumulated while forcing the constraint.
      if (polish) break;
      polish = true;
    } else {
      kappa *= 10.0;
    }
  }

  if (!best_p.empty()) p = best_p;
  const auto rho_final = forward_roll(p, rho0, cfg, g);
  const auto rate_final = rate_field(p, rho_final, cfg, g);
  const auto resid = transport_residual(rho_final, rate_final, g);
  double rmax = 0.0;
  for (double e : resid) rmax = std::max(rmax, std::abs(e));

  sol.total_power = total_power(p, rho_final, g);
  sol.cleared_mass = cleared_mass(rho_final, g);
  sol.pde_residual = rmax;
  sol.iterations = total_iters;
  sol.converged = settled && sol.cleared_mass >= 0.999 && rmax <= cfg.residual_tol;
  if (out_grid) {
    out_grid->geom = g;
    out_grid->rho = rho_final;
    out_grid->p = p;
    out_grid->phi = phi;
  }
  return sol;
}

// ---- serialization ----

inline MfgConfig mfg_config_from_json(const nlohmann::json& j) {
  MfgConfig c;
  c.T = j.at("T").get<double>();
  c.eta = j.value("eta", 0.0);
  c.gbar = j.value("gbar", 0.0);
  c.noise = j.at("noise").get<double>();
  c.arrival_pmf.clear();
  for (const auto& a : j.at("arrival_pmf"))
    c.arrival_pmf.emplace_back(a.at(0).get<double>(), a.at(1).get<double>());
  if (j.contains("h_range")) {
    c.h_min = j.at("h_range").at(0).get<double>();
    c.h_max = j.at("h_range").at(1).get<double>();
  }
  if (j.contains("grid")) {
    c.Ns = j.at("grid").at(0).get<int>();
    c.Nh = j.at("grid").at(1).get<int>();
    c.Nt = j.at("grid").at(2).get<int>();
  }
  if (j.contains("h0_weights")) c.h0_weights = j.at("h0_weights").get<std::vector<double>>();
  if (j.contains("rho0")) c.rho0 = j.at("rho0").get<std::vector<double>>();
  c.s_max = j.value("s_max", 0.0);
  c.penalty0 = j.value("penalty0", c.penalty0);
  c.max_pdhg_iters = j.value("max_pdhg_iters", c.max_pdhg_iters);
  c.tol = j.value("tol", c.tol);
  return c;
}

inline void write_field_csv(const std::vector<double>& field, const GridGeom& g, std::ostream& os) {
  os << "s,h,tau,value\n";
  char buf[128];
  for (int k = 0; k < g.Nt; ++k)
    for (int j = 0; j < g.Nh; ++j)
      for (int i = 0; i < g.Ns; ++i) {
        std::snprintf(buf, sizeof(buf), "%.12g,%.12g,%.12g,%.12g\n", i * g.ds, g.h_at(j), k * g.dt,
                      field[static_cast<std::size_t>(g.fidx(i, j, k))]);
        os << buf;
      }
}

}  // namespace mfnet
