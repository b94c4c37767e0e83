#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <json.hpp>

#include "mfnet/common.hpp"
#include "mfnet/linprog.hpp"
#include "mfnet/meanfield_reduction.hpp"

namespace mfnet {

struct FeasibilityResult {
  bool feasible = false;
  std::vector<double> p_check;   // power solving the SINR equalities, when the radius allows
  double spectral_radius = 0.0;
};

struct PowerSolution {
  std::vector<double> p;
  double rate = 0.0;             // sum_i omega_i log2(pi_i)
  int iterations = 0;
  bool converged = false;
  bool feasible = true;
  double gap = 0.0;              // relative vertex-projection gap at termination
  std::vector<double> z;         // final projection, z_i = 1 + SINR_i(p)
};

namespace detail {

inline Eigen::MatrixXd feasibility_matrix(const MeanFieldWtm& w, const std::vector<double>& gamma) {
  const int n = w.size();
  Eigen::MatrixXd F(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      F(i, j) = gamma[static_cast<std::size_t>(i)] *
                w.Gt[static_cast<std::size_t>(j) * n + i] / w.g[static_cast<std::size_t>(i)];
  return F;
}

inline double power_iteration_radius(const Eigen::MatrixXd& F, double tol = 1e-10,
                                     int cap = 10000) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(F.rows());
  double rho = 0.0;
  for (int it = 0; it < cap; ++it) {
    Eigen::VectorXd w = F * v;
    const double norm = w.norm();
    if (norm < 1e-300) return 0.0;
    const double next = norm / v.norm();
    w /= norm;
    if (std::abs(next - rho) <= tol * std::max(1.0, next)) return next;
    rho = next;
    v = w;
  }
  return rho;
}

}  // namespace detail

/// Largest-modulus eigenvalue of a nonnegative matrix: dense solve at small
/// sizes, power iteration beyond.
inline double spectral_radius(const Eigen::MatrixXd& F) {
  if (F.rows() <= 64) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(F, /*computeEigenvectors=*/false);
    double rho = 0.0;
    for (int i = 0; i < F.rows(); ++i) rho = std::max(rho, std::abs(es.eigenvalues()[i]));
    return rho;
  }
  return detail::power_iteration_radius(F);
}

/// Existence test for powers meeting per-group SINR targets within the box
/// (and the average-power cap when one is set). Solves (I - F) p = b at the
/// targets and checks the resulting power vector.
inline FeasibilityResult feasibility_at(const MeanFieldWtm& w, const std::vector<double>& gamma) {
  const int n = w.size();
  FeasibilityResult res;
  const Eigen::MatrixXd F = detail::feasibility_matrix(w, gamma);
  res.spectral_radius = spectral_radius(F);
  if (res.spectral_radius >= 1.0) return res;

  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i)
    b(i) = gamma[static_cast<std::size_t>(i)] * w.noise / w.g[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - F;
  const Eigen::VectorXd p = A.partialPivLu().solve(b);
  const double resid = (A * p - b).norm();
  if (!(resid <= 1e-8 * std::max(1.0, b.norm())))
    throw NumericalError("feasibility: (I-F) ill-conditioned, spectral radius " +
                         std::to_string(res.spectral_radius));

  res.p_check.assign(p.data(), p.data() + n);
  bool ok = true;
  double weighted = 0.0;
  for (int i = 0; i < n; ++i) {
    if (p(i) < -1e-12 || p(i) > w.p_max * (1.0 + 1e-12)) ok = false;
    weighted += w.omega[static_cast<std::size_t>(i)] * p(i);
  }
  if (w.p_ave && weighted > *w.p_ave * (1.0 + 1e-12)) ok = false;
  res.feasible = ok;
  return res;
}

inline FeasibilityResult feasibility_check(const MeanFieldWtm& w) {
  std::vector<double> gamma(static_cast<std::size_t>(w.size()), w.gamma_min());
  return feasibility_at(w, gamma);
}

/// Can some in-box power vector reach 1 + SINR_i >= v_i for every group
/// (on top of the problem's own rate floor)?
inline bool sinr_vector_achievable(const MeanFieldWtm& w, const std::vector<double>& v) {
  std::vector<double> gamma(v.size());
  const double floor = w.gamma_min();
  for (std::size_t i = 0; i < v.size(); ++i) gamma[i] = std::max(v[i] - 1.0, floor);
  try {
    return feasibility_at(w, gamma).feasible;
  } catch (const NumericalError&) {
    return false;
  }
}

inline double weighted_rate(const std::vector<double>& p, const MeanFieldWtm& w) {
  const int n = w.size();
  double rate = 0.0;
  for (int i = 0; i < n; ++i) {
    const double sinr = p[static_cast<std::size_t>(i)] * w.g[static_cast<std::size_t>(i)] /
                        (w.interference_at(i, p) + w.noise);
    rate += w.omega[static_cast<std::size_t>(i)] * shannon_rate(sinr);
  }
  return rate;
}

struct DinkelbachResult {
  double mu = 0.0;
  std::vector<double> projection;  // mu * z, on the boundary of the SINR region
  std::vector<double> p;           // power achieving the projection
  int iterations = 0;
};

/// Projection of z onto the feasible SINR region along the ray through the
/// origin: mu = max over feasible p of min_i ftilde_i(p) / (z_i fhat_i(p)).
/// Each inner step is the exact LP max_p min_i (ftilde_i - mu z_i fhat_i).
inline DinkelbachResult dinkelbach_projection(const std::vector<double>& z,
                                              const MeanFieldWtm& w) {
  const int n = w.size();
  for (double zi : z)
    if (!(zi > 0.0)) throw ConfigError("dinkelbach_projection: z must be positive");

  const double gamma = w.gamma_min();
  auto ratio_min = [&](const std::vector<double>& p) {
    double m = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      const double fhat = w.interference_at(i, p) + w.noise;
      const double ftilde = p[static_cast<std::size_t>(i)] * w.g[static_cast<std::size_t>(i)] + fhat;
      m = std::min(m, ftilde / (z[static_cast<std::size_t>(i)] * fhat));
    }
    return m;
  };

  // Start from the rate-floor equality point: it is always in the feasible
  // set once feasibility_check has passed (the zero vector when r_min = 0).
  std::vector<double> p_cur(static_cast<std::size_t>(n), 0.0);
  if (gamma > 0.0) {
    std::vector<double> gvec(static_cast<std::size_t>(n), gamma);
    auto feas = feasibility_at(w, gvec);
    if (!feas.feasible)
      throw ConfigError("dinkelbach_projection: rate floor infeasible");
    p_cur = feas.p_check;
    for (auto& x : p_cur) x = std::clamp(x, 0.0, w.p_max);
  }

  DinkelbachResult out;
  out.mu = ratio_min(p_cur);
  out.p = p_cur;

  // Gains and noise enter the LP only through SINR ratios, so the data is
  // normalized to unit scale; the surrogate and its 1e-9 stopping rule are
  // then scale-free and the solve path is covariant under joint rescaling.
  double scale = w.noise;
  for (int i = 0; i < n; ++i) scale = std::max(scale, w.noise + w.g[static_cast<std::size_t>(i)] * w.p_max);
  const double s = 1.0 / scale;
  const double tol = 1e-9;
  const int cap = 200;
  for (int k = 0; k < cap; ++k) {
    ++out.iterations;
    // LP variables: p_0..p_{n-1}, t+, t-.
    LinearProgram lp;
    lp.num_vars = n + 2;
    lp.objective.assign(static_cast<std::size_t>(n + 2), 0.0);
    lp.objective[static_cast<std::size_t>(n)] = 1.0;
    lp.objective[static_cast<std::size_t>(n) + 1] = -1.0;
    for (int i = 0; i < n; ++i) {
      const double c = out.mu * z[static_cast<std::size_t>(i)];
      std::vector<double> row(static_cast<std::size_t>(n + 2), 0.0);
      for (int j = 0; j < n; ++j)
        row[static_cast<std::size_t>(j)] = -s * (1.0 - c) * w.Gt[static_cast<std::size_t>(j) * n + i];
      row[static_cast<std::size_t>(i)] -= s * w.g[static_cast<std::size_t>(i)];
      row[static_cast<std::size_t>(n)] = 1.0;
      row[static_cast<std::size_t>(n) + 1] = -1.0;
      lp.add_row(std::move(row), s * (1.0 - c) * w.noise);
    }
    if (gamma > 0.0) {
      for (int i = 0; i < n; ++i) {
        std::vector<double> row(static_cast<std::size_t>(n + 2), 0.0);
        for (int j = 0; j < n; ++j)
          row[static_cast<std::size_t>(j)] = s * gamma * w.Gt[static_cast<std::size_t>(j) * n + i];
        row[static_cast<std::size_t>(i)] -= s * w.g[static_cast<std::size_t>(i)];
        lp.add_row(std::move(row), -s * gamma * w.noise);
      }
    }
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(static_cast<std::size_t>(n + 2), 0.0);
      row[static_cast<std::size_t>(i)] = 1.0;
      lp.add_row(std::move(row), w.p_max);
    }
    if (w.p_ave) {
      std::vector<double> row(static_cast<std::size_t>(n + 2), 0.0);
      for (int j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = w.omega[static_cast<std::size_t>(j)];
      lp.add_row(std::move(row), *w.p_ave);
    }

    const auto sol = solve_lp(lp);
    if (sol.status != LpSolution::Status::optimal)
      throw NumericalError("dinkelbach_projection: inner LP failed (status " +
                           std::to_string(static_cast<int>(sol.status)) + ")");
    if (sol.objective <= tol) break;

    std::vector<double> p_next(sol.x.begin(), sol.x.begin() + n);
    for (auto& x : p_next) x = std::clamp(x, 0.0, w.p_max);
    const double mu_next = ratio_min(p_next);
    if (mu_next <= out.mu + 1e-13 * std::max(1.0, out.mu)) {
      if (sol.objective <= 1e-7) break;  // at LP precision; accept the iterate
      throw NumericalError("dinkelbach_projection: stalled at mu=" + std::to_string(out.mu) +
                           " surrogate=" + std::to_string(sol.objective));
    }
    out.mu = mu_next;
    out.p = std::move(p_next);
  }

  out.projection.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.projection[static_cast<std::size_t>(i)] = out.mu * z[static_cast<std::size_t>(i)];
  return out;
}

namespace detail {

/// Solve 1 + SINR_i(p) = pi_i exactly (a linear system of the feasibility
/// form). Falls back to the supplied power vector if conditioning is poor.
inline std::vector<double> power_for_projection(const MeanFieldWtm& w,
                                                const std::vector<double>& pi,
                                                const std::vector<double>& fallback) {
  const int n = w.size();
  std::vector<double> gamma(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) gamma[static_cast<std::size_t>(i)] = std::max(pi[static_cast<std::size_t>(i)] - 1.0, 0.0);
  try {
    const Eigen::MatrixXd F = feasibility_matrix(w, gamma);
    if (spectral_radius(F) >= 1.0 - 1e-12) return fallback;
    Eigen::VectorXd b(n);
    for (int i = 0; i < n; ++i)
      b(i) = gamma[static_cast<std::size_t>(i)] * w.noise / w.g[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - F;
    const Eigen::VectorXd p = A.partialPivLu().solve(b);
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      if (p(i) < -1e-9 || p(i) > w.p_max * (1.0 + 1e-9)) return fallback;
      out[static_cast<std::size_t>(i)] = std::clamp(p(i), 0.0, w.p_max);
    }
    return out;
  } catch (...) {
    return fallback;
  }
}

}  // namespace detail

struct MapelOptions {
  double delta0 = 0.01;
  int max_iterations = 10000;
  std::size_t vertex_cap = 100000;
};

/// Polyblock outer approximation for the reduced WTM problem. Vertices
/// shrink onto the achievable SINR region; each selected vertex is projected
/// by the Dinkelbach step and split into size() children.
inline PowerSolution mapel_solve(const MeanFieldWtm& w, double delta0 = 0.01,
                                 MapelOptions opts = {}) {
  opts.delta0 = delta0;
  const int n = w.size();
  const auto feas = feasibility_check(w);
  if (!feas.feasible)
    throw ConfigError("mapel_solve: problem infeasible (spectral radius " +
                      std::to_string(feas.spectral_radius) + ")");

  const double theta_floor = 1.0 + w.gamma_min();
  auto log_obj = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += w.omega[static_cast<std::size_t>(i)] * std::log2(v[static_cast<std::size_t>(i)]);
    return s;
  };

  struct Vertex {
    std::vector<double> v;
    double obj;
  };
  std::vector<Vertex> verts;
  {
    std::vector<double> v1(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      v1[static_cast<std::size_t>(i)] = 1.0 + w.g[static_cast<std::size_t>(i)] * w.p_max / w.noise;
    verts.push_back({v1, log_obj(v1)});
  }

  PowerSolution best;
  best.rate = -std::numeric_limits<double>::infinity();
  bool exact = true;
  int iter = 0;
  double last_gap = 1.0;

  for (; iter < opts.max_iterations; ++iter) {
    int pick = -1;
    for (std::size_t idx = 0; idx < verts.size(); ++idx)
      if (pick < 0 || verts[idx].obj > verts[static_cast<std::size_t>(pick)].obj)
        pick = static_cast<int>(idx);
    if (pick < 0) break;  // vertex set exhausted

    const std::vector<double> z = verts[static_cast<std::size_t>(pick)].v;
    const auto proj = dinkelbach_projection(z, w);
    last_gap = 1.0 - proj.mu;

    const double proj_obj = log_obj(proj.projection);
    if (proj_obj > best.rate) {
      best.rate = proj_obj;
      best.z = proj.projection;
      best.p = proj.p;
    }

    if (last_gap <= opts.delta0) {
      best.converged = true;
      break;
    }

    verts.erase(verts.begin() + pick);
    const std::size_t existing = verts.size();
    for (int m = 0; m < n; ++m) {
      std::vector<double> child = z;
      child[static_cast<std::size_t>(m)] = proj.projection[static_cast<std::size_t>(m)];
      if (child[static_cast<std::size_t>(m)] < theta_floor - 1e-12) continue;  // leaves the rate-floor box
      const double obj = log_obj(child);
      if (obj <= best.rate + 1e-14) continue;  // cannot beat the incumbent
      // The set stays an antichain, so only prior vertices can dominate a
      // child (children of one split differ in distinct coordinates).
      bool dominated = false;
      for (std::size_t a = 0; a < existing && !dominated; ++a) {
        bool le = true;
        for (int i = 0; i < n && le; ++i)
          le = child[static_cast<std::size_t>(i)] <= verts[a].v[static_cast<std::size_t>(i)] + 1e-15;
        dominated = le;
      }
      if (!dominated) verts.push_back({std::move(child), obj});
    }
    // Bound pruning: the incumbent may have improved past older vertices.
    std::erase_if(verts, [&](const Vertex& v) { return v.obj <= best.rate + 1e-14; });
    if (verts.size() > opts.vertex_cap) {
      std::nth_element(verts.begin(), verts.begin() + static_cast<std::ptrdiff_t>(opts.vertex_cap),
                       verts.end(),
                       [](const Vertex& x, const Vertex& y) { return x.obj > y.obj; });
      verts.resize(opts.vertex_cap);
      exact = false;
    }
    if (verts.empty()) {
      // Every remaining cover box is bounded by the incumbent: optimal.
      best.converged = true;
      last_gap = 0.0;
      break;
    }
  }

  best.iterations = iter + 1;
  best.gap = last_gap;
  if (!exact) best.converged = false;
  if (best.z.empty()) throw NumericalError("mapel_solve: no projection produced");
  best.p = detail::power_for_projection(w, best.z, best.p);
  // Report the projection actually realized by the returned power vector.
  for (int i = 0; i < n; ++i) {
    const double sinr = best.p[static_cast<std::size_t>(i)] * w.g[static_cast<std::size_t>(i)] /
                        (w.interference_at(i, best.p) + w.noise);
    best.z[static_cast<std::size_t>(i)] = 1.0 + sinr;
  }
  best.rate = log_obj(best.z);
  best.feasible = true;
  return best;
}

/// Exhaustive oracle over a uniform power grid; rejection handles the rate
/// floor. Deliberately brute force so solver tests have an independent path.
inline PowerSolution oracle_grid_search(const MeanFieldWtm& w, int grid_points) {
  const int n = w.size();
  if (n > 4) throw SizeError("oracle_grid_search: more than 4 groups");
  if (grid_points < 2) throw ConfigError("oracle_grid_search: need at least 2 grid points");

  PowerSolution best;
  best.feasible = false;
  best.rate = -std::numeric_limits<double>::infinity();
  std::vector<double> p(static_cast<std::size_t>(n), 0.0);
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  const double step = w.p_max / (grid_points - 1);

  while (true) {
    for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i)] * step;
    bool ok = true;
    if (w.p_ave) {
      double weighted = 0.0;
      for (int i = 0; i < n; ++i) weighted += w.omega[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(i)];
      ok = weighted <= *w.p_ave * (1.0 + 1e-12);
    }
    double obj = 0.0;
    if (ok) {
      for (int i = 0; i < n; ++i) {
        const double sinr = p[static_cast<std::size_t>(i)] * w.g[static_cast<std::size_t>(i)] /
                            (w.interference_at(i, p) + w.noise);
        const double rate = shannon_rate(sinr);
        if (rate < w.r_min - 1e-9) {
          ok = false;
          break;
        }
        obj += w.omega[static_cast<std::size_t>(i)] * std::log2(1.0 + sinr);
      }
    }
    if (ok && obj > best.rate) {
      best.rate = obj;
      best.p = p;
      best.feasible = true;
    }
    int d = 0;
    while (d < n) {
      if (++idx[static_cast<std::size_t>(d)] < grid_points) break;
      idx[static_cast<std::size_t>(d)] = 0;
      ++d;
    }
    if (d == n) break;
  }

  if (!best.feasible) {
    best.rate = 0.0;
    best.converged = false;
    return best;
  }
  best.converged = true;
  best.z.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double sinr = best.p[static_cast<std::size_t>(i)] * w.g[static_cast<std::size_t>(i)] /
                        (w.interference_at(i, best.p) + w.noise);
    best.z[static_cast<std::size_t>(i)] = 1.0 + sinr;
  }
  return best;
}

inline nlohmann::json power_solution_to_json(const PowerSolution& s) {
  nlohmann::json j;
  j["p"] = s.p;
  j["rate"] = s.rate;
  j["iterations"] = s.iterations;
  j["converged"] = s.converged;
  j["gap"] = s.gap;
  return j;
}

}  // namespace mfnet
