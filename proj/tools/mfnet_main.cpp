#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mfnet/experiments.hpp"

using namespace mfnet;

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j;
}

void emit(const nlohmann::json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw ConfigError("cannot open output file: " + out);
    os << j.dump(2) << "\n";
  }
}

PowerPolicy policy_from_json(const nlohmann::json& j, const NetworkConfig& cfg) {
  const auto interf = interference_gain_distribution(cfg);
  const auto table = build_group_table(cfg, interf);
  const int Ng = static_cast<int>(cfg.fading_levels.size()) * cfg.Nm;
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    return PowerPolicy::from_powers(p.at("table").get<std::vector<double>>(), p.at("NI").get<int>(),
                                    p.at("Ng").get<int>());
  }
  if (j.contains("uniform_power"))
    return PowerPolicy::uniform(table.NI, Ng, j.at("uniform_power").get<double>());
  // Default: solve the reduced problem and use the optimal allocation.
  const auto w = wtm_from_config(cfg);
  const auto sol = mapel_solve(w, 0.01);
  return PowerPolicy::from_powers(sol.p, table.NI, Ng);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean-field throughput analysis and power control toolkit"};
  app.require_subcommand(1);

  RunOptions opts;
  app.add_option("--seed", opts.seed, "master RNG seed");
  app.add_option("--trials", opts.trials, "Monte Carlo trials");
  app.add_option("--out", opts.out_dir, "output file or directory");
  app.add_flag("--full", opts.full, "run the full 1e5-trial experiments");

  std::string preset;
  auto* run = app.add_subcommand("run", "run a named experiment preset");
  run->add_option("preset", preset, "preset name")->required();

  std::string wtm_path;
  auto* solve = app.add_subcommand("solve-wtm", "solve a reduced problem from JSON");
  solve->add_option("json", wtm_path, "MeanFieldWtm JSON file")->required();
  double delta0 = 0.01;
  solve->add_option("--delta0", delta0, "termination gap");

  std::string mfg_path;
  auto* mfg = app.add_subcommand("mfg", "solve the delay-constrained population problem");
  mfg->add_option("json", mfg_path, "MfgConfig JSON file")->required();
  bool export_fields = false;
  mfg->add_flag("--export-fields", export_fields, "write rho/p grids as CSV next to the output");

  std::string cap_kind, cap_path;
  auto* capacity = app.add_subcommand("capacity", "optimize the equivalent single-hop network");
  capacity->add_option("kind", cap_kind, "iesh-s or iesh-g")->required();
  capacity->add_option("json", cap_path, "capacity request JSON")->required();

  std::string sim_path;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo network simulation");
  simulate->add_option("json", sim_path, "simulation request JSON")->required();

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a config file against the invariants");
  validate->add_option("path", validate_path, "JSON config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      if (std::find(preset_names().begin(), preset_names().end(), preset) == preset_names().end()) {
        std::cerr << "unknown preset: " << preset << "\nknown presets:";
        for (const auto& n : preset_names()) std::cerr << " " << n;
        std::cerr << "\n";
        return 2;
      }
      if (opts.out_dir.empty()) opts.out_dir = ".";
      const auto path = run_preset(preset, opts);
      std::cout << path << "\n";
      return 0;
    }

    if (*solve) {
      const auto w = wtm_from_json(load_json(wtm_path));
      const auto feas = feasibility_check(w);
      if (!feas.feasible) {
        nlohmann::json j;
        j["feasible"] = false;
        j["spectral_radius"] = feas.spectral_radius;
        emit(j, opts.out_dir == "." ? "" : opts.out_dir);
        return 1;
      }
      const auto sol = mapel_solve(w, delta0);
      auto j = power_solution_to_json(sol);
      j["feasible"] = true;
      j["spectral_radius"] = feas.spectral_radius;
      emit(j, opts.out_dir == "." ? "" : opts.out_dir);
      return sol.converged ? 0 : 1;
    }

    if (*mfg) {
      const auto cfg = mfg_config_from_json(load_json(mfg_path));
      MfgGrid grid;
      const auto sol = pdhg_solve(cfg, &grid);
      nlohmann::json j;
      j["total_power"] = sol.total_power;
      j["cleared_mass"] = sol.cleared_mass;
      j["pde_residual"] = sol.pde_residual;
      j["iterations"] = sol.iterations;
      j["converged"] = sol.converged;
      emit(j, opts.out_dir == "." ? "" : opts.out_dir);
      if (export_fields) {
        std::ofstream rho_os("mfg_rho.csv", std::ios::binary);
        write_field_csv(grid.rho, grid.geom, rho_os);
        std::ofstream p_os("mfg_p.csv", std::ios::binary);
        write_field_csv(grid.p, grid.geom, p_os);
      }
      return sol.converged ? 0 : 1;
    }

    if (*capacity) {
      const auto j = load_json(cap_path);
      const auto cfg = network_config_from_json(j.at("config"));
      IeshOptions io;
      io.r_min_bracket = j.at("r_min_bracket").get<double>();
      io.r_max_bracket = j.at("r_max_bracket").get<double>();
      io.delta_r = j.value("delta_r", 0.0);
      io.ds_bins = j.value("ds_bins", 21);
      io.mapel_delta0 = j.value("mapel_delta0", 0.01);
      CapacityResult res;
      if (cap_kind == "iesh-s")
        res = iesh_s_capacity(cfg, io);
      else if (cap_kind == "iesh-g")
        res = iesh_g_capacity(cfg, io);
      else {
        std::cerr << "capacity kind must be iesh-s or iesh-g\n";
        return 2;
      }
      emit(capacity_result_to_json(res), "");
      if (opts.out_dir != ".") {
        std::ofstream os(opts.out_dir, std::ios::binary);
        write_capacity_trace_csv(res, os);
      }
      return res.feasible ? 0 : 1;
    }

    if (*simulate) {
      const auto j = load_json(sim_path);
      const auto cfg = network_config_from_json(j.at("config"));
      const auto policy = policy_from_json(j, cfg);
      const auto rep = simulate_massive(cfg, policy, opts.trials, opts.seed);
      emit(sim_report_to_json(rep), "");
      if (opts.out_dir != ".") {
        std::ofstream os(opts.out_dir, std::ios::binary);
        write_histogram_csv(rep, os);
      }
      return 0;
    }

    if (*validate) {
      const auto diags = validate_config_file(validate_path);
      for (const auto& d : diags) std::cout << d << "\n";
      if (diags.empty()) {
        std::cout << "ok\n";
        return 0;
      }
      return 2;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const SizeError& e) {
    std::cerr << "size error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
