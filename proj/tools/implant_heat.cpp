// Command-line front end: every subcommand reads one INI file (optional) and
// accepts --section.key overrides for any setting.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "implantheat/config.hpp"
#include "implantheat/io.hpp"
#include "implantheat/scenarios.hpp"

namespace fs = std::filesystem;
using namespace implantheat;

namespace {

constexpr double kMu0 = 4e-7 * std::numbers::pi;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::input: return 3;
    case ErrorKind::geometry: return 4;
    case ErrorKind::numerical: return 5;
    case ErrorKind::solver: return 6;
    case ErrorKind::io: return 7;
  }
  return 1;
}

struct Loaded {
  scenarios::ScenarioConfig scenario;
  fs::path losses_file;  // optional precomputed branch_losses.csv
};

Loaded load(const std::string& file, const config::Config& overrides) {
  config::Config c = file.empty() ? config::Config{} : config::Config::parse_file(file);
  if (overrides.has("preset")) c.set("preset", overrides.get_string("preset"));
  for (const char* section : {"source", "implant", "grid", "materials", "exposure", "solver", "probes", "output"}) {
    for (const auto& k : overrides.keys(section)) {
      const std::string key = std::string(section) + "." + k;
      c.set(key, overrides.get_string(key));
    }
  }
  Loaded l{config::to_scenario(c), {}};
  if (l.scenario.output_dir.empty()) l.scenario.output_dir = fs::path("out") / l.scenario.name;
  if (c.has("implant.losses_file")) l.losses_file = c.get_path("implant.losses_file");
  return l;
}

scenarios::Progress progress_printer(bool quiet) {
  if (quiet) return {};
  return [](const std::string& model, std::size_t step, std::size_t steps) {
    const std::size_t every = std::max<std::size_t>(1, steps / 10);
    if (step % every == 0 || step == steps) std::fprintf(stderr, "%s: step %zu/%zu\n", model.c_str(), step, steps);
  };
}

em::BranchLosses losses_for(const Loaded& l, const scenarios::Scenario& s) {
  if (!l.losses_file.empty()) return io::read_branch_losses(l.losses_file, s.network);
  return scenarios::run_em(s).losses;
}

void put_probes(io::Summary& sum, const scenarios::Scenario& s, const scenarios::ThermalRun& run) {
  for (std::size_t i = 0; i < s.probes.size(); ++i) sum.set("probe." + s.probes[i].name, run.probe_series.back()[i]);
  for (const auto& p : s.points) sum.set("point." + p.name, s.grid.interpolate(run.final_field, p.center));
  sum.set("peak", *std::max_element(run.final_field.begin(), run.final_field.end()));
  sum.set("final_time_s", run.times.back());
}

std::vector<std::string> probe_names(const scenarios::Scenario& s) {
  std::vector<std::string> names;
  for (const auto& p : s.probes) names.push_back(p.name);
  return names;
}

int make_mesh(const Loaded& l, const std::string& out_arg) {
  const auto segs = scenarios::implant_segments(l.scenario);
  const auto net = geometry::build_network(segs, l.scenario.radius, l.scenario.conductivity);
  const fs::path out = out_arg.empty() ? l.scenario.output_dir / "segments.txt" : fs::path(out_arg);
  scenarios::write_segments(out, segs);
  std::printf("segments=%zu branches=%zu nodes=%zu loops=%zu file=%s\n", segs.size(), net.branch_count(),
              net.node_count(), net.branch_count() - net.node_count() + 1, out.string().c_str());
  return 0;
}

int solve_em(const Loaded& l) {
  const auto s = scenarios::build_scenario(l.scenario);
  const auto em = scenarios::run_em(s);
  const auto& dir = l.scenario.output_dir;
  io::write_branch_losses(dir / "branch_losses.csv", s.network, em.currents, em.losses);
  io::Summary sum;
  sum.set("scenario", l.scenario.name);
  sum.set("branches", s.network.branch_count());
  sum.set("loops", em.system.loops);
  sum.set("frequency_hz", l.scenario.frequency);
  sum.set("b_max_t", s.b_max);
  sum.set("total_power_w", em.losses.total);
  sum.set("source_power_w", em.source_power);
  sum.set("kcl_residual", em.currents.kcl_residual);
  sum.write(dir / "em_summary.txt");
  std::printf("loops=%zu total_power_w=%s\n", em.system.loops, io::format_double(em.losses.total).c_str());
  return 0;
}

int solve_seed(const Loaded& l, bool quiet) {
  const auto s = scenarios::build_scenario(l.scenario);
  const auto losses = losses_for(l, s);
  const auto run = scenarios::run_seed(s, losses, progress_printer(quiet));
  const auto& dir = l.scenario.output_dir;
  io::write_probe_csv(dir / "seed_probes.csv", probe_names(s), run.times, run.probe_series);
  io::write_vtk(dir / "seed_final.vtk", s.grid, {{"theta", run.final_field}});
  io::Summary sum;
  sum.set("scenario", l.scenario.name);
  sum.set("model", "seed");
  sum.set("total_power_w", losses.total);
  put_probes(sum, s, run);
  sum.write(dir / "seed_summary.txt");
  std::printf("seed peak=%s\n", io::format_double(*std::max_element(run.final_field.begin(), run.final_field.end())).c_str());
  return 0;
}

int solve_coupled(const Loaded& l, bool quiet) {
  const auto s = scenarios::build_scenario(l.scenario);
  const auto losses = losses_for(l, s);
  const auto run = scenarios::run_coupled(s, losses, progress_printer(quiet));
  const auto& dir = l.scenario.output_dir;
  io::write_probe_csv(dir / "coupled_probes.csv", probe_names(s), run.times, run.probe_series);
  io::write_diagnostics_csv(dir / "coupled_diagnostics.csv", std::span<const double>(run.times).subspan(1),
                            run.diagnostics);
  io::write_vtk(dir / "coupled_final.vtk", s.grid, {{"theta", run.final_field}});
  io::Summary sum;
  sum.set("scenario", l.scenario.name);
  sum.set("model", "coupled");
  sum.set("total_power_w", losses.total);
  put_probes(sum, s, run);
  double worst_mismatch = 0.0, worst_outer = 0.0;
  std::size_t max_outer = 0;
  for (const auto& d : run.diagnostics) {
    worst_mismatch = std::max(worst_mismatch, d.mismatch);
    worst_outer = std::max(worst_outer, d.outer_residual);
    max_outer = std::max(max_outer, d.outer_iterations);
  }
  sum.set("mismatch", run.diagnostics.empty() ? 0.0 : run.diagnostics.back().mismatch);
  sum.set("worst_mismatch", worst_mismatch);
  sum.set("worst_outer_residual", worst_outer);
  sum.set("max_outer_iterations", max_outer);
  sum.write(dir / "coupled_summary.txt");
  std::printf("coupled peak=%s worst_mismatch=%s\n",
              io::format_double(*std::max_element(run.final_field.begin(), run.final_field.end())).c_str(),
              io::format_double(worst_mismatch).c_str());
  return 0;
}

int compare(const Loaded& l, bool quiet) {
  const auto r = scenarios::run_comparison(l.scenario, progress_printer(quiet));
  for (const auto& p : r.probes) {
    std::printf("probe %s seed=%.4f coupled=%.4f reduction=%.1f%%\n", p.name.c_str(), p.seed, p.coupled,
                p.seed != 0.0 ? 100.0 * (p.seed - p.coupled) / p.seed : 0.0);
  }
  std::printf("peak seed=%.4f coupled=%.4f worst_mismatch=%.3g summary=%s\n", r.seed_peak, r.coupled_peak,
              r.worst_mismatch, (l.scenario.output_dir / "summary.txt").string().c_str());
  return 0;
}

int check_ab(const Loaded& l, double h_flag) {
  const double h = h_flag > 0.0 ? h_flag : l.scenario.b_peak / kMu0;
  const auto r = scenarios::ab_limit_check(h, l.scenario.frequency);
  std::printf("H=%.6g A/m f=%.6g Hz Hf=%.6g A/(m s) margin=%.4f %s\n", h, l.scenario.frequency, r.product, r.margin,
              r.pass ? "PASS" : "FAIL");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  config::Config overrides;
  try {
    args = config::apply_overrides(overrides, args);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  }

  CLI::App app{"Implant heating under low-frequency magnetic fields: thermal seed vs coupled 3D-1D model"};
  app.require_subcommand(1);
  std::string config_file, out;
  bool quiet = false;
  double h_field = 0.0;
  app.add_option("-c,--config", config_file, "INI configuration file")->check(CLI::ExistingFile);
  app.add_flag("-q,--quiet", quiet, "no progress output");
  app.footer("Any setting can be overridden with --section.key value (e.g. --grid.spacing 0.001).");
  auto* mesh = app.add_subcommand("make-mesh", "write the tiled implant as a segment file");
  mesh->add_option("-o,--out", out, "segment file (default <output.dir>/segments.txt)");
  app.add_subcommand("solve-em", "loop-current solve; writes branch_losses.csv and em_summary.txt");
  app.add_subcommand("solve-seed", "thermal-seed model; writes probe CSV, VTK and seed_summary.txt");
  app.add_subcommand("solve-coupled", "coupled 3D-1D model; writes probe, 1D and diagnostics CSVs");
  app.add_subcommand("compare", "EM solve, both thermal models and the comparison summary");
  auto* ab = app.add_subcommand("check-ab", "Atkinson-Brezovich H f < 5e9 A/(m s) check");
  ab->add_option("--h-field", h_field, "peak field strength in A/m (default source.b_peak / mu0)");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error[config]: %s\n", e.what());
    return exit_code(ErrorKind::config);
  }

  try {
    const Loaded l = load(config_file, overrides);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "make-mesh") return make_mesh(l, out);
    if (cmd == "solve-em") return solve_em(l);
    if (cmd == "solve-seed") return solve_seed(l, quiet);
    if (cmd == "solve-coupled") return solve_coupled(l, quiet);
    if (cmd == "compare") return compare(l, quiet);
    return check_ab(l, h_field);
  } catch (const Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
}
