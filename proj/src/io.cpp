#include "implantheat/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace implantheat::io {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_output(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

namespace {

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw Error(ErrorKind::io, "write to '" + path.string() + "' failed");
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  return cells;
}

double parse_number(const std::string& text, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && *first == ' ') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw Error(ErrorKind::io, path.string() + ":" + std::to_string(line) + ": bad number '" + text + "'");
  }
  return v;
}

}  // namespace

void write_branch_losses(const fs::path& path, const geometry::ImplantNetwork& network,
                         const em::BranchCurrents& currents, const em::BranchLosses& losses) {
  const std::size_t nb = network.branch_count();
  if (currents.branch.size() != nb || losses.linear_density.size() != nb) {
    throw Error(ErrorKind::input, "loss table does not match the network");
  }
  auto out = open_output(path);
  out << "branch,from,to,length_m,resistance_ohm,current_abs_a,p_em_l_w_per_m\n";
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& br = network.branches()[b];
    const double l = network.length(b);
    out << b << ',' << br.from << ',' << br.to << ',' << format_double(l) << ','
        << format_double(em::branch_resistance(l, network.radius(), network.conductivity())) << ','
        << format_double(std::abs(currents.branch[b])) << ',' << format_double(losses.linear_density[b]) << '\n';
  }
  finish(out, path);
}

em::BranchLosses read_branch_losses(const fs::path& path, const geometry::ImplantNetwork& network) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::io, "'" + path.string() + "' is empty");
  const auto header = split_csv(line);
  std::size_t col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "p_em_l_w_per_m") col = i;
  }
  if (col == header.size()) throw Error(ErrorKind::io, "'" + path.string() + "' has no p_em_l_w_per_m column");
  std::vector<double> density(network.branch_count(), 0.0);
  std::vector<bool> seen(network.branch_count(), false);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::io, path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    }
    const double id = parse_number(cells[0], path, lineno);
    if (id < 0 || id >= static_cast<double>(density.size()) || id != static_cast<double>(static_cast<std::size_t>(id))) {
      throw Error(ErrorKind::io, path.string() + ":" + std::to_string(lineno) + ": branch id out of range");
    }
    const auto b = static_cast<std::size_t>(id);
    density[b] = parse_number(cells[col], path, lineno);
    seen[b] = true;
  }
  for (std::size_t b = 0; b < seen.size(); ++b) {
    if (!seen[b]) throw Error(ErrorKind::io, "'" + path.string() + "' lacks branch " + std::to_string(b));
  }
  return em::losses_from_density(network, std::move(density));
}

void write_probe_csv(const fs::path& path, std::span<const std::string> names, std::span<const double> times,
                     const std::vector<std::vector<double>>& series) {
  if (series.size() != times.size()) throw Error(ErrorKind::input, "probe series and times differ in length");
  auto out = open_output(path);
  out << "time_s";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (series[t].size() != names.size()) throw Error(ErrorKind::input, "probe row width mismatch");
    out << format_double(times[t]);
    for (double v : series[t]) out << ',' << format_double(v);
    out << '\n';
  }
  finish(out, path);
}

void write_profile_csv(const fs::path& path, std::span<const coupled::Profile1D> profile) {
  auto out = open_output(path);
  out << "branch,arc_m,theta_hat\n";
  for (const auto& p : profile) out << p.branch << ',' << format_double(p.arc) << ',' << format_double(p.value) << '\n';
  finish(out, path);
}

void write_diagnostics_csv(const fs::path& path, std::span<const double> times,
                           std::span<const coupled::StepDiagnostics> diagnostics) {
  if (times.size() != diagnostics.size()) throw Error(ErrorKind::input, "diagnostics and times differ in length");
  auto out = open_output(path);
  out << "step,time_s,functional,mismatch,outer_iterations,outer_residual,inner_solves,inner_iterations,"
         "max_inner_iterations,worst_inner_residual,enthalpy_gain_j,injected_energy_j\n";
  for (std::size_t i = 0; i < diagnostics.size(); ++i) {
    const auto& d = diagnostics[i];
    out << i + 1 << ',' << format_double(times[i]) << ',' << format_double(d.functional) << ','
        << format_double(d.mismatch) << ',' << d.outer_iterations << ',' << format_double(d.outer_residual) << ','
        << d.inner_solves << ',' << d.inner_iterations << ',' << d.max_inner_iterations << ','
        << format_double(d.worst_inner_residual) << ',' << format_double(d.enthalpy_gain) << ','
        << format_double(d.injected_energy) << '\n';
  }
  finish(out, path);
}

void write_vtk(const fs::path& path, const geometry::VoxelGrid& grid,
               const std::vector<std::pair<std::string, std::span<const double>>>& fields, const std::string& title) {
  const auto nd = grid.node_dims();
  for (const auto& [name, values] : fields) {
    if (values.size() != grid.node_count()) throw Error(ErrorKind::input, "field '" + name + "' does not match the grid");
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw Error(ErrorKind::input, "VTK field names must be non-empty without whitespace");
    }
  }
  auto out = open_output(path);
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << nd[0] << ' ' << nd[1] << ' ' << nd[2] << '\n';
  out << "ORIGIN " << format_double(grid.origin().x) << ' ' << format_double(grid.origin().y) << ' '
      << format_double(grid.origin().z) << '\n';
  out << "SPACING " << format_double(grid.spacing().x) << ' ' << format_double(grid.spacing().y) << ' '
      << format_double(grid.spacing().z) << '\n';
  out << "POINT_DATA " << grid.node_count() << '\n';
  // node_index runs x fastest, which is the VTK point order
  for (const auto& [name, values] : fields) {
    out << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (std::size_t n = 0; n < values.size(); ++n) {
      out << format_double(values[n]) << ((n % 9 == 8 || n + 1 == values.size()) ? '\n' : ' ');
    }
  }
  finish(out, path);
}

void Summary::put(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
    throw Error(ErrorKind::input, "summary keys must be non-empty single-line text without '='");
  }
  for (auto& e : entries_) {
    if (e.first == key) {
      e.second = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

void Summary::set(const std::string& key, double value) { put(key, format_double(value)); }
void Summary::set(const std::string& key, std::size_t value) { put(key, std::to_string(value)); }
void Summary::set(const std::string& key, bool value) { put(key, value ? "true" : "false"); }
void Summary::set(const std::string& key, const std::string& value) { put(key, value); }

void Summary::write(const fs::path& path) const {
  auto out = open_output(path);
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
  finish(out, path);
}

std::map<std::string, std::string> read_summary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::io, "'" + path.string() + "': line without '='");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace implantheat::io
