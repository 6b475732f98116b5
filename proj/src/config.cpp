#include "implantheat/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace implantheat::config {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::set<std::string> kSections{"source", "implant", "grid",   "materials",
                                      "exposure", "solver", "probes", "output"};

std::string section_of(const std::string& key) {
  const auto dot = key.find('.');
  return dot == std::string::npos ? std::string{} : key.substr(0, dot);
}

void check_key(const std::string& key) {
  const auto sec = section_of(key);
  if (key == "preset") return;
  if (sec.empty() || key.size() == sec.size() + 1) {
    throw Error(ErrorKind::config, "key '" + key + "' must have the form section.key");
  }
  if (!kSections.count(sec)) throw Error(ErrorKind::config, "unknown section '" + sec + "'");
}

double to_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::config, "'" + key + "' expects a number, got '" + text + "'");
  }
  return v;
}

}  // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config c;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = [&] { return origin + ":" + std::to_string(lineno) + ": "; };
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.resize(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw Error(ErrorKind::config, where() + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!kSections.count(section)) throw Error(ErrorKind::config, where() + "unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::config, where() + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw Error(ErrorKind::config, where() + "empty key");
    const std::string dotted = section.empty() ? key : section + "." + key;
    try {
      if (c.has(dotted)) throw Error(ErrorKind::config, "duplicate key '" + dotted + "'");
      c.set(dotted, trim(line.substr(eq + 1)));
    } catch (const Error& e) {
      throw Error(ErrorKind::config, where() + e.what());
    }
  }
  return c;
}

Config Config::parse_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  Config c = parse_string(ss.str(), path.string());
  c.base_dir_ = path.parent_path();
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  check_key(key);
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = value;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

std::vector<std::string> Config::keys(const std::string& section) const {
  std::vector<std::string> out;
  for (const auto& k : order_) {
    if (section_of(k) == section) out.push_back(k.substr(section.size() + 1));
  }
  return out;
}

std::string Config::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorKind::config, "missing required key '" + key + "'");
  return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : to_double(key, it->second);
}

long Config::get_int(const std::string& key, long fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const std::string t = trim(it->second);
  long v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) {
    throw Error(ErrorKind::config, "'" + key + "' expects an integer, got '" + it->second + "'");
  }
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::string t = trim(it->second);
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (t == "true" || t == "yes" || t == "on" || t == "1") return true;
  if (t == "false" || t == "no" || t == "off" || t == "0") return false;
  throw Error(ErrorKind::config, "'" + key + "' expects a boolean, got '" + it->second + "'");
}

std::vector<double> Config::get_numbers(const std::string& key) const {
  std::string text = get_string(key);
  std::replace(text.begin(), text.end(), ',', ' ');
  std::istringstream is(text);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) out.push_back(to_double(key, tok));
  return out;
}

Vec3 Config::get_vec3(const std::string& key, const Vec3& fallback) const {
  if (!has(key)) return fallback;
  const auto v = get_numbers(key);
  if (v.size() != 3) throw Error(ErrorKind::config, "'" + key + "' expects three numbers");
  return {v[0], v[1], v[2]};
}

fs::path Config::get_path(const std::string& key) const {
  const fs::path p = get_string(key);
  return p.is_relative() && !base_dir_.empty() ? base_dir_ / p : p;
}

std::vector<std::string> apply_overrides(Config& config, const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    const bool dotted = a.rfind("--", 0) == 0 && a.find('.') != std::string::npos &&
                        a.find('.') < a.find('=');  // npos on both sides also passes
    if (!dotted && a != "--preset" && a.rfind("--preset=", 0) != 0) {
      rest.push_back(a);
      continue;
    }
    std::string body = a.substr(2);
    std::string key, value;
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      key = body.substr(0, eq);
      value = body.substr(eq + 1);
    } else {
      if (i + 1 >= args.size()) throw Error(ErrorKind::config, "flag '" + a + "' needs a value");
      key = body;
      value = args[++i];
    }
    config.set(key, value);
  }
  return rest;
}

namespace {

geometry::Material material_from(const Config& c, const std::string& prefix, geometry::Material m) {
  m.conductivity = c.get_double("materials." + prefix + "_conductivity", m.conductivity);
  m.density = c.get_double("materials." + prefix + "_density", m.density);
  m.heat_capacity = c.get_double("materials." + prefix + "_heat_capacity", m.heat_capacity);
  m.perfusion = c.get_double("materials." + prefix + "_perfusion", m.perfusion);
  return m;
}

const std::map<std::string, std::set<std::string>> kKnownKeys{
    {"source",
     {"type", "frequency", "b_peak", "direction", "coil_file", "collar_radius", "collar_center", "collar_axis",
      "collar_turns", "collar_pitch", "collar_sides"}},
    {"implant",
     {"segment_file", "side", "cells", "bend_radius", "radius", "conductivity", "center", "rotation", "losses_file"}},
    {"grid", {"container", "spacing", "crop_margin"}},
    {"materials",
     {"medium", "medium_conductivity", "medium_density", "medium_heat_capacity", "medium_perfusion", "implant",
      "implant_conductivity", "implant_density", "implant_heat_capacity", "implant_perfusion", "h_amb"}},
    {"exposure", {"duration", "dt"}},
    {"solver", {"h_hat", "control_factor", "tol_outer", "tol_inner", "max_outer", "preconditioner", "kkt_halo"}},
    {"output", {"dir", "name", "snapshot_every"}},
};

}  // namespace

scenarios::ScenarioConfig to_scenario(const Config& c) {
  for (const auto& [section, known] : kKnownKeys) {
    for (const auto& k : c.keys(section)) {
      if (!known.count(k)) throw Error(ErrorKind::config, "unknown key '" + section + "." + k + "'");
    }
  }
  const std::string preset = c.get_string("preset", "none");
  scenarios::ScenarioConfig s;
  if (preset == "gel") {
    s = scenarios::gel_phantom();
  } else if (preset == "polystyrene") {
    s = scenarios::polystyrene_phantom();
  } else if (preset == "mh_synthetic") {
    s = scenarios::mh_synthetic();
  } else if (preset != "none") {
    throw Error(ErrorKind::config, "unknown preset '" + preset + "'");
  }

  s.source_type = c.get_string("source.type", s.source_type);
  s.frequency = c.get_double("source.frequency", s.frequency);
  s.b_peak = c.get_double("source.b_peak", s.b_peak);
  s.b_direction = c.get_vec3("source.direction", s.b_direction);
  if (c.has("source.coil_file")) s.coil_file = c.get_path("source.coil_file");
  s.collar_radius = c.get_double("source.collar_radius", s.collar_radius);
  s.collar_center = c.get_vec3("source.collar_center", s.collar_center);
  s.collar_axis = c.get_vec3("source.collar_axis", s.collar_axis);
  s.collar_turns = static_cast<int>(c.get_int("source.collar_turns", s.collar_turns));
  s.collar_pitch = c.get_double("source.collar_pitch", s.collar_pitch);
  const long sides = c.get_int("source.collar_sides", static_cast<long>(s.collar_sides));
  if (sides < 3) throw Error(ErrorKind::config, "source.collar_sides must be at least 3");
  s.collar_sides = static_cast<std::size_t>(sides);

  if (c.has("implant.segment_file")) s.segment_file = c.get_path("implant.segment_file");
  s.implant_side = c.get_double("implant.side", s.implant_side);
  const long cells = c.get_int("implant.cells", static_cast<long>(s.implant_cells));
  if (cells < 1) throw Error(ErrorKind::config, "implant.cells must be positive");
  s.implant_cells = static_cast<std::size_t>(cells);
  s.bend_radius = c.get_double("implant.bend_radius", s.bend_radius);
  s.radius = c.get_double("implant.radius", s.radius);
  s.conductivity = c.get_double("implant.conductivity", s.conductivity);
  s.placement.center = c.get_vec3("implant.center", s.placement.center);
  s.placement.rotation_deg = c.get_double("implant.rotation", s.placement.rotation_deg);

  s.container = c.get_vec3("grid.container", s.container);
  s.spacing = c.get_double("grid.spacing", s.spacing);
  s.crop_margin = c.get_double("grid.crop_margin", s.crop_margin);

  if (c.has("materials.medium")) s.medium = scenarios::material_preset(c.get_string("materials.medium"));
  if (c.has("materials.implant")) s.implant = scenarios::material_preset(c.get_string("materials.implant"));
  s.medium.material = material_from(c, "medium", s.medium.material);
  s.implant.material = material_from(c, "implant", s.implant.material);
  s.h_amb = c.get_double("materials.h_amb", s.h_amb);

  s.duration = c.get_double("exposure.duration", s.duration);
  s.dt = c.get_double("exposure.dt", s.dt);
  if (!(s.duration > 0.0)) throw Error(ErrorKind::config, "exposure.duration must be positive");

  s.h_hat = c.get_double("solver.h_hat", s.h_hat);
  s.control_factor = static_cast<int>(c.get_int("solver.control_factor", s.control_factor));
  s.tol_outer = c.get_double("solver.tol_outer", s.tol_outer);
  s.tol_inner = c.get_double("solver.tol_inner", s.tol_inner);
  const long max_outer = c.get_int("solver.max_outer", static_cast<long>(s.max_outer));
  if (max_outer < 1) throw Error(ErrorKind::config, "solver.max_outer must be positive");
  s.max_outer = static_cast<std::size_t>(max_outer);
  s.preconditioner = c.get_string("solver.preconditioner", s.preconditioner);
  const long halo = c.get_int("solver.kkt_halo", static_cast<long>(s.kkt_halo));
  if (halo < 0) throw Error(ErrorKind::config, "solver.kkt_halo must not be negative");
  s.kkt_halo = static_cast<std::size_t>(halo);
  if (!(s.tol_outer > 0.0) || !(s.tol_inner > 0.0)) throw Error(ErrorKind::config, "solver tolerances must be positive");

  // probes: "<name> = x y z [hx hy hz]" in the implant frame; "point.<name> = x y z";
  // "frame = world" switches every entry to world coordinates
  const auto probe_keys = c.keys("probes");
  if (!probe_keys.empty()) {
    const std::string frame = c.get_string("probes.frame", "implant");
    if (frame != "implant" && frame != "world") throw Error(ErrorKind::config, "probes.frame must be implant or world");
    const bool implant_frame = frame == "implant";
    bool any_probe = false, any_point = false;
    std::vector<scenarios::ProbeSpec> probes, points;
    for (const auto& k : probe_keys) {
      if (k == "frame") continue;
      const auto v = c.get_numbers("probes." + k);
      if (k.rfind("point.", 0) == 0) {
        if (v.size() != 3) throw Error(ErrorKind::config, "probes." + k + " expects x y z");
        points.push_back({k.substr(6), {v[0], v[1], v[2]}, {}, implant_frame});
        any_point = true;
      } else {
        if (v.size() != 3 && v.size() != 6) throw Error(ErrorKind::config, "probes." + k + " expects x y z [hx hy hz]");
        scenarios::ProbeSpec p{k, {v[0], v[1], v[2]}, {0.0015, 0.001, 0.0005}, implant_frame};
        if (v.size() == 6) p.half_extent = {v[3], v[4], v[5]};
        probes.push_back(p);
        any_probe = true;
      }
    }
    if (any_probe) s.probes = std::move(probes);
    if (any_point) s.points = std::move(points);
  }

  if (c.has("output.dir")) s.output_dir = c.get_string("output.dir");
  s.name = c.get_string("output.name", s.name);
  const long every = c.get_int("output.snapshot_every", static_cast<long>(s.snapshot_every));
  if (every < 0) throw Error(ErrorKind::config, "output.snapshot_every must not be negative");
  s.snapshot_every = static_cast<std::size_t>(every);
  return s;
}

}  // namespace implantheat::config
