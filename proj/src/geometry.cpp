#include "implantheat/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace implantheat::geometry {

namespace {

[[noreturn]] void fail_geometry(const std::string& what) { throw Error(ErrorKind::geometry, what); }

std::string fmt_point(const Point3& p) {
  std::ostringstream os;
  os.precision(9);
  os << "(" << p.x << ", " << p.y << ", " << p.z << ")";
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// ImplantNetwork

ImplantNetwork::ImplantNetwork(std::vector<Point3> nodes, std::vector<Branch> branches, double radius,
                               double conductivity)
    : nodes_(std::move(nodes)), branches_(std::move(branches)), radius_(radius), conductivity_(conductivity) {
  if (!(radius_ > 0.0) || !std::isfinite(radius_)) fail_geometry("wire radius must be positive");
  if (!(conductivity_ > 0.0) || !std::isfinite(conductivity_)) {
    fail_geometry("wire conductivity must be positive");
  }
  for (const auto& p : nodes_) {
    if (!is_finite(p)) fail_geometry("non-finite node coordinate");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  lengths_.reserve(branches_.size());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const auto& br = branches_[b];
    if (br.from >= nodes_.size() || br.to >= nodes_.size()) {
      fail_geometry("branch " + std::to_string(b) + " references a node out of range");
    }
    if (br.from == br.to) fail_geometry("branch " + std::to_string(b) + " is a self-loop");
    const auto key = std::minmax(br.from, br.to);
    if (!seen.insert(key).second) fail_geometry("duplicate branch " + std::to_string(b));
    const double l = distance(nodes_[br.from], nodes_[br.to]);
    if (!(l > 0.0)) fail_geometry("branch " + std::to_string(b) + " has zero length");
    lengths_.push_back(l);
  }
}

double ImplantNetwork::total_length() const {
  double s = 0.0;
  for (double l : lengths_) s += l;
  return s;
}

Vec3 ImplantNetwork::direction(std::size_t b) const {
  const auto& br = branches_[b];
  return (nodes_[br.to] - nodes_[br.from]) * (1.0 / lengths_[b]);
}

std::vector<std::size_t> ImplantNetwork::degrees() const {
  std::vector<std::size_t> deg(nodes_.size(), 0);
  for (const auto& br : branches_) {
    ++deg[br.from];
    ++deg[br.to];
  }
  return deg;
}

ImplantNetwork ImplantNetwork::translated(const Vec3& offset) const {
  std::vector<Point3> moved = nodes_;
  for (auto& p : moved) p += offset;
  return ImplantNetwork(std::move(moved), branches_, radius_, conductivity_);
}

// ---------------------------------------------------------------------------
// build_network

namespace {

struct CellKey {
  std::int64_t i, j, k;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& c) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(c.i) * 0x9E3779B97F4A7C15ULL;
    h ^= static_cast<std::uint64_t>(c.j) * 0xC2B2AE3D27D4EB4FULL + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(c.k) * 0x165667B19E3779F9ULL + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

class NodeMerger {
 public:
  explicit NodeMerger(double tol) : tol_(tol), cell_(tol > 0.0 ? 2.0 * tol : 1.0) {}

  std::size_t insert(const Point3& p) {
    if (tol_ == 0.0) {
      const std::array<double, 3> key{p.x, p.y, p.z};
      auto [it, inserted] = exact_.try_emplace(key, nodes_.size());
      if (inserted) nodes_.push_back(p);
      return it->second;
    }
    const CellKey c = key_of(p);
    std::size_t best = nodes_.size();
    for (std::int64_t di = -1; di <= 1; ++di) {
      for (std::int64_t dj = -1; dj <= 1; ++dj) {
        for (std::int64_t dk = -1; dk <= 1; ++dk) {
          auto it = cells_.find({c.i + di, c.j + dj, c.k + dk});
          if (it == cells_.end()) continue;
          for (std::size_t n : it->second) {
            if (distance(nodes_[n], p) <= tol_ && n < best) best = n;
          }
        }
      }
    }
    if (best != nodes_.size()) return best;
    cells_[c].push_back(nodes_.size());
    nodes_.push_back(p);
    return nodes_.size() - 1;
  }

  std::vector<Point3> release() { return std::move(nodes_); }

 private:
  CellKey key_of(const Point3& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x / cell_)), static_cast<std::int64_t>(std::floor(p.y / cell_)),
            static_cast<std::int64_t>(std::floor(p.z / cell_))};
  }

  double tol_;
  double cell_;
  std::vector<Point3> nodes_;
  std::map<std::array<double, 3>, std::size_t> exact_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellKeyHash> cells_;
};

}  // namespace

ImplantNetwork build_network(std::span<const Segment> segments, double radius, double conductivity,
                             double merge_tol) {
  if (segments.empty()) throw Error(ErrorKind::input, "segment list is empty");
  if (!(merge_tol >= 0.0) || !std::isfinite(merge_tol)) {
    throw Error(ErrorKind::input, "merge tolerance must be finite and non-negative");
  }
  NodeMerger merger(merge_tol);
  std::vector<Branch> branches;
  branches.reserve(segments.size());
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (!is_finite(seg.a) || !is_finite(seg.b)) {
      fail_geometry("segment " + std::to_string(s) + " has a non-finite coordinate");
    }
    const std::size_t i = merger.insert(seg.a);
    const std::size_t j = merger.insert(seg.b);
    if (i == j) {
      fail_geometry("segment " + std::to_string(s) + " collapses to zero length " + fmt_point(seg.a));
    }
    if (!seen.insert(std::minmax(i, j)).second) continue;
    branches.push_back({i, j});
  }
  return ImplantNetwork(merger.release(), std::move(branches), radius, conductivity);
}

std::vector<Segment> segments_of(const ImplantNetwork& network) {
  std::vector<Segment> out;
  out.reserve(network.branch_count());
  for (std::size_t b = 0; b < network.branch_count(); ++b) out.push_back(network.segment(b));
  return out;
}

// ---------------------------------------------------------------------------
// MaterialTable

void MaterialTable::add(int id, std::string name, const Material& m) {
  if (id < 0 || id > 65535) throw Error(ErrorKind::input, "material id out of range");
  if (!(m.conductivity > 0.0) || !(m.density > 0.0) || !(m.heat_capacity > 0.0) || !(m.perfusion >= 0.0)) {
    throw Error(ErrorKind::input, "material '" + name + "' has invalid thermal properties");
  }
  if (!entries_.emplace(id, Entry{std::move(name), m}).second) {
    throw Error(ErrorKind::input, "duplicate material id " + std::to_string(id));
  }
}

const Material& MaterialTable::at(int id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorKind::input, "unknown material id " + std::to_string(id));
  return it->second.material;
}

const std::string& MaterialTable::name(int id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) throw Error(ErrorKind::input, "unknown material id " + std::to_string(id));
  return it->second.name;
}

std::optional<int> MaterialTable::find(const std::string& name) const {
  for (const auto& [id, e] : entries_) {
    if (e.name == name) return id;
  }
  return std::nullopt;
}

std::vector<int> MaterialTable::ids() const {
  std::vector<int> out;
  for (const auto& [id, e] : entries_) out.push_back(id);
  return out;
}

// ---------------------------------------------------------------------------
// VoxelGrid

VoxelGrid::VoxelGrid(Point3 origin, Vec3 spacing, std::array<std::size_t, 3> dims, int fill_material)
    : VoxelGrid(origin, spacing, dims,
                std::vector<std::uint16_t>(dims[0] * dims[1] * dims[2], static_cast<std::uint16_t>(fill_material))) {}

VoxelGrid::VoxelGrid(Point3 origin, Vec3 spacing, std::array<std::size_t, 3> dims,
                     std::vector<std::uint16_t> materials)
    : origin_(origin), spacing_(spacing), dims_(dims), materials_(std::move(materials)) {
  if (!is_finite(origin_)) throw Error(ErrorKind::input, "grid origin must be finite");
  if (!(spacing_.x > 0.0) || !(spacing_.y > 0.0) || !(spacing_.z > 0.0)) {
    throw Error(ErrorKind::input, "grid spacing must be positive");
  }
  if (dims_[0] == 0 || dims_[1] == 0 || dims_[2] == 0) throw Error(ErrorKind::input, "grid dims must be >= 1");
  if (materials_.size() != voxel_count()) throw Error(ErrorKind::input, "material array size mismatch");
}

Point3 VoxelGrid::upper() const {
  return {origin_.x + spacing_.x * static_cast<double>(dims_[0]), origin_.y + spacing_.y * static_cast<double>(dims_[1]),
          origin_.z + spacing_.z * static_cast<double>(dims_[2])};
}

std::array<std::size_t, 3> VoxelGrid::node_ijk(std::size_t n) const {
  const std::size_t nx = dims_[0] + 1;
  const std::size_t ny = dims_[1] + 1;
  return {n % nx, (n / nx) % ny, n / (nx * ny)};
}

Point3 VoxelGrid::node_position(std::size_t n) const {
  const auto ijk = node_ijk(n);
  return {origin_.x + spacing_.x * static_cast<double>(ijk[0]), origin_.y + spacing_.y * static_cast<double>(ijk[1]),
          origin_.z + spacing_.z * static_cast<double>(ijk[2])};
}

Point3 VoxelGrid::voxel_center(std::size_t v) const {
  const std::size_t i = v % dims_[0];
  const std::size_t j = (v / dims_[0]) % dims_[1];
  const std::size_t k = v / (dims_[0] * dims_[1]);
  return {origin_.x + spacing_.x * (static_cast<double>(i) + 0.5), origin_.y + spacing_.y * (static_cast<double>(j) + 0.5),
          origin_.z + spacing_.z * (static_cast<double>(k) + 0.5)};
}

bool VoxelGrid::contains(const Point3& p, double tol) const {
  const Point3 hi = upper();
  return p.x >= origin_.x - tol && p.x <= hi.x + tol && p.y >= origin_.y - tol && p.y <= hi.y + tol &&
         p.z >= origin_.z - tol && p.z <= hi.z + tol;
}

VoxelLocation VoxelGrid::locate(const Point3& p) const {
  const double tol = 1e-9 * std::max({spacing_.x, spacing_.y, spacing_.z});
  if (!contains(p, tol)) fail_geometry("point " + fmt_point(p) + " lies outside the voxel grid");
  VoxelLocation loc{};
  const double u[3] = {(p.x - origin_.x) / spacing_.x, (p.y - origin_.y) / spacing_.y, (p.z - origin_.z) / spacing_.z};
  for (int a = 0; a < 3; ++a) {
    double f = std::floor(u[a]);
    f = std::clamp(f, 0.0, static_cast<double>(dims_[a] - 1));
    loc.voxel[a] = static_cast<std::size_t>(f);
    loc.local[a] = std::clamp(u[a] - f, 0.0, 1.0);
  }
  return loc;
}

TrilinearSample VoxelGrid::sample(const Point3& p) const {
  const VoxelLocation loc = locate(p);
  TrilinearSample s{};
  int c = 0;
  for (int dk = 0; dk < 2; ++dk) {
    const double wz = dk ? loc.local[2] : 1.0 - loc.local[2];
    for (int dj = 0; dj < 2; ++dj) {
      const double wy = dj ? loc.local[1] : 1.0 - loc.local[1];
      for (int di = 0; di < 2; ++di) {
        const double wx = di ? loc.local[0] : 1.0 - loc.local[0];
        s.nodes[c] = node_index(loc.voxel[0] + di, loc.voxel[1] + dj, loc.voxel[2] + dk);
        s.values[c] = wx * wy * wz;
        ++c;
      }
    }
  }
  return s;
}

double VoxelGrid::interpolate(std::span<const double> nodal, const Point3& p) const {
  const TrilinearSample s = sample(p);
  double v = 0.0;
  for (int c = 0; c < 8; ++c) v += s.values[c] * nodal[s.nodes[c]];
  return v;
}

void VoxelGrid::check_materials(const MaterialTable& table) const {
  std::set<int> used(materials_.begin(), materials_.end());
  for (int id : used) {
    if (!table.contains(id)) throw Error(ErrorKind::input, "voxel material id " + std::to_string(id) + " is not defined");
  }
}

// ---------------------------------------------------------------------------
// Loops

namespace {

struct Adjacent {
  std::size_t branch;
  std::size_t node;
};

std::vector<std::vector<Adjacent>> adjacency(const ImplantNetwork& net) {
  std::vector<std::vector<Adjacent>> adj(net.node_count());
  for (std::size_t b = 0; b < net.branch_count(); ++b) {
    const auto& br = net.branches()[b];
    adj[br.from].push_back({b, br.to});
    adj[br.to].push_back({b, br.from});
  }
  return adj;
}

constexpr std::size_t kNone = static_cast<std::size_t>(-1);

}  // namespace

std::size_t connected_components(const ImplantNetwork& network) {
  // union-find, independent of the traversal used for the loop basis
  std::vector<std::size_t> parent(network.node_count());
  for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  std::size_t comps = network.node_count();
  for (const auto& br : network.branches()) {
    const std::size_t a = find(br.from);
    const std::size_t b = find(br.to);
    if (a != b) {
      parent[std::max(a, b)] = std::min(a, b);
      --comps;
    }
  }
  return comps;
}

LoopBasis fundamental_loops(const ImplantNetwork& network, SpanningTree tree) {
  const std::size_t n = network.node_count();
  const auto adj = adjacency(network);
  std::vector<std::size_t> parent_branch(n, kNone);
  std::vector<std::size_t> parent_node(n, kNone);
  std::vector<std::size_t> depth(n, 0);
  std::vector<char> visited(n, 0);
  std::vector<char> in_tree(network.branch_count(), 0);
  LoopBasis basis;

  auto visit_from = [&](std::size_t root) {
    visited[root] = 1;
    ++basis.components;
    if (tree == SpanningTree::breadth_first) {
      std::queue<std::size_t> q;
      q.push(root);
      while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        for (const auto& e : adj[u]) {
          if (visited[e.node]) continue;
          visited[e.node] = 1;
          parent_branch[e.node] = e.branch;
          parent_node[e.node] = u;
          depth[e.node] = depth[u] + 1;
          in_tree[e.branch] = 1;
          q.push(e.node);
        }
      }
    } else {
      std::vector<std::size_t> stack{root};
      while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        for (const auto& e : adj[u]) {
          if (visited[e.node]) continue;
          visited[e.node] = 1;
          parent_branch[e.node] = e.branch;
          parent_node[e.node] = u;
          depth[e.node] = depth[u] + 1;
          in_tree[e.branch] = 1;
          stack.push_back(e.node);
        }
      }
    }
  };

  if (tree == SpanningTree::breadth_first) {
    for (std::size_t r = 0; r < n; ++r) {
      if (!visited[r]) visit_from(r);
    }
  } else {
    for (std::size_t r = n; r-- > 0;) {
      if (!visited[r]) visit_from(r);
    }
  }

  for (std::size_t b = 0; b < network.branch_count(); ++b) {
    if (in_tree[b]) {
      basis.tree_branches.push_back(b);
      continue;
    }
    basis.chords.push_back(b);
    const auto& br = network.branches()[b];
    // chord runs from -> to; close through the tree from `to` back to `from`
    std::vector<SignedBranch> up_from_to;    // path to -> lca
    std::vector<SignedBranch> up_from_from;  // path from -> lca
    std::size_t a = br.to;
    std::size_t c = br.from;
    while (a != c) {
      if (depth[a] >= depth[c]) {
        const std::size_t pb = parent_branch[a];
        up_from_to.push_back({pb, network.branches()[pb].from == a ? 1 : -1});
        a = parent_node[a];
      } else {
        const std::size_t pb = parent_branch[c];
        // traversed downward (parent -> c) in the cycle
        up_from_from.push_back({pb, network.branches()[pb].from == c ? -1 : 1});
        c = parent_node[c];
      }
    }
    std::vector<SignedBranch> cycle;
    cycle.reserve(1 + up_from_to.size() + up_from_from.size());
    cycle.push_back({b, 1});
    cycle.insert(cycle.end(), up_from_to.begin(), up_from_to.end());
    cycle.insert(cycle.end(), up_from_from.rbegin(), up_from_from.rend());
    basis.cycles.push_back(std::move(cycle));
  }
  return basis;
}

std::size_t cycle_rank(const LoopBasis& basis, std::size_t branch_count) {
  // Gaussian elimination over GF(2) on bit rows; fundamental cycles are
  // independent over GF(2) exactly when they are over the reals.
  const std::size_t words = (branch_count + 63) / 64;
  std::vector<std::vector<std::uint64_t>> rows;
  rows.reserve(basis.cycles.size());
  for (const auto& cyc : basis.cycles) {
    std::vector<std::uint64_t> row(words, 0);
    for (const auto& sb : cyc) row[sb.branch / 64] ^= (std::uint64_t{1} << (sb.branch % 64));
    rows.push_back(std::move(row));
  }
  std::size_t rank = 0;
  for (std::size_t col = 0; col < branch_count && rank < rows.size(); ++col) {
    const std::size_t w = col / 64;
    const std::uint64_t bit = std::uint64_t{1} << (col % 64);
    std::size_t pivot = rank;
    while (pivot < rows.size() && !(rows[pivot][w] & bit)) ++pivot;
    if (pivot == rows.size()) continue;
    std::swap(rows[rank], rows[pivot]);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (r != rank && (rows[r][w] & bit)) {
        for (std::size_t k = w; k < words; ++k) rows[r][k] ^= rows[rank][k];
      }
    }
    ++rank;
  }
  return rank;
}

// ---------------------------------------------------------------------------
// Clipping

std::vector<VoxelPiece> clip_segment_to_voxels(const Segment& seg, const VoxelGrid& grid, const std::string& label) {
  const Vec3 h = grid.spacing();
  const double tol = 1e-9 * std::max({h.x, h.y, h.z});
  if (!grid.contains(seg.a, tol) || !grid.contains(seg.b, tol)) {
    fail_geometry(label + " leaves the voxel grid (" + fmt_point(seg.a) + " -> " + fmt_point(seg.b) + ")");
  }
  const Vec3 d = seg.b - seg.a;
  const double len = norm(d);
  std::vector<double> ts{0.0, 1.0};
  for (int axis = 0; axis < 3; ++axis) {
    const double da = d[axis];
    if (da == 0.0) continue;
    const double o = grid.origin()[axis];
    const double ha = h[axis];
    const double a0 = seg.a[axis];
    const double a1 = seg.b[axis];
    const double lo = std::min(a0, a1);
    const double hi = std::max(a0, a1);
    const auto k0 = static_cast<long long>(std::ceil((lo - o) / ha));
    const auto k1 = static_cast<long long>(std::floor((hi - o) / ha));
    for (long long k = std::max(0LL, k0); k <= std::min(k1, static_cast<long long>(grid.dims()[axis])); ++k) {
      const double t = (o + ha * static_cast<double>(k) - a0) / da;
      if (t > 0.0 && t < 1.0) ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());
  std::vector<VoxelPiece> out;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const double dt = ts[i + 1] - ts[i];
    if (dt <= 1e-15) continue;
    const Point3 mid = seg.a + d * (0.5 * (ts[i] + ts[i + 1]));
    const VoxelLocation loc = grid.locate(mid);
    const std::size_t v = grid.voxel_index(loc.voxel[0], loc.voxel[1], loc.voxel[2]);
    if (!out.empty() && out.back().voxel == v) {
      // sub-femtometre slivers between coincident planes; fold into the neighbour
      out.back().length += dt * len;
      continue;
    }
    out.push_back({v, dt * len, mid});
  }
  return out;
}

std::vector<VoxelPiece> clip_branch_to_voxels(const ImplantNetwork& network, std::size_t branch,
                                              const VoxelGrid& grid) {
  if (branch >= network.branch_count()) throw Error(ErrorKind::input, "branch index out of range");
  return clip_segment_to_voxels(network.segment(branch), grid, "branch " + std::to_string(branch));
}

}  // namespace implantheat::geometry
