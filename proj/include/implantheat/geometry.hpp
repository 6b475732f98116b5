#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "implantheat/common.hpp"

namespace implantheat::geometry {

struct Segment {
  Point3 a;
  Point3 b;
};

/// Branch oriented from node `from` to node `to`.
struct Branch {
  std::size_t from = 0;
  std::size_t to = 0;
};

/// Network of thin straight wires of uniform radius: the 1D implant model.
class ImplantNetwork {
 public:
  /// Validates every invariant (distinct in-range endpoints, positive
  /// lengths, no duplicate branches, positive radius and conductivity).
  ImplantNetwork(std::vector<Point3> nodes, std::vector<Branch> branches, double radius,
                 double conductivity);

  const std::vector<Point3>& nodes() const { return nodes_; }
  const std::vector<Branch>& branches() const { return branches_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t branch_count() const { return branches_.size(); }
  double radius() const { return radius_; }
  double conductivity() const { return conductivity_; }

  double length(std::size_t b) const { return lengths_[b]; }
  const std::vector<double>& lengths() const { return lengths_; }
  double total_length() const;
  Segment segment(std::size_t b) const { return {nodes_[branches_[b].from], nodes_[branches_[b].to]}; }
  /// Unit tangent from `from` to `to`.
  Vec3 direction(std::size_t b) const;
  std::vector<std::size_t> degrees() const;
  /// Copy with every node translated by `offset`.
  ImplantNetwork translated(const Vec3& offset) const;

 private:
  std::vector<Point3> nodes_;
  std::vector<Branch> branches_;
  std::vector<double> lengths_;
  double radius_;
  double conductivity_;
};

/// Merges segment endpoints closer than `merge_tol` into shared nodes and
/// drops duplicated branches (the same unordered node pair).
ImplantNetwork build_network(std::span<const Segment> segments, double radius, double conductivity,
                             double merge_tol = 1e-6);

std::vector<Segment> segments_of(const ImplantNetwork& network);

struct Material {
  double conductivity = 0.0;   // lambda, W/m/degC
  double density = 0.0;        // rho, kg/m^3
  double heat_capacity = 0.0;  // c_p, J/kg/degC
  double perfusion = 0.0;      // h_b, W/m^3/degC

  double volumetric_heat_capacity() const { return density * heat_capacity; }
};

class MaterialTable {
 public:
  /// Throws on invalid properties or a duplicated id.
  void add(int id, std::string name, const Material& material);
  bool contains(int id) const { return entries_.count(id) != 0; }
  const Material& at(int id) const;
  const std::string& name(int id) const;
  std::optional<int> find(const std::string& name) const;
  std::vector<int> ids() const;

 private:
  struct Entry {
    std::string name;
    Material material;
  };
  std::map<int, Entry> entries_;
};

/// Location of a point inside the grid: owning voxel and local coordinates in [0,1]^3.
struct VoxelLocation {
  std::array<std::size_t, 3> voxel;
  std::array<double, 3> local;
};

/// Trilinear basis of one voxel sampled at a point.
struct TrilinearSample {
  std::array<std::size_t, 8> nodes;
  std::array<double, 8> values;
};

/// Box of (nx, ny, nz) voxels; nodes are the (nx+1)(ny+1)(nz+1) voxel corners.
class VoxelGrid {
 public:
  VoxelGrid(Point3 origin, Vec3 spacing, std::array<std::size_t, 3> dims, int fill_material);
  VoxelGrid(Point3 origin, Vec3 spacing, std::array<std::size_t, 3> dims, std::vector<std::uint16_t> materials);

  const Point3& origin() const { return origin_; }
  const Vec3& spacing() const { return spacing_; }
  const std::array<std::size_t, 3>& dims() const { return dims_; }
  std::array<std::size_t, 3> node_dims() const { return {dims_[0] + 1, dims_[1] + 1, dims_[2] + 1}; }
  std::size_t voxel_count() const { return dims_[0] * dims_[1] * dims_[2]; }
  std::size_t node_count() const { return (dims_[0] + 1) * (dims_[1] + 1) * (dims_[2] + 1); }
  double voxel_volume() const { return spacing_.x * spacing_.y * spacing_.z; }
  Point3 upper() const;

  std::size_t voxel_index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + dims_[0] * (j + dims_[1] * k);
  }
  std::size_t node_index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + (dims_[0] + 1) * (j + (dims_[1] + 1) * k);
  }
  std::array<std::size_t, 3> node_ijk(std::size_t n) const;
  Point3 node_position(std::size_t n) const;
  Point3 voxel_center(std::size_t v) const;

  int material(std::size_t v) const { return materials_[v]; }
  const std::vector<std::uint16_t>& materials() const { return materials_; }
  void set_material(std::size_t v, int id) { materials_[v] = static_cast<std::uint16_t>(id); }

  /// True when p lies in the closed bounding box enlarged by `tol` (absolute).
  bool contains(const Point3& p, double tol = 0.0) const;
  /// Throws geometry error when p is outside the bounding box.
  VoxelLocation locate(const Point3& p) const;
  TrilinearSample sample(const Point3& p) const;
  /// Trilinear interpolation of a nodal field.
  double interpolate(std::span<const double> nodal, const Point3& p) const;

  /// Throws unless every voxel's material resolves in `table`.
  void check_materials(const MaterialTable& table) const;

 private:
  Point3 origin_;
  Vec3 spacing_;
  std::array<std::size_t, 3> dims_;
  std::vector<std::uint16_t> materials_;
};

struct ProbeBox {
  std::string name;
  Point3 center;
  Vec3 half_extent;
};

struct SignedBranch {
  std::size_t branch = 0;
  int sign = 1;  // +1 when the cycle runs from `from` to `to`
};

/// Fundamental cycle basis induced by a spanning forest.
struct LoopBasis {
  std::vector<std::size_t> tree_branches;
  std::vector<std::size_t> chords;
  std::vector<std::vector<SignedBranch>> cycles;  // one per chord, chord first
  std::size_t components = 0;

  std::size_t loop_count() const { return cycles.size(); }
};

enum class SpanningTree {
  breadth_first,  // BFS rooted at the lowest-index node of each component
  depth_first,    // iterative DFS rooted at the highest-index node (alternate basis)
};

LoopBasis fundamental_loops(const ImplantNetwork& network, SpanningTree tree = SpanningTree::breadth_first);

/// Rank of the cycle-incidence matrix (GF(2) elimination); equals
/// loop_count() for an independent basis.
std::size_t cycle_rank(const LoopBasis& basis, std::size_t branch_count);

/// Number of connected components (isolated nodes included).
std::size_t connected_components(const ImplantNetwork& network);

struct VoxelPiece {
  std::size_t voxel = 0;
  double length = 0.0;
  Point3 midpoint;
};

/// Splits a branch at every voxel face it crosses. Throws a geometry error
/// naming the branch when it leaves the grid.
std::vector<VoxelPiece> clip_branch_to_voxels(const ImplantNetwork& network, std::size_t branch,
                                              const VoxelGrid& grid);

std::vector<VoxelPiece> clip_segment_to_voxels(const Segment& segment, const VoxelGrid& grid,
                                               const std::string& label);

}  // namespace implantheat::geometry
