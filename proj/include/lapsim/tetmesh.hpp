#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lapsim/math.hpp"

namespace lapsim {

// Semantic class IDs shared by meshes, rendering, and the metric suite.
// Instruments occupy IDs from kInstrumentLabelBase upward.
enum class ObjectLabel : uint16_t {
  background = 0,
  liver = 1,
  gallbladder = 2,
  cystic_duct = 3,
  cystic_artery = 4,
  fat = 5,
};
inline constexpr uint16_t kInstrumentLabelBase = 16;

const char* label_name(uint16_t label);
std::optional<uint16_t> label_from_name(const std::string& name);

/// Volumetric tetrahedral mesh with per-element tissue class.
///
/// Vertex order convention: the rest edge matrix has columns
/// (v1-v0, v2-v0, v3-v0). Local faces are numbered
///   face 0 = (1,2,3)   face 1 = (0,3,2)   face 2 = (0,1,3)   face 3 = (0,2,1)
/// i.e. face k is the face opposite vertex k.
///
/// Topology changes never remap indices: cutting marks elements dead and the
/// vertex array only grows, so per-vertex correspondence across frames holds.
struct TetMesh {
  std::vector<Vec3> vertices_rest;
  std::vector<std::array<int, 4>> tets;
  std::vector<uint16_t> labels;  // per tet

  // filled by compute_rest_state
  std::vector<double> rest_volume;
  std::vector<Mat3> inv_rest;  // D_m^{-1}
  bool rest_ready = false;

  std::vector<uint8_t> alive;  // per tet; cleared by cutting/tearing

  std::size_t vertex_count() const { return vertices_rest.size(); }
  std::size_t tet_count() const { return tets.size(); }
  std::size_t alive_tet_count() const;
};

inline constexpr std::array<std::array<int, 3>, 4> kTetFaces = {{
    {1, 2, 3},
    {0, 3, 2},
    {0, 1, 3},
    {0, 2, 1},
}};

/// Boundary triangles of the alive part of a TetMesh, outward-oriented.
struct SurfaceMesh {
  std::vector<std::array<int, 3>> triangles;  // vertex indices into the TetMesh
  std::vector<uint16_t> labels;               // per triangle, from owner tet
  std::vector<int> owner_tet;
  std::vector<int> owner_face;  // local face index within owner tet
};

/// Parses the ASCII tet format:
///   tetmesh <n_vertices> <n_tets>
///   x y z                      (n_vertices lines)
///   i0 i1 i2 i3 label          (n_tets lines, zero-based indices)
/// Rest state is left uninitialized. Non-positive-volume tets are reported in
/// `warnings` (when given), not treated as failures.
TetMesh load_tet_mesh(const std::filesystem::path& path,
                      std::vector<std::string>* warnings = nullptr);

void save_tet_mesh(const TetMesh& mesh, const std::filesystem::path& path);

/// Fills rest_volume (= |det D_m| / 6) and inv_rest per tet.
/// Throws ConfigError for degenerate tets (|det D_m| < 1e-12).
void compute_rest_state(TetMesh& mesh);

/// F = D_s * D_m^{-1} for one tet at the given current positions.
/// Well-defined for inverted configurations (det F <= 0 allowed).
Mat3 deformation_gradient(const TetMesh& mesh, int tet_index, std::span<const Vec3> positions);

/// All faces belonging to exactly one alive tet, oriented away from the owner
/// tet centroid (using rest positions, so orientation is stable under
/// deformation). Recomputable after topology edits.
SurfaceMesh extract_surface(const TetMesh& mesh);

/// Signed volume sum over alive tets at the given positions: sum of
/// det(F) * rest_volume. Equals rest volume exactly at the rest configuration.
double total_volume(const TetMesh& mesh, std::span<const Vec3> positions);

/// Connected components of alive tets under shared-vertex adjacency
/// (brute-force union-find). component_of, when given, gets one entry per tet
/// (-1 for dead tets). Returns the component count.
int connected_components(const TetMesh& mesh, std::vector<int>* component_of = nullptr);

}  // namespace lapsim
