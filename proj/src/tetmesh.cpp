#include "lapsim/tetmesh.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace lapsim {
namespace {

constexpr const char* kLabelNames[] = {
    "background", "liver", "gallbladder", "cystic_duct", "cystic_artery", "fat",
};

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
  throw IoError(path.string() + ":" + std::to_string(line) + ": " + what);
}

// Disjoint-set with path halving; ranks are unnecessary at these sizes.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int i) {
    while (parent[i] != i) {
      parent[i] = parent[parent[i]];
      i = parent[i];
    }
    return i;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

const char* label_name(uint16_t label) {
  if (label < std::size(kLabelNames)) return kLabelNames[label];
  if (label >= kInstrumentLabelBase) return "instrument";
  return "unknown";
}

std::optional<uint16_t> label_from_name(const std::string& name) {
  for (uint16_t i = 0; i < std::size(kLabelNames); ++i)
    if (name == kLabelNames[i]) return i;
  return std::nullopt;
}

std::size_t TetMesh::alive_tet_count() const {
  return static_cast<std::size_t>(std::count(alive.begin(), alive.end(), uint8_t{1}));
}

TetMesh load_tet_mesh(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());

  TetMesh mesh;
  std::string line;
  int line_no = 0;
  long n_vertices = -1, n_tets = -1;

  auto next_content_line = [&](const char* expected) -> std::istringstream {
    while (std::getline(in, line)) {
      ++line_no;
      auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      return std::istringstream(line);
    }
    parse_fail(path, line_no, std::string("unexpected end of file, expected ") + expected);
  };

  {
    auto ls = next_content_line("header");
    std::string magic;
    if (!(ls >> magic >> n_vertices >> n_tets) || magic != "tetmesh")
      parse_fail(path, line_no, "expected header 'tetmesh <n_vertices> <n_tets>'");
    if (n_vertices < 0 || n_tets < 0)
      parse_fail(path, line_no, "negative counts in header");
  }

  mesh.vertices_rest.reserve(static_cast<std::size_t>(n_vertices));
  for (long i = 0; i < n_vertices; ++i) {
    auto ls = next_content_line("vertex line");
    double x, y, z;
    if (!(ls >> x >> y >> z)) parse_fail(path, line_no, "malformed vertex line");
    mesh.vertices_rest.emplace_back(x, y, z);
  }

  mesh.tets.reserve(static_cast<std::size_t>(n_tets));
  mesh.labels.reserve(static_cast<std::size_t>(n_tets));
  for (long t = 0; t < n_tets; ++t) {
    auto ls = next_content_line("tet line");
    std::array<int, 4> idx;
    std::string raw_label;
    if (!(ls >> idx[0] >> idx[1] >> idx[2] >> idx[3] >> raw_label))
      parse_fail(path, line_no, "malformed tet line");
    for (int v : idx)
      if (v < 0 || v >= n_vertices)
        parse_fail(path, line_no, "index out of range, line " + std::to_string(line_no));
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b)
        if (idx[a] == idx[b]) parse_fail(path, line_no, "repeated vertex index in tet");
    // Labels are names ("liver"); bare integers are accepted for classes
    // outside the named set.
    uint16_t label;
    if (auto known = label_from_name(raw_label)) {
      label = *known;
    } else {
      char* end = nullptr;
      const long v = std::strtol(raw_label.c_str(), &end, 10);
      if (end == raw_label.c_str() || *end != '\0' || v < 0 || v > 0xffff)
        parse_fail(path, line_no, "unknown label '" + raw_label + "'");
      label = static_cast<uint16_t>(v);
    }
    mesh.tets.push_back(idx);
    mesh.labels.push_back(label);
  }

  mesh.alive.assign(mesh.tets.size(), 1);

  if (warnings) {
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
      const auto& tet = mesh.tets[t];
      const Vec3& v0 = mesh.vertices_rest[tet[0]];
      Mat3 dm;
      dm.col(0) = mesh.vertices_rest[tet[1]] - v0;
      dm.col(1) = mesh.vertices_rest[tet[2]] - v0;
      dm.col(2) = mesh.vertices_rest[tet[3]] - v0;
      if (dm.determinant() <= 0.0)
        warnings->push_back("tet " + std::to_string(t) + " has non-positive volume");
    }
  }
  return mesh;
}

void save_tet_mesh(const TetMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "tetmesh " << mesh.vertex_count() << " " << mesh.tet_count() << "\n";
  char buf[96];
  for (const Vec3& v : mesh.vertices_rest) {
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", v.x(), v.y(), v.z());
    out << buf;
  }
  for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
    const auto& tet = mesh.tets[t];
    out << tet[0] << " " << tet[1] << " " << tet[2] << " " << tet[3] << " ";
    if (const char* name = label_name(mesh.labels[t]); std::string(name) != "instrument" &&
                                                       std::string(name) != "unknown")
      out << name << "\n";
    else
      out << mesh.labels[t] << "\n";
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void compute_rest_state(TetMesh& mesh) {
  const std::size_t n = mesh.tet_count();
  mesh.rest_volume.resize(n);
  mesh.inv_rest.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& tet = mesh.tets[t];
    const Vec3& v0 = mesh.vertices_rest[tet[0]];
    Mat3 dm;
    dm.col(0) = mesh.vertices_rest[tet[1]] - v0;
    dm.col(1) = mesh.vertices_rest[tet[2]] - v0;
    dm.col(2) = mesh.vertices_rest[tet[3]] - v0;
    const double det = dm.determinant();
    if (std::abs(det) < 1e-12)
      throw ConfigError("degenerate rest tet " + std::to_string(t) +
                        " (|det| = " + std::to_string(std::abs(det)) + ")");
    mesh.rest_volume[t] = std::abs(det) / 6.0;
    mesh.inv_rest[t] = dm.inverse();
  }
  if (mesh.alive.size() != n) mesh.alive.assign(n, 1);
  mesh.rest_ready = true;
}

Mat3 deformation_gradient(const TetMesh& mesh, int tet_index, std::span<const Vec3> positions) {
  const auto& tet = mesh.tets[tet_index];
  const Vec3& p0 = positions[tet[0]];
  Mat3 ds;
  ds.col(0) = positions[tet[1]] - p0;
  ds.col(1) = positions[tet[2]] - p0;
  ds.col(2) = positions[tet[3]] - p0;
  return ds * mesh.inv_rest[tet_index];
}

SurfaceMesh extract_surface(const TetMesh& mesh) {
  // Key = sorted vertex triple. A face on the boundary appears under exactly
  // one alive tet; interior faces appear under two.
  struct FaceRef {
    int tet, face, count;
  };
  std::map<std::array<int, 3>, FaceRef> face_map;
  for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> key = {mesh.tets[t][kTetFaces[f][0]], mesh.tets[t][kTetFaces[f][1]],
                                mesh.tets[t][kTetFaces[f][2]]};
      std::sort(key.begin(), key.end());
      auto [it, inserted] = face_map.try_emplace(key, FaceRef{static_cast<int>(t), f, 1});
      if (!inserted) ++it->second.count;
    }
  }

  SurfaceMesh surf;
  for (const auto& [key, ref] : face_map) {
    if (ref.count != 1) continue;
    const auto& tet = mesh.tets[ref.tet];
    std::array<int, 3> tri = {tet[kTetFaces[ref.face][0]], tet[kTetFaces[ref.face][1]],
                              tet[kTetFaces[ref.face][2]]};
    // Orient the rest-position normal away from the owner tet centroid.
    const Vec3 a = mesh.vertices_rest[tri[0]];
    const Vec3 b = mesh.vertices_rest[tri[1]];
    const Vec3 c = mesh.vertices_rest[tri[2]];
    const Vec3 centroid = 0.25 * (mesh.vertices_rest[tet[0]] + mesh.vertices_rest[tet[1]] +
                                  mesh.vertices_rest[tet[2]] + mesh.vertices_rest[tet[3]]);
    const Vec3 n = (b - a).cross(c - a);
    if (n.dot((a + b + c) / 3.0 - centroid) < 0.0) std::swap(tri[1], tri[2]);
    surf.triangles.push_back(tri);
    surf.labels.push_back(mesh.labels[ref.tet]);
    surf.owner_tet.push_back(ref.tet);
    surf.owner_face.push_back(ref.face);
  }
  return surf;
}

double total_volume(const TetMesh& mesh, std::span<const Vec3> positions) {
  double sum = 0.0;
  for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    sum += deformation_gradient(mesh, static_cast<int>(t), positions).determinant() *
           mesh.rest_volume[t];
  }
  return sum;
}

int connected_components(const TetMesh& mesh, std::vector<int>* component_of) {
  const std::size_t n = mesh.tet_count();
  // Union tets through shared vertices: first alive tet touching a vertex
  // becomes the vertex's representative.
  UnionFind uf(n);
  std::vector<int> vertex_rep(mesh.vertex_count(), -1);
  for (std::size_t t = 0; t < n; ++t) {
    if (!mesh.alive[t]) continue;
    for (int v : mesh.tets[t]) {
      if (vertex_rep[v] < 0)
        vertex_rep[v] = static_cast<int>(t);
      else
        uf.unite(static_cast<int>(t), vertex_rep[v]);
    }
  }

  std::vector<int> root_to_component(n, -1);
  int count = 0;
  if (component_of) component_of->assign(n, -1);
  for (std::size_t t = 0; t < n; ++t) {
    if (!mesh.alive[t]) continue;
    const int root = uf.find(static_cast<int>(t));
    if (root_to_component[root] < 0) root_to_component[root] = count++;
    if (component_of) (*component_of)[t] = root_to_component[root];
  }
  return count;
}

}  // namespace lapsim
