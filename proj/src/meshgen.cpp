#include "lapsim/meshgen.hpp"

#include <array>

namespace lapsim {
namespace {

// Kuhn split of a cell into 6 tets around the (0,0,0)-(1,1,1) diagonal.
// Corner code: bit 0 = +x, bit 1 = +y, bit 2 = +z. Every tet is positively
// oriented and the induced face diagonals match between neighboring cells.
constexpr std::array<std::array<int, 4>, 6> kKuhnTets = {{
    {0, 1, 3, 7},
    {0, 1, 7, 5},
    {0, 2, 7, 3},
    {0, 2, 6, 7},
    {0, 4, 5, 7},
    {0, 4, 7, 6},
}};

double sq(double v) { return v * v; }

}  // namespace

TetMesh make_implicit_mesh(const Vec3& min_corner, const Vec3& max_corner, int nx, int ny, int nz,
                           const std::function<uint16_t(const Vec3&)>& classify) {
  if (nx < 1 || ny < 1 || nz < 1) throw ConfigError("grid cell counts must be >= 1");
  const Vec3 extent = max_corner - min_corner;
  if (extent.minCoeff() <= 0.0) throw ConfigError("mesh box has non-positive extent");
  const Vec3 h(extent.x() / nx, extent.y() / ny, extent.z() / nz);

  auto grid_vid = [&](int i, int j, int k) { return (k * (ny + 1) + j) * (nx + 1) + i; };
  auto grid_pos = [&](int i, int j, int k) {
    return Vec3(min_corner.x() + i * h.x(), min_corner.y() + j * h.y(), min_corner.z() + k * h.z());
  };

  TetMesh mesh;
  std::vector<int> remap(static_cast<std::size_t>(grid_vid(nx, ny, nz)) + 1, -1);
  auto emit_vertex = [&](int i, int j, int k) {
    const int gid = grid_vid(i, j, k);
    if (remap[gid] < 0) {
      remap[gid] = static_cast<int>(mesh.vertices_rest.size());
      mesh.vertices_rest.push_back(grid_pos(i, j, k));
    }
    return remap[gid];
  };

  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        std::array<Vec3, 8> corner;
        for (int c = 0; c < 8; ++c)
          corner[c] = grid_pos(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
        for (const auto& tet : kKuhnTets) {
          const Vec3 centroid =
              0.25 * (corner[tet[0]] + corner[tet[1]] + corner[tet[2]] + corner[tet[3]]);
          const uint16_t label = classify(centroid);
          if (label == 0) continue;
          std::array<int, 4> ids;
          for (int v = 0; v < 4; ++v) {
            const int c = tet[v];
            ids[v] = emit_vertex(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
          }
          mesh.tets.push_back(ids);
          mesh.labels.push_back(label);
        }
      }

  mesh.alive.assign(mesh.tets.size(), 1);
  return mesh;
}

TetMesh make_box_mesh(const Vec3& min_corner, const Vec3& max_corner, int nx, int ny, int nz,
                      uint16_t label) {
  if (label == 0) throw ConfigError("box mesh label must be non-zero");
  return make_implicit_mesh(min_corner, max_corner, nx, ny, nz,
                            [label](const Vec3&) { return label; });
}

TetMesh make_demo_anatomy() {
  // 6 mm cells; structure boundaries sit on cell planes so the thin duct and
  // artery come out as clean one-cell tubes instead of ragged voxel runs.
  const Vec3 lo(-0.054, -0.036, -0.054);
  const Vec3 hi(0.048, 0.036, 0.0);
  const int nx = 17, ny = 12, nz = 9;

  const Vec3 gb_center(0.015, -0.003, -0.033);
  const Vec3 gb_semi(0.020, 0.014, 0.012);
  const Vec3 duct_axis(0.0, 0.003, -0.033);    // y/z of the duct centerline
  const Vec3 artery_axis(0.0, -0.009, -0.039);

  auto classify = [&](const Vec3& p) -> uint16_t {
    // Tube tests use open x-intervals aligned to cell planes.
    if (p.x() > -0.048 && p.x() < 0.0 &&
        sq(p.y() - duct_axis.y()) + sq(p.z() - duct_axis.z()) < sq(0.0036))
      return static_cast<uint16_t>(ObjectLabel::cystic_duct);
    if (p.x() > -0.048 && p.x() < 0.0 &&
        sq(p.y() - artery_axis.y()) + sq(p.z() - artery_axis.z()) < sq(0.0033))
      return static_cast<uint16_t>(ObjectLabel::cystic_artery);
    if (sq((p.x() - gb_center.x()) / gb_semi.x()) + sq((p.y() - gb_center.y()) / gb_semi.y()) +
            sq((p.z() - gb_center.z()) / gb_semi.z()) <
        1.0)
      return static_cast<uint16_t>(ObjectLabel::gallbladder);
    // Fat bed between the liver underside and the gallbladder body. Tearing
    // it is what frees the gallbladder from the liver.
    if (p.x() > 0.0 && p.x() < 0.030 && p.y() > -0.018 && p.y() < 0.012 && p.z() > -0.024 &&
        p.z() < -0.012)
      return static_cast<uint16_t>(ObjectLabel::fat);
    if (p.z() > -0.0121 && sq(sq(p.x() / 0.046)) + sq(sq(p.y() / 0.034)) < 1.0)
      return static_cast<uint16_t>(ObjectLabel::liver);
    return static_cast<uint16_t>(ObjectLabel::background);
  };

  return make_implicit_mesh(lo, hi, nx, ny, nz, classify);
}

}  // namespace lapsim
