#pragma once

#include <cstdint>
#include <functional>

#include "lapsim/tetmesh.hpp"

namespace lapsim {

/// Axis-aligned box filled with a regular grid of cells, each split into the
/// six Kuhn tetrahedra. The split is face-compatible across neighboring cells,
/// so the mesh is conforming. nx/ny/nz are cell counts (>= 1).
TetMesh make_box_mesh(const Vec3& min_corner, const Vec3& max_corner, int nx, int ny, int nz,
                      uint16_t label);

/// Grid-sampled composite of implicit shapes. `classify` maps a tet-centroid
/// sample point to a label; background (0) samples produce no tet. All kept
/// tets share one vertex grid, so adjacent organs are welded where they
/// touch. Vertices unused by any kept tet are dropped and indices compacted.
TetMesh make_implicit_mesh(const Vec3& min_corner, const Vec3& max_corner, int nx, int ny, int nz,
                           const std::function<uint16_t(const Vec3&)>& classify);

/// Scripted anatomy for the cholecystectomy demo: a liver slab with a
/// gallbladder pouch underneath, connected through a cystic duct and artery,
/// the hilum wrapped in fat. Sized in meters, centred near the origin, liver
/// top face at z = 0. Roughly 3-4k tets.
TetMesh make_demo_anatomy();

}  // namespace lapsim
