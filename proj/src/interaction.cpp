#include "lapsim/interaction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "lapsim/neohookean.hpp"

namespace lapsim {

void InteractionParams::validate() const {
  if (!(tear_threshold > 1.0))  // distortion is exactly 1 at rest
    throw ConfigError("tear_threshold must be > 1");
  if (!(bleed_decay >= 0.0 && bleed_decay <= 1.0))
    throw ConfigError("bleed_decay must be in [0, 1]");
  if (!(coag_stiffening > 0.0 && coag_stiffening <= 1.0))
    throw ConfigError("coag_stiffening must be in (0, 1]");
  if (coag_dwell_frames < 1) throw ConfigError("coag_dwell_frames must be >= 1");
  if (!(coag_radius > 0.0)) throw ConfigError("coag_radius must be positive");
  if (!(jaw_radius > 0.0)) throw ConfigError("jaw_radius must be positive");
  if (!(clip_radius > 0.0)) throw ConfigError("clip_radius must be positive");
  if (!(collision_margin > 0.0)) throw ConfigError("collision_margin must be positive");
  if (!(collision_band >= 0.0)) throw ConfigError("collision_band must be non-negative");
  if (!(motion_speed >= 0.0)) throw ConfigError("motion_speed must be non-negative");
}

void TissueState::init(const TetMesh& mesh) {
  bleed.assign(mesh.tet_count() * 4, 0.0f);
  damaged.assign(mesh.tet_count(), 0);
  coagulated.assign(mesh.tet_count(), 0);
  clipped.assign(mesh.tet_count(), 0);
  coag_dwell.assign(mesh.tet_count(), 0);
}

FaceAdjacency build_face_adjacency(const TetMesh& mesh) {
  FaceAdjacency adj;
  adj.neighbor.assign(mesh.tet_count() * 4, -1);
  adj.neighbor_face.assign(mesh.tet_count() * 4, -1);
  std::map<std::array<int, 3>, std::pair<int, int>> first_owner;  // face key -> (tet, face)
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    for (int f = 0; f < 4; ++f) {
      std::array<int, 3> key = {mesh.tets[t][kTetFaces[f][0]], mesh.tets[t][kTetFaces[f][1]],
                                mesh.tets[t][kTetFaces[f][2]]};
      std::sort(key.begin(), key.end());
      auto [it, inserted] = first_owner.try_emplace(key, static_cast<int>(t), f);
      if (inserted) continue;
      auto [ot, of] = it->second;
      adj.neighbor[t * 4 + f] = ot;
      adj.neighbor_face[t * 4 + f] = static_cast<int8_t>(of);
      adj.neighbor[ot * 4 + of] = static_cast<int>(t);
      adj.neighbor_face[ot * 4 + of] = static_cast<int8_t>(f);
    }
  }
  return adj;
}

std::vector<GraspAnchor> grasp(const SurfaceMesh& surface, std::span<const Vec3> positions,
                               std::span<const double> inv_mass, const Pose& tool_pose,
                               const Vec3& tip_world, double jaw_radius) {
  std::vector<uint8_t> candidate(positions.size(), 0);
  for (const auto& tri : surface.triangles)
    for (int v : tri) candidate[v] = 1;

  const Pose world_to_tool = tool_pose.inverse();
  std::vector<GraspAnchor> anchors;
  for (size_t i = 0; i < positions.size(); ++i) {
    if (!candidate[i] || inv_mass[i] == 0.0) continue;
    if ((positions[i] - tip_world).norm() > jaw_radius) continue;
    anchors.push_back({static_cast<int>(i), world_to_tool.apply(positions[i])});
  }
  return anchors;
}

namespace {

/// Exposes the faces a dead tet leaves behind on its alive neighbors.
/// fresh wounds bleed unless the neighbor is protected.
void expose_neighbors(const TetMesh& mesh, TissueState& state, const FaceAdjacency& adj, int tet,
                      bool clip_protects) {
  for (int f = 0; f < 4; ++f) {
    const int n = adj.neighbor[tet * 4 + f];
    if (n < 0 || !mesh.alive[n]) continue;
    const bool protected_face =
        state.coagulated[n] || (clip_protects && state.clipped[n]);
    state.bleed_at(n, adj.neighbor_face[tet * 4 + f]) = protected_face ? 0.0f : 1.0f;
  }
}

bool segment_hits_triangle(const Vec3& p0, const Vec3& p1, const Vec3& a, const Vec3& b,
                           const Vec3& c) {
  const Vec3 dir = p1 - p0;
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-18) return false;  // parallel graze, measure zero
  const double inv = 1.0 / det;
  const Vec3 tvec = p0 - a;
  const double u = tvec.dot(pvec) * inv;
  if (u < -1e-12 || u > 1.0 + 1e-12) return false;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv;
  if (v < -1e-12 || u + v > 1.0 + 1e-12) return false;
  const double t = e2.dot(qvec) * inv;
  return t >= -1e-12 && t <= 1.0 + 1e-12;
}

bool point_in_tet(const TetMesh& mesh, int tet, std::span<const Vec3> positions, const Vec3& p) {
  const auto& tt = mesh.tets[tet];
  Mat3 edges;
  edges.col(0) = positions[tt[1]] - positions[tt[0]];
  edges.col(1) = positions[tt[2]] - positions[tt[0]];
  edges.col(2) = positions[tt[3]] - positions[tt[0]];
  if (std::abs(edges.determinant()) < 1e-18) return false;
  const Vec3 bary = edges.inverse() * (p - positions[tt[0]]);
  return bary.x() >= -1e-12 && bary.y() >= -1e-12 && bary.z() >= -1e-12 &&
         bary.sum() <= 1.0 + 1e-12;
}

}  // namespace

std::vector<int> tear_update(TetMesh& mesh, TissueState& state, const FaceAdjacency& adj,
                             std::span<const Vec3> positions, double tear_threshold) {
  constexpr double inv_sqrt3 = 0.57735026918962576;
  std::vector<int> torn;
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    const Mat3 F = deformation_gradient(mesh, static_cast<int>(t), positions);
    if (F.norm() * inv_sqrt3 > tear_threshold) torn.push_back(static_cast<int>(t));
  }
  for (int t : torn) {
    mesh.alive[t] = false;
    state.damaged[t] = 1;
  }
  for (int t : torn) expose_neighbors(mesh, state, adj, t, /*clip_protects=*/false);
  return torn;
}

bool swept_quad_hits_tet(const SweptQuad& quad, const TetMesh& mesh, int tet,
                         std::span<const Vec3> positions) {
  const auto& tt = mesh.tets[tet];
  const std::array<Vec3, 4> corners = {quad.a0, quad.b0, quad.b1, quad.a1};

  // Quad perimeter edges against the four tet faces.
  for (int e = 0; e < 4; ++e) {
    const Vec3& p0 = corners[e];
    const Vec3& p1 = corners[(e + 1) % 4];
    for (const auto& face : kTetFaces)
      if (segment_hits_triangle(p0, p1, positions[tt[face[0]]], positions[tt[face[1]]],
                                positions[tt[face[2]]]))
        return true;
  }

  // Tet edges against the quad's two triangles: catches a small tet poking
  // through the middle of a large sweep.
  static constexpr int tet_edges[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  for (const auto& e : tet_edges) {
    const Vec3& p0 = positions[tt[e[0]]];
    const Vec3& p1 = positions[tt[e[1]]];
    if (segment_hits_triangle(p0, p1, quad.a0, quad.b0, quad.b1)) return true;
    if (segment_hits_triangle(p0, p1, quad.a0, quad.b1, quad.a1)) return true;
  }

  // Sweep entirely inside the tet.
  return point_in_tet(mesh, tet, positions, quad.a0);
}

std::vector<int> cut(TetMesh& mesh, TissueState& state, const FaceAdjacency& adj,
                     std::span<const Vec3> positions, const SweptQuad& quad) {
  Vec3 qlo = quad.a0.cwiseMin(quad.b0).cwiseMin(quad.a1).cwiseMin(quad.b1);
  Vec3 qhi = quad.a0.cwiseMax(quad.b0).cwiseMax(quad.a1).cwiseMax(quad.b1);

  std::vector<int> dead;
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (int v : mesh.tets[t]) {
      lo = lo.cwiseMin(positions[v]);
      hi = hi.cwiseMax(positions[v]);
    }
    if ((hi.array() < qlo.array()).any() || (lo.array() > qhi.array()).any()) continue;
    if (swept_quad_hits_tet(quad, mesh, static_cast<int>(t), positions))
      dead.push_back(static_cast<int>(t));
  }
  for (int t : dead) {
    mesh.alive[t] = false;
    state.damaged[t] = 1;
  }
  for (int t : dead) expose_neighbors(mesh, state, adj, t, /*clip_protects=*/true);
  return dead;
}

ClipResult clip(const TetMesh& mesh, TissueState& state, std::span<const Vec3> positions,
                std::span<const double> inv_mass, const Vec3& tip_world, double clip_radius) {
  std::vector<uint8_t> selected(positions.size(), 0);
  ClipResult result;
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    bool owns = false;
    for (int v : mesh.tets[t]) {
      if (selected[v]) {
        owns = true;
        continue;
      }
      if (inv_mass[v] == 0.0) continue;
      if ((positions[v] - tip_world).norm() <= clip_radius) {
        selected[v] = 1;
        owns = true;
      }
    }
    if (owns) result.tets.push_back(static_cast<int>(t));
  }
  for (size_t v = 0; v < selected.size(); ++v)
    if (selected[v]) result.particles.push_back(static_cast<int>(v));
  for (int t : result.tets) state.clipped[t] = 1;
  return result;
}

std::vector<int> coagulate_update(const TetMesh& mesh, TissueState& state,
                                  std::span<const Vec3> positions, const Vec3& tip_world,
                                  double coag_radius, int dwell_frames, bool cautery_active) {
  if (!cautery_active) {
    std::fill(state.coag_dwell.begin(), state.coag_dwell.end(), 0);
    return {};
  }
  std::vector<int> cooked;
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) {
      state.coag_dwell[t] = 0;
      continue;
    }
    bool in_reach = false;
    for (int v : mesh.tets[t])
      if ((positions[v] - tip_world).norm() <= coag_radius) {
        in_reach = true;
        break;
      }
    state.coag_dwell[t] = in_reach ? state.coag_dwell[t] + 1 : 0;
    if (state.coag_dwell[t] >= dwell_frames && !state.coagulated[t]) {
      state.coagulated[t] = 1;
      for (int f = 0; f < 4; ++f) state.bleed_at(static_cast<int>(t), f) = 0.0f;
      cooked.push_back(static_cast<int>(t));
    }
  }
  return cooked;
}

void bleed_update(TissueState& state, double decay) {
  for (float& b : state.bleed) {
    if (b == 0.0f) continue;
    b = static_cast<float>(b * decay);
    if (b < 0.01f) b = 0.0f;
  }
}

std::vector<std::string> tissue_state_violations(const TetMesh& mesh, const TissueState& state,
                                                 const SurfaceMesh& surface,
                                                 const ConstraintBatches& batches) {
  std::vector<std::string> out;
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    if (state.coagulated[t])
      for (int f = 0; f < 4; ++f)
        if (state.bleed_at(static_cast<int>(t), f) != 0.0f)
          out.push_back("coagulated tet " + std::to_string(t) + " face " + std::to_string(f) +
                        " still bleeds");
  }
  for (size_t s = 0; s < surface.triangles.size(); ++s)
    if (!mesh.alive[surface.owner_tet[s]])
      out.push_back("surface face " + std::to_string(s) + " owned by dead tet");

  SubstepContext ctx;
  ctx.mesh = &mesh;
  std::vector<Vec3> dummy(mesh.vertex_count(), Vec3::Zero());
  for (const auto* pass : {&batches.deviatoric, &batches.hydrostatic})
    for (const auto& c : *pass)
      if (c.tet >= 0 && !mesh.alive[c.tet] && !evaluate_constraint(c, dummy, ctx).skip)
        out.push_back("dead tet " + std::to_string(c.tet) + " still contributes a constraint");

  std::vector<uint8_t> anchored(mesh.vertex_count(), 0);
  for (const auto& c : batches.attachments)
    if (c.compliance == 0.0) anchored[c.particles[0]] = 1;
  for (size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!state.clipped[t]) continue;
    bool any = false;
    for (int v : mesh.tets[t]) any = any || anchored[v];
    if (!any) out.push_back("clipped tet " + std::to_string(t) + " has no world attachment");
  }
  return out;
}

}  // namespace lapsim
