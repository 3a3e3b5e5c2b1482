#pragma once

#include <span>
#include <string>
#include <vector>

#include "lapsim/instruments.hpp"
#include "lapsim/math.hpp"
#include "lapsim/tetmesh.hpp"
#include "lapsim/xpbd.hpp"

namespace lapsim {

/// Tunables for the inter-frame interaction phase. These are scenario-file
/// settings (`[interaction]` section); the constructor values are the
/// defaults a scenario inherits.
struct InteractionParams {
  double tear_threshold = 1.8;      // relative distortion C_D/sqrt(3); <= 0 disables
  double bleed_decay = 0.97;        // per-frame multiplier
  double coag_stiffening = 0.25;    // deviatoric compliance multiplier on coagulation
  int coag_dwell_frames = 5;        // consecutive frames under the cautery tip
  double coag_radius = 0.006;       // m
  double jaw_radius = 0.008;        // m
  double clip_radius = 0.006;       // m
  double collision_margin = 0.001;  // m
  double collision_band = 0.004;    // extra detection reach beyond the margin
  double motion_speed = 0.02;       // m/s tip speed separating retract/dissect from holding

  void validate() const;  // throws ConfigError naming the field
};

/// Per-tet and per-face interaction state. Face slots are indexed
/// tet*4 + local_face whether or not the face is currently on the surface;
/// only slots owned by alive tets are ever rendered.
struct TissueState {
  std::vector<float> bleed;  // [0,1], 4 slots per tet
  std::vector<uint8_t> damaged;
  std::vector<uint8_t> coagulated;
  std::vector<uint8_t> clipped;
  std::vector<int> coag_dwell;

  void init(const TetMesh& mesh);
  float& bleed_at(int tet, int face) { return bleed[static_cast<size_t>(tet) * 4 + face]; }
  float bleed_at(int tet, int face) const { return bleed[static_cast<size_t>(tet) * 4 + face]; }
};

/// neighbor[tet*4 + face] = tet sharing that face, -1 on the boundary.
/// neighbor_face gives the matching local face index on the neighbor.
/// Static for a whole run: cutting deletes elements, never rewires them.
struct FaceAdjacency {
  std::vector<int> neighbor;
  std::vector<int8_t> neighbor_face;
};

FaceAdjacency build_face_adjacency(const TetMesh& mesh);

/// A grasped particle and where it sits in the tool frame at grasp time.
struct GraspAnchor {
  int particle = -1;
  Vec3 tool_local = Vec3::Zero();
};

/// Collects free surface particles within jaw_radius of the world tip and
/// records their tool-frame anchors. Empty result = nothing in reach (the
/// caller reports the diagnostic).
std::vector<GraspAnchor> grasp(const SurfaceMesh& surface, std::span<const Vec3> positions,
                               std::span<const double> inv_mass, const Pose& tool_pose,
                               const Vec3& tip_world, double jaw_radius);

/// Tears every alive tet whose relative distortion ||F||_F/sqrt(3) exceeds
/// the threshold: the tet dies (its constraints skip from then on), is
/// marked damaged, and faces it exposes on alive neighbors start bleeding
/// unless the neighbor is coagulated. Returns the torn tets.
std::vector<int> tear_update(TetMesh& mesh, TissueState& state, const FaceAdjacency& adj,
                             std::span<const Vec3> positions, double tear_threshold);

/// Blade segment swept between two poses over one frame.
struct SweptQuad {
  Vec3 a0, b0;  // segment at frame start
  Vec3 a1, b1;  // segment at frame end
};

/// True when the quad (split into two triangles) overlaps the tet:
/// quad edge through a tet face, tet edge through the quad, or quad corner
/// inside the tet.
bool swept_quad_hits_tet(const SweptQuad& quad, const TetMesh& mesh, int tet,
                         std::span<const Vec3> positions);

/// Kills every alive tet the swept blade quad overlaps. Exposed neighbor
/// faces bleed unless the neighbor is coagulated or clipped. Returns the cut
/// tets (empty = no-op, caller reports the diagnostic).
std::vector<int> cut(TetMesh& mesh, TissueState& state, const FaceAdjacency& adj,
                     std::span<const Vec3> positions, const SweptQuad& quad);

struct ClipResult {
  std::vector<int> particles;  // to be world-anchored by the caller
  std::vector<int> tets;       // marked clipped
};

/// Selects free particles of alive tets within clip_radius of the tip and
/// marks their tets clipped. The caller turns the particles into permanent
/// zero-compliance world attachments at their current positions.
ClipResult clip(const TetMesh& mesh, TissueState& state, std::span<const Vec3> positions,
                std::span<const double> inv_mass, const Vec3& tip_world, double clip_radius);

/// Per-frame cautery dwell bookkeeping. With the cautery off every counter
/// resets. With it on, tets with any particle within coag_radius of the tip
/// count consecutive frames; on reaching dwell_frames a tet coagulates: its
/// face bleed zeroes and it is returned so the caller can stiffen its
/// deviatoric constraint. Already-coagulated tets are not returned again.
std::vector<int> coagulate_update(const TetMesh& mesh, TissueState& state,
                                  std::span<const Vec3> positions, const Vec3& tip_world,
                                  double coag_radius, int dwell_frames, bool cautery_active);

/// bleed <- decay * bleed; values below 0.01 clamp to 0.
void bleed_update(TissueState& state, double decay);

/// Post-frame soundness sweep: coagulated tets have zero face bleed, dead
/// tets own no surface faces and no live constraints, clipped tets have at
/// least one zero-compliance attachment among the given ones. Returns
/// human-readable violations (empty = sound).
std::vector<std::string> tissue_state_violations(const TetMesh& mesh, const TissueState& state,
                                                 const SurfaceMesh& surface,
                                                 const ConstraintBatches& batches);

}  // namespace lapsim
