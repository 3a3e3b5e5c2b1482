#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "lapsim/image_io.hpp"
#include "lapsim/instruments.hpp"
#include "lapsim/interaction.hpp"
#include "lapsim/math.hpp"
#include "lapsim/parallel.hpp"
#include "lapsim/tetmesh.hpp"

namespace lapsim {

/// Pinhole camera. Camera space: +z forward, +x right, +y down (image v
/// grows downward); pose maps world to camera.
struct Camera {
  int width = 512;
  int height = 512;
  double focal = 430.0;
  double cx = 256.0;
  double cy = 256.0;
  Pose pose;

  void validate() const;
  Vec3 to_camera(const Vec3& world) const { return pose.apply(world); }
  /// Pixel coordinates of a camera-space point; false when z <= near.
  bool project_camera(const Vec3& cam, Vec2& pixel, double near = 1e-6) const;
  bool project(const Vec3& world, Vec2& pixel, double near = 1e-6) const {
    return project_camera(to_camera(world), pixel, near);
  }
};

/// World-to-camera pose from an eye point, target and world-up hint.
Camera make_lookat_camera(int width, int height, double focal, const Vec3& position,
                          const Vec3& look_at, const Vec3& up);

/// Triangle mesh for rendering one instrument, in the tool frame. Vertex
/// ids are stable across frames, which is what gives instruments exact flow.
struct RenderMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;
  std::vector<std::array<int, 3>> triangles;
};

/// Capsule tessellation: cylindrical side plus hemispherical caps with
/// analytic normals. Deterministic for fixed parameters.
RenderMesh tessellate_instrument(const Instrument& instrument, int segments = 16, int rings = 8);

/// Area-weighted vertex normals of the current surface, sized to the full
/// particle array (vertices off the surface get zero).
std::vector<Vec3> compute_vertex_normals(const SurfaceMesh& surface,
                                         std::span<const Vec3> positions,
                                         std::size_t vertex_count);

struct SceneTissue {
  const SurfaceMesh* surface = nullptr;
  std::span<const Vec3> positions;
  std::span<const Vec3> vertex_normals;
  const TissueState* state = nullptr;  // null = no blood/damage/coag splats
};

struct SceneInstrument {
  const Instrument* instrument = nullptr;
  const RenderMesh* mesh = nullptr;
  Pose pose;
  int index = 0;  // bit position in tool_mask; < 8
};

struct ActionTriplet {
  bool present = false;
  std::string instrument;
  std::string verb;
  std::string target;
};

/// Fragment provenance kept per pixel so flow can reproject exactly the
/// surface point each pixel saw. kind: -1 background, 0 tissue, k >= 1 the
/// instrument with scene index k-1. prim indexes that mesh's triangles.
struct FragmentBuffer {
  std::vector<int8_t> kind;
  std::vector<int32_t> prim;
  std::vector<float> bary;  // 2 per pixel; b0 = 1 - b1 - b2
};

struct FrameAnnotations {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;           // 3 per pixel
  std::vector<float> depth;           // camera-space meters, +inf background
  std::vector<float> normal;          // 3 per pixel, world-space unit
  std::vector<uint16_t> segmentation; // object labels, 0 background
  std::vector<uint8_t> tool_mask;     // per-instrument bitmask
  std::vector<float> flow;            // 2 per pixel, current -> previous
  std::vector<uint8_t> blood;
  std::vector<uint8_t> damage;
  std::vector<uint8_t> coag;
  FragmentBuffer fragments;

  std::vector<Pose> tool_poses_cam;
  std::vector<Vec2> tool_tips;
  std::vector<uint8_t> tip_valid;
  ActionTriplet triplet;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

/// Flat Lambertian albedo per object label (instrument labels included).
std::array<uint8_t, 3> albedo_for_label(uint16_t label);

/// Z-buffered perspective rasterization of the tissue surface and instrument
/// meshes into every channel except flow. Nearest fragment wins; equal depth
/// resolves to the lower global primitive index (tissue first, then
/// instruments in scene order), which makes the buffers bit-identical for
/// any thread count. Parallel over pixel rows when pool is given.
FrameAnnotations rasterize(const SceneTissue& tissue,
                           std::span<const SceneInstrument> instruments, const Camera& camera,
                           ThreadPool* pool = nullptr);

/// Everything optical_flow needs about frame t-1.
struct FlowInputs {
  std::span<const Vec3> prev_positions;               // tissue vertices at t-1
  std::span<const SceneInstrument> prev_instruments;  // same meshes, t-1 poses
  Camera prev_camera;
  std::span<const uint8_t> vertex_valid;  // optional; empty = all valid
};

/// Backward flow in pixels: for each foreground pixel of frame t, where its
/// surface point projected in frame t-1, minus where it projects now (the
/// pixel center, up to reconstruction rounding; both frames go through the
/// same reconstruction so a static scene is exactly zero). Background stays
/// (0,0); points invalid at t-1 (killed vertex, behind camera) get a NaN
/// sentinel.
void optical_flow(FrameAnnotations& ann, const SceneTissue& tissue,
                  std::span<const SceneInstrument> instruments, const Camera& camera,
                  const FlowInputs& prev);

/// Camera-frame tool poses and pinhole tip projections; tips behind the
/// camera are flagged invalid.
void project_tool_annotations(std::span<const SceneInstrument> instruments, const Camera& camera,
                              FrameAnnotations& ann);

/// Sobel gradient magnitude of Rec.601 luminance with a fixed /4 scale so
/// that a full-range step maps to 255 and response stays linear in contrast.
ImageU8 edge_map(const ImageU8& rgb);

/// Per-frame triplet classification inputs, one entry per scene instrument.
struct ToolSignals {
  const Instrument* instrument = nullptr;
  double tip_speed = 0.0;  // m/s
  bool attached = false;
  uint16_t attached_label = 0;
  bool attached_this_frame = false;
  bool cautery_on = false;
  bool in_contact = false;
  uint16_t contact_label = 0;
  bool cut_this_frame = false;
  uint16_t cut_label = 0;
  bool clip_this_frame = false;
  uint16_t clip_label = 0;
};

/// Highest-priority (instrument, verb, target) of the frame, or none.
/// Priority: cut > clip > coagulate > grasp > retract > dissect; ties break
/// to the lower tool index. clip_applier reports as "clipper".
ActionTriplet label_triplet(std::span<const ToolSignals> tools, double speed_threshold);

/// Channel consistency sweep; empty result = consistent. Checks the mask /
/// segmentation correspondence, depth-foreground equivalence, normal unit
/// length, and blood-on-tissue-only.
std::vector<std::string> channel_violations(const FrameAnnotations& ann,
                                            std::span<const SceneInstrument> instruments);

ImageU8 encode_depth_preview(const FrameAnnotations& ann);
ImageU8 encode_normal_preview(const FrameAnnotations& ann);
ImageU8 encode_flow_preview(const FrameAnnotations& ann);

}  // namespace lapsim
