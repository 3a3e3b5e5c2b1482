#include "lapsim/annotator.hpp"

#include <algorithm>
#include <cmath>

namespace lapsim {

void Camera::validate() const {
  if (!(focal > 0.0)) throw ConfigError("camera focal must be positive");
  if (width < 64 || height < 64) throw ConfigError("camera resolution must be at least 64x64");
  pose.validate();
}

bool Camera::project_camera(const Vec3& cam, Vec2& pixel, double near) const {
  if (!(cam.z() > near)) return false;
  pixel.x() = cx + focal * cam.x() / cam.z();
  pixel.y() = cy + focal * cam.y() / cam.z();
  return true;
}

Camera make_lookat_camera(int width, int height, double focal, const Vec3& position,
                          const Vec3& look_at, const Vec3& up) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.focal = focal;
  cam.cx = width * 0.5;
  cam.cy = height * 0.5;

  const Vec3 forward = look_at - position;
  if (forward.norm() < 1e-12) throw ConfigError("camera position and look_at coincide");
  const Vec3 z = forward.normalized();
  Vec3 x = z.cross(up);  // viewer's right
  if (x.norm() < 1e-9) throw ConfigError("camera up vector is parallel to the view direction");
  x.normalize();
  const Vec3 y = z.cross(x);  // image-down (world-down for an upright camera)

  Mat3 r;  // world -> camera rows
  r.row(0) = x;
  r.row(1) = y;
  r.row(2) = z;
  cam.pose.rotation = Quat(r).normalized();
  cam.pose.translation = -(cam.pose.rotation * position);
  return cam;
}

RenderMesh tessellate_instrument(const Instrument& instrument, int segments, int rings) {
  RenderMesh mesh;
  for (const auto& c : instrument.capsules) {
    const Vec3 axis = c.b - c.a;
    const double len = axis.norm();
    const Vec3 dir = len > 1e-12 ? Vec3(axis / len) : Vec3::UnitZ();
    const Vec3 u = any_perpendicular(dir);
    const Vec3 v = dir.cross(u);
    const int base = static_cast<int>(mesh.vertices.size());

    // Stacked latitude rows: lower hemisphere (rings rows), cylinder seam,
    // upper hemisphere, then exact pole vertices.
    std::vector<int> row_start;
    auto add_row = [&](const Vec3& center, double cos_lat, double sin_lat) {
      row_start.push_back(static_cast<int>(mesh.vertices.size()));
      for (int s = 0; s < segments; ++s) {
        const double phi = 2.0 * M_PI * s / segments;
        const Vec3 radial = std::cos(phi) * u + std::sin(phi) * v;
        const Vec3 n = cos_lat * radial + sin_lat * dir;
        mesh.vertices.push_back(center + c.radius * n);
        mesh.normals.push_back(n);
      }
    };

    for (int r = rings; r >= 0; --r) {  // bottom cap: lat from near-pole to equator
      const double lat = -0.5 * M_PI * r / (rings + 1);
      add_row(c.a, std::cos(lat), std::sin(lat));
    }
    for (int r = 0; r <= rings; ++r) {  // top cap: equator to near-pole
      const double lat = 0.5 * M_PI * r / (rings + 1);
      add_row(c.b, std::cos(lat), std::sin(lat));
    }
    const int south = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(c.a - c.radius * dir);
    mesh.normals.push_back(-dir);
    const int north = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(c.b + c.radius * dir);
    mesh.normals.push_back(dir);

    for (size_t row = 0; row + 1 < row_start.size(); ++row) {
      for (int s = 0; s < segments; ++s) {
        const int s1 = (s + 1) % segments;
        const int a0 = row_start[row] + s, a1 = row_start[row] + s1;
        const int b0 = row_start[row + 1] + s, b1 = row_start[row + 1] + s1;
        mesh.triangles.push_back({a0, b1, b0});
        mesh.triangles.push_back({a0, a1, b1});
      }
    }
    for (int s = 0; s < segments; ++s) {
      const int s1 = (s + 1) % segments;
      mesh.triangles.push_back({south, row_start.front() + s1, row_start.front() + s});
      mesh.triangles.push_back({north, row_start.back() + s, row_start.back() + s1});
    }
    (void)base;
  }
  return mesh;
}

std::vector<Vec3> compute_vertex_normals(const SurfaceMesh& surface,
                                         std::span<const Vec3> positions,
                                         std::size_t vertex_count) {
  std::vector<Vec3> normals(vertex_count, Vec3::Zero());
  for (const auto& tri : surface.triangles) {
    const Vec3 n = (positions[tri[1]] - positions[tri[0]])
                       .cross(positions[tri[2]] - positions[tri[0]]);  // area-weighted
    for (int v : tri) normals[v] += n;
  }
  for (auto& n : normals) {
    const double len = n.norm();
    if (len > 1e-20) n /= len;
  }
  return normals;
}

std::array<uint8_t, 3> albedo_for_label(uint16_t label) {
  if (label >= kInstrumentLabelBase) {
    // Metallic grays, nudged per instrument so tools are tellable apart.
    const uint8_t shade = static_cast<uint8_t>(165 + 12 * ((label - kInstrumentLabelBase) % 4));
    return {shade, static_cast<uint8_t>(shade + 4), static_cast<uint8_t>(shade + 10)};
  }
  switch (static_cast<ObjectLabel>(label)) {
    case ObjectLabel::background: return {12, 10, 14};
    case ObjectLabel::liver: return {142, 52, 44};
    case ObjectLabel::gallbladder: return {96, 128, 58};
    case ObjectLabel::cystic_duct: return {206, 182, 120};
    case ObjectLabel::cystic_artery: return {196, 64, 58};
    case ObjectLabel::fat: return {232, 206, 140};
  }
  return {128, 128, 128};
}

namespace {

constexpr double kNearPlane = 1e-4;
constexpr float kFlowInvalid = std::numeric_limits<float>::quiet_NaN();

struct ClipVert {
  Vec3 cam;
  double w0, w1, w2;  // barycentric w.r.t. the unclipped triangle
};

/// Clip a camera-space triangle against z > kNearPlane. Returns 0, 3 or 4
/// vertices carrying interpolated original-triangle weights.
int clip_near(const std::array<ClipVert, 3>& in, std::array<ClipVert, 4>& out) {
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const ClipVert& a = in[i];
    const ClipVert& b = in[(i + 1) % 3];
    const bool a_in = a.cam.z() > kNearPlane;
    const bool b_in = b.cam.z() > kNearPlane;
    if (a_in) out[n++] = a;
    if (a_in != b_in) {
      const double t = (kNearPlane - a.cam.z()) / (b.cam.z() - a.cam.z());
      out[n++] = ClipVert{a.cam + t * (b.cam - a.cam), a.w0 + t * (b.w0 - a.w0),
                          a.w1 + t * (b.w1 - a.w1), a.w2 + t * (b.w2 - a.w2)};
    }
  }
  return n;
}

/// One screen-space sub-triangle ready to scan.
struct RasterTri {
  Vec2 p0, p1, p2;
  double z0, z1, z2;              // camera z at each corner
  double w[3][3];                 // original-triangle weights per corner
  double inv_area2 = 0.0;
  int8_t kind = -1;               // 0 tissue, k>=1 instrument k-1
  int32_t prim = 0;               // triangle index within its source mesh
  int32_t order = 0;              // global primitive index for tie-breaks
  int min_x = 0, max_x = 0, min_y = 0, max_y = 0;
};

struct Shade {
  const SceneTissue* tissue;
  std::span<const SceneInstrument> instruments;
  Vec3 camera_pos_world;
};

}  // namespace

FrameAnnotations rasterize(const SceneTissue& tissue,
                           std::span<const SceneInstrument> instruments, const Camera& camera,
                           ThreadPool* pool) {
  camera.validate();
  for (const auto& si : instruments)
    if (si.index < 0 || si.index >= 8)
      throw ConfigError("instrument scene index must be in [0, 8) for the tool bitmask");

  FrameAnnotations ann;
  ann.width = camera.width;
  ann.height = camera.height;
  const std::size_t n = ann.pixel_count();
  ann.rgb.assign(3 * n, 0);
  ann.depth.assign(n, std::numeric_limits<float>::infinity());
  ann.normal.assign(3 * n, 0.0f);
  ann.segmentation.assign(n, 0);
  ann.tool_mask.assign(n, 0);
  ann.flow.assign(2 * n, 0.0f);
  ann.blood.assign(n, 0);
  ann.damage.assign(n, 0);
  ann.coag.assign(n, 0);
  ann.fragments.kind.assign(n, -1);
  ann.fragments.prim.assign(n, 0);
  ann.fragments.bary.assign(2 * n, 0.0f);

  const auto bg = albedo_for_label(0);
  for (std::size_t i = 0; i < n; ++i) {
    ann.rgb[3 * i + 0] = bg[0];
    ann.rgb[3 * i + 1] = bg[1];
    ann.rgb[3 * i + 2] = bg[2];
  }

  // Project every source triangle, clip, and collect scannable fragments in
  // global primitive order.
  std::vector<RasterTri> tris;
  int32_t order = 0;
  auto emit = [&](const std::array<ClipVert, 3>& cam_tri, int8_t kind, int32_t prim) {
    std::array<ClipVert, 4> clipped;
    const int m = clip_near(cam_tri, clipped);
    for (int k = 0; k + 2 < m; ++k) {
      const ClipVert& c0 = clipped[0];
      const ClipVert& c1 = clipped[k + 1];
      const ClipVert& c2 = clipped[k + 2];
      RasterTri rt;
      Vec2 p0, p1, p2;
      camera.project_camera(c0.cam, p0, kNearPlane * 0.5);
      camera.project_camera(c1.cam, p1, kNearPlane * 0.5);
      camera.project_camera(c2.cam, p2, kNearPlane * 0.5);
      const double area2 = (p1 - p0).x() * (p2 - p0).y() - (p1 - p0).y() * (p2 - p0).x();
      if (std::abs(area2) < 1e-12) continue;
      rt.p0 = p0;
      rt.p1 = p1;
      rt.p2 = p2;
      rt.inv_area2 = 1.0 / area2;
      rt.z0 = c0.cam.z();
      rt.z1 = c1.cam.z();
      rt.z2 = c2.cam.z();
      const ClipVert* cv[3] = {&c0, &c1, &c2};
      for (int i = 0; i < 3; ++i) {
        rt.w[i][0] = cv[i]->w0;
        rt.w[i][1] = cv[i]->w1;
        rt.w[i][2] = cv[i]->w2;
      }
      rt.kind = kind;
      rt.prim = prim;
      rt.order = order;
      const double lo_x = std::min({p0.x(), p1.x(), p2.x()});
      const double hi_x = std::max({p0.x(), p1.x(), p2.x()});
      const double lo_y = std::min({p0.y(), p1.y(), p2.y()});
      const double hi_y = std::max({p0.y(), p1.y(), p2.y()});
      if (hi_x < 0 || hi_y < 0 || lo_x > camera.width || lo_y > camera.height) continue;
      rt.min_x = std::max(0, static_cast<int>(std::floor(lo_x - 0.5)));
      rt.max_x = std::min(camera.width - 1, static_cast<int>(std::ceil(hi_x + 0.5)));
      rt.min_y = std::max(0, static_cast<int>(std::floor(lo_y - 0.5)));
      rt.max_y = std::min(camera.height - 1, static_cast<int>(std::ceil(hi_y + 0.5)));
      if (rt.min_x > rt.max_x || rt.min_y > rt.max_y) continue;
      tris.push_back(rt);
    }
  };

  if (tissue.surface) {
    for (size_t t = 0; t < tissue.surface->triangles.size(); ++t, ++order) {
      const auto& tri = tissue.surface->triangles[t];
      std::array<ClipVert, 3> cv;
      for (int i = 0; i < 3; ++i) {
        cv[i].cam = camera.to_camera(tissue.positions[tri[i]]);
        cv[i].w0 = i == 0;
        cv[i].w1 = i == 1;
        cv[i].w2 = i == 2;
      }
      if (cv[0].cam.z() <= kNearPlane && cv[1].cam.z() <= kNearPlane &&
          cv[2].cam.z() <= kNearPlane)
        continue;
      emit(cv, 0, static_cast<int32_t>(t));
    }
  }
  for (size_t k = 0; k < instruments.size(); ++k) {
    const auto& si = instruments[k];
    std::vector<Vec3> world(si.mesh->vertices.size());
    for (size_t v = 0; v < world.size(); ++v) world[v] = si.pose.apply(si.mesh->vertices[v]);
    for (size_t t = 0; t < si.mesh->triangles.size(); ++t, ++order) {
      const auto& tri = si.mesh->triangles[t];
      std::array<ClipVert, 3> cv;
      for (int i = 0; i < 3; ++i) {
        cv[i].cam = camera.to_camera(world[tri[i]]);
        cv[i].w0 = i == 0;
        cv[i].w1 = i == 1;
        cv[i].w2 = i == 2;
      }
      if (cv[0].cam.z() <= kNearPlane && cv[1].cam.z() <= kNearPlane &&
          cv[2].cam.z() <= kNearPlane)
        continue;
      emit(cv, static_cast<int8_t>(k + 1), static_cast<int32_t>(t));
    }
  }

  // Row buckets so each row only scans triangles that can touch it.
  std::vector<std::vector<int32_t>> rows(camera.height);
  for (size_t i = 0; i < tris.size(); ++i)
    for (int y = tris[i].min_y; y <= tris[i].max_y; ++y) rows[y].push_back(static_cast<int32_t>(i));

  const Pose cam_to_world = camera.pose.inverse();
  const Vec3 eye = cam_to_world.translation;

  auto shade_rows = [&](std::size_t y_begin, std::size_t y_end) {
    for (std::size_t y = y_begin; y < y_end; ++y) {
      // Depth test state for this row.
      std::vector<double> zrow(camera.width, std::numeric_limits<double>::infinity());
      std::vector<int32_t> hit(camera.width, -1);      // index into tris
      std::vector<int32_t> hit_order(camera.width, -1);
      std::vector<Vec3> hit_bary(camera.width);

      const double py = y + 0.5;
      for (int32_t ti : rows[y]) {
        const RasterTri& rt = tris[ti];
        for (int x = rt.min_x; x <= rt.max_x; ++x) {
          const double px = x + 0.5;
          const double e0 = (rt.p2.x() - rt.p1.x()) * (py - rt.p1.y()) -
                            (rt.p2.y() - rt.p1.y()) * (px - rt.p1.x());
          const double e1 = (rt.p0.x() - rt.p2.x()) * (py - rt.p2.y()) -
                            (rt.p0.y() - rt.p2.y()) * (px - rt.p2.x());
          const double e2 = (rt.p1.x() - rt.p0.x()) * (py - rt.p0.y()) -
                            (rt.p1.y() - rt.p0.y()) * (px - rt.p0.x());
          const double l0 = e0 * rt.inv_area2;
          const double l1 = e1 * rt.inv_area2;
          const double l2 = e2 * rt.inv_area2;
          if (l0 < 0.0 || l1 < 0.0 || l2 < 0.0) continue;
          const double inv_z = l0 / rt.z0 + l1 / rt.z1 + l2 / rt.z2;
          const double z = 1.0 / inv_z;
          if (z > zrow[x]) continue;
          if (z == zrow[x] && rt.order >= hit_order[x]) continue;
          const double pw0 = l0 / rt.z0 * z;
          const double pw1 = l1 / rt.z1 * z;
          const double pw2 = l2 / rt.z2 * z;
          zrow[x] = z;
          hit[x] = ti;
          hit_order[x] = rt.order;
          hit_bary[x] = Vec3(pw0 * rt.w[0][0] + pw1 * rt.w[1][0] + pw2 * rt.w[2][0],
                             pw0 * rt.w[0][1] + pw1 * rt.w[1][1] + pw2 * rt.w[2][1],
                             pw0 * rt.w[0][2] + pw1 * rt.w[1][2] + pw2 * rt.w[2][2]);
        }
      }

      for (int x = 0; x < camera.width; ++x) {
        if (hit[x] < 0) continue;
        const RasterTri& rt = tris[hit[x]];
        const std::size_t p = y * camera.width + x;
        const Vec3& b = hit_bary[x];

        Vec3 world_pos, world_normal;
        uint16_t label = 0;
        if (rt.kind == 0) {
          const auto& tri = tissue.surface->triangles[rt.prim];
          world_pos = b.x() * tissue.positions[tri[0]] + b.y() * tissue.positions[tri[1]] +
                      b.z() * tissue.positions[tri[2]];
          world_normal = b.x() * tissue.vertex_normals[tri[0]] +
                         b.y() * tissue.vertex_normals[tri[1]] +
                         b.z() * tissue.vertex_normals[tri[2]];
          label = tissue.surface->labels[rt.prim];
          if (tissue.state) {
            const int owner = tissue.surface->owner_tet[rt.prim];
            const int face = tissue.surface->owner_face[rt.prim];
            ann.blood[p] = static_cast<uint8_t>(
                std::lround(255.0 * tissue.state->bleed_at(owner, face)));
            ann.damage[p] = tissue.state->damaged[owner] ? 255 : 0;
            ann.coag[p] = tissue.state->coagulated[owner] ? 255 : 0;
          }
        } else {
          const auto& si = instruments[rt.kind - 1];
          const auto& tri = si.mesh->triangles[rt.prim];
          const Vec3 local = b.x() * si.mesh->vertices[tri[0]] + b.y() * si.mesh->vertices[tri[1]] +
                             b.z() * si.mesh->vertices[tri[2]];
          world_pos = si.pose.apply(local);
          const Vec3 ln = b.x() * si.mesh->normals[tri[0]] + b.y() * si.mesh->normals[tri[1]] +
                          b.z() * si.mesh->normals[tri[2]];
          world_normal = si.pose.rotation * ln;
          label = si.instrument->instrument_label;
          ann.tool_mask[p] = static_cast<uint8_t>(1u << si.index);
        }

        const double nlen = world_normal.norm();
        if (nlen > 1e-20) world_normal /= nlen;

        ann.depth[p] = static_cast<float>(zrow[x]);
        ann.segmentation[p] = label;
        ann.normal[3 * p + 0] = static_cast<float>(world_normal.x());
        ann.normal[3 * p + 1] = static_cast<float>(world_normal.y());
        ann.normal[3 * p + 2] = static_cast<float>(world_normal.z());

        const Vec3 to_eye = (eye - world_pos).normalized();
        const double lambert = std::max(0.0, world_normal.dot(to_eye));
        const auto alb = albedo_for_label(label);
        for (int c = 0; c < 3; ++c)
          ann.rgb[3 * p + c] = static_cast<uint8_t>(std::lround(alb[c] * lambert));

        ann.fragments.kind[p] = rt.kind;
        ann.fragments.prim[p] = rt.prim;
        ann.fragments.bary[2 * p + 0] = static_cast<float>(b.y());
        ann.fragments.bary[2 * p + 1] = static_cast<float>(b.z());
      }
    }
  };

  if (pool && pool->thread_count() > 1)
    pool->parallel_for(camera.height, 16, shade_rows);
  else
    shade_rows(0, camera.height);
  return ann;
}

void optical_flow(FrameAnnotations& ann, const SceneTissue& tissue,
                  std::span<const SceneInstrument> instruments, const Camera& camera,
                  const FlowInputs& prev) {
  const std::size_t n = ann.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    const int8_t kind = ann.fragments.kind[p];
    if (kind < 0) {
      ann.flow[2 * p] = 0.0f;
      ann.flow[2 * p + 1] = 0.0f;
      continue;
    }
    const double b1 = ann.fragments.bary[2 * p];
    const double b2 = ann.fragments.bary[2 * p + 1];
    const double b0 = 1.0 - b1 - b2;

    Vec3 prev_world, cur_world;
    bool valid = true;
    if (kind == 0) {
      const auto& tri = tissue.surface->triangles[ann.fragments.prim[p]];
      if (!prev.vertex_valid.empty())
        for (int v : tri) valid = valid && prev.vertex_valid[v];
      prev_world = b0 * prev.prev_positions[tri[0]] + b1 * prev.prev_positions[tri[1]] +
                   b2 * prev.prev_positions[tri[2]];
      cur_world = b0 * tissue.positions[tri[0]] + b1 * tissue.positions[tri[1]] +
                  b2 * tissue.positions[tri[2]];
    } else {
      const auto& was = prev.prev_instruments[kind - 1];
      const auto& now = instruments[kind - 1];
      const auto& tri = was.mesh->triangles[ann.fragments.prim[p]];
      const Vec3 local = b0 * was.mesh->vertices[tri[0]] + b1 * was.mesh->vertices[tri[1]] +
                         b2 * was.mesh->vertices[tri[2]];
      prev_world = was.pose.apply(local);
      cur_world = now.pose.apply(local);
    }

    // Anchor at the reprojected current point rather than the raw pixel
    // center: then the same inputs cancel bit-exactly and a static frame
    // pair yields flow (0,0), not a reconstruction epsilon.
    Vec2 prev_pixel, cur_pixel;
    const bool cur_ok = camera.project(cur_world, cur_pixel);
    if (!cur_ok) {
      cur_pixel.x() = (p % ann.width) + 0.5;
      cur_pixel.y() = (p / ann.width) + 0.5;
    }
    if (!valid || !prev.prev_camera.project(prev_world, prev_pixel)) {
      ann.flow[2 * p] = kFlowInvalid;
      ann.flow[2 * p + 1] = kFlowInvalid;
      continue;
    }
    ann.flow[2 * p] = static_cast<float>(prev_pixel.x() - cur_pixel.x());
    ann.flow[2 * p + 1] = static_cast<float>(prev_pixel.y() - cur_pixel.y());
  }
}

void project_tool_annotations(std::span<const SceneInstrument> instruments, const Camera& camera,
                              FrameAnnotations& ann) {
  ann.tool_poses_cam.clear();
  ann.tool_tips.clear();
  ann.tip_valid.clear();
  for (const auto& si : instruments) {
    ann.tool_poses_cam.push_back(camera.pose.compose(si.pose));
    const Vec3 tip_cam = camera.to_camera(si.pose.apply(si.instrument->tip_offset));
    Vec2 pixel = Vec2::Zero();
    const bool ok = camera.project_camera(tip_cam, pixel);
    ann.tool_tips.push_back(pixel);
    ann.tip_valid.push_back(ok ? 1 : 0);
  }
}

ImageU8 edge_map(const ImageU8& rgb) {
  if (rgb.channels != 3 && rgb.channels != 1)
    throw ConfigError("edge_map expects a 1- or 3-channel image");
  const int w = rgb.width, h = rgb.height;
  std::vector<double> lum(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (rgb.channels == 1)
        lum[i] = rgb.data[i];
      else
        lum[i] = 0.299 * rgb.data[3 * i] + 0.587 * rgb.data[3 * i + 1] + 0.114 * rgb.data[3 * i + 2];
    }
  auto at = [&](int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return lum[static_cast<std::size_t>(y) * w + x];
  };
  ImageU8 out;
  out.width = w;
  out.height = h;
  out.channels = 1;
  out.data.resize(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
      const double gy = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1)) -
                        (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
      // Fixed /4 scale: a full-range step yields |gx| = 4*255, i.e. 255 out.
      const double mag = std::sqrt(gx * gx + gy * gy) / 4.0;
      out.data[static_cast<std::size_t>(y) * w + x] =
          static_cast<uint8_t>(std::min(255l, std::lround(mag)));
    }
  return out;
}

namespace {

const char* triplet_tool_name(InstrumentKind kind) {
  return kind == InstrumentKind::clip_applier ? "clipper" : instrument_kind_name(kind);
}

}  // namespace

ActionTriplet label_triplet(std::span<const ToolSignals> tools, double speed_threshold) {
  // Higher wins; ties go to the earlier tool.
  enum Rank { none = 0, dissect, retract, grasp_r, coagulate, clip_r, cut_r };
  int best_rank = none;
  ActionTriplet best;
  auto consider = [&](int rank, const ToolSignals& t, const char* verb, uint16_t label) {
    if (rank <= best_rank) return;
    best_rank = rank;
    best.present = true;
    best.instrument = triplet_tool_name(t.instrument->kind);
    best.verb = verb;
    best.target = label_name(label);
  };
  for (const auto& t : tools) {
    switch (t.instrument->kind) {
      case InstrumentKind::scissors:
        if (t.cut_this_frame) consider(cut_r, t, "cut", t.cut_label);
        break;
      case InstrumentKind::clip_applier:
        if (t.clip_this_frame) consider(clip_r, t, "clip", t.clip_label);
        break;
      case InstrumentKind::hook:
        if (t.cautery_on && t.in_contact) consider(coagulate, t, "coagulate", t.contact_label);
        else if (!t.cautery_on && t.in_contact && t.tip_speed > speed_threshold)
          consider(dissect, t, "dissect", t.contact_label);
        break;
      case InstrumentKind::grasper:
        if (t.attached_this_frame) consider(grasp_r, t, "grasp", t.attached_label);
        else if (t.attached && t.tip_speed > speed_threshold)
          consider(retract, t, "retract", t.attached_label);
        break;
    }
  }
  return best;
}

std::vector<std::string> channel_violations(const FrameAnnotations& ann,
                                            std::span<const SceneInstrument> instruments) {
  std::vector<std::string> out;
  auto complain = [&](std::size_t p, const std::string& what) {
    if (out.size() < 16)
      out.push_back("pixel (" + std::to_string(p % ann.width) + "," +
                    std::to_string(p / ann.width) + "): " + what);
  };
  for (std::size_t p = 0; p < ann.pixel_count(); ++p) {
    const uint16_t seg = ann.segmentation[p];
    const bool finite = std::isfinite(ann.depth[p]);
    if (finite != (seg != 0)) complain(p, "depth finiteness disagrees with segmentation");
    if (ann.tool_mask[p]) {
      bool matched = false;
      for (const auto& si : instruments)
        if (ann.tool_mask[p] == (1u << si.index))
          matched = matched || seg == si.instrument->instrument_label;
      if (!matched) complain(p, "tool_mask set but segmentation is not that instrument's label");
    }
    if (seg != 0) {
      const double len = std::hypot(std::hypot(ann.normal[3 * p], ann.normal[3 * p + 1]),
                                    ann.normal[3 * p + 2]);
      if (std::abs(len - 1.0) > 1e-4) complain(p, "normal not unit length");
    }
    if (ann.blood[p] && (seg == 0 || seg >= kInstrumentLabelBase))
      complain(p, "blood on a non-tissue pixel");
  }
  return out;
}

ImageU8 encode_depth_preview(const FrameAnnotations& ann) {
  float lo = std::numeric_limits<float>::infinity();
  float hi = -lo;
  for (float d : ann.depth)
    if (std::isfinite(d)) {
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  ImageU8 out;
  out.width = ann.width;
  out.height = ann.height;
  out.channels = 1;
  out.data.assign(ann.pixel_count(), 0);
  const float span = hi > lo ? hi - lo : 1.0f;
  for (std::size_t p = 0; p < ann.pixel_count(); ++p)
    if (std::isfinite(ann.depth[p]))
      out.data[p] = static_cast<uint8_t>(
          std::lround(255.0 * (1.0 - (ann.depth[p] - lo) / span)));  // near = bright
  return out;
}

ImageU8 encode_normal_preview(const FrameAnnotations& ann) {
  ImageU8 out;
  out.width = ann.width;
  out.height = ann.height;
  out.channels = 3;
  out.data.assign(3 * ann.pixel_count(), 0);
  for (std::size_t i = 0; i < 3 * ann.pixel_count(); ++i)
    out.data[i] = static_cast<uint8_t>(
        std::clamp(std::lround(ann.normal[i] * 127.5 + 127.5), 0l, 255l));
  return out;
}

ImageU8 encode_flow_preview(const FrameAnnotations& ann) {
  double max_mag = 1e-9;
  for (std::size_t p = 0; p < ann.pixel_count(); ++p) {
    const float fx = ann.flow[2 * p], fy = ann.flow[2 * p + 1];
    if (std::isfinite(fx) && std::isfinite(fy))
      max_mag = std::max(max_mag, std::hypot(double(fx), double(fy)));
  }
  ImageU8 out;
  out.width = ann.width;
  out.height = ann.height;
  out.channels = 3;
  out.data.assign(3 * ann.pixel_count(), 0);
  for (std::size_t p = 0; p < ann.pixel_count(); ++p) {
    const float fx = ann.flow[2 * p], fy = ann.flow[2 * p + 1];
    if (!std::isfinite(fx) || !std::isfinite(fy)) continue;  // invalid stays black
    const double mag = std::hypot(double(fx), double(fy)) / max_mag;
    const double hue = (std::atan2(double(fy), double(fx)) + M_PI) / (2.0 * M_PI) * 6.0;
    const int sector = std::min(5, static_cast<int>(hue));
    const double f = hue - sector;
    const double q = 1.0 - f;
    double r = 0, g = 0, b = 0;
    switch (sector) {
      case 0: r = 1; g = f; break;
      case 1: r = q; g = 1; break;
      case 2: g = 1; b = f; break;
      case 3: g = q; b = 1; break;
      case 4: r = f; b = 1; break;
      default: r = 1; b = q; break;
    }
    out.data[3 * p + 0] = static_cast<uint8_t>(std::lround(255.0 * mag * r));
    out.data[3 * p + 1] = static_cast<uint8_t>(std::lround(255.0 * mag * g));
    out.data[3 * p + 2] = static_cast<uint8_t>(std::lround(255.0 * mag * b));
  }
  return out;
}

}  // namespace lapsim
