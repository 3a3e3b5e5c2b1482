#include "lapsim/runner.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>

#include "json.hpp"

namespace lapsim {

namespace {

using nlohmann::json;

json pose_json(const Pose& p) {
  return json{{"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
              {"rotation_wxyz",
               {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}}};
}

json vec3_json(const Vec3& v) { return json{v.x(), v.y(), v.z()}; }

json scenario_echo(const Scenario& scn) {
  json solver{{"dt_substep", scn.solver.dt_substep},
              {"substeps_per_frame", scn.solver.substeps_per_frame},
              {"iterations_per_substep", scn.solver.iterations_per_substep},
              {"gravity", vec3_json(scn.solver.gravity)},
              {"velocity_damping", scn.solver.velocity_damping}};
  json interaction{{"tear_threshold", scn.interaction.tear_threshold},
                   {"bleed_decay", scn.interaction.bleed_decay},
                   {"coag_stiffening", scn.interaction.coag_stiffening},
                   {"coag_dwell_frames", scn.interaction.coag_dwell_frames},
                   {"coag_radius", scn.interaction.coag_radius},
                   {"jaw_radius", scn.interaction.jaw_radius},
                   {"clip_radius", scn.interaction.clip_radius},
                   {"collision_margin", scn.interaction.collision_margin},
                   {"collision_band", scn.interaction.collision_band},
                   {"motion_speed", scn.interaction.motion_speed}};
  json anatomy = json::array();
  for (const auto& piece : scn.anatomy) {
    json boxes = json::array();
    for (const auto& b : piece.pin_boxes) boxes.push_back(b);
    anatomy.push_back({{"label", piece.label_name},
                       {"mesh", piece.mesh_path.string()},
                       {"lame_lambda", piece.material.lame_lambda},
                       {"lame_mu", piece.material.lame_mu},
                       {"density", piece.material.density},
                       {"hydro_correction", piece.material.hydro_correction},
                       {"pin_boxes", boxes}});
  }
  json instruments = json::array();
  for (const auto& tool : scn.instruments) {
    json keyframes = json::array();
    for (const auto& [t, pose] : tool.timeline.keyframes)
      keyframes.push_back({{"time", t}, {"pose", pose_json(pose)}});
    json events = json::array();
    for (const auto& [t, action] : tool.timeline.events)
      events.push_back({{"time", t}, {"action", tool_action_name(action)}});
    instruments.push_back({{"id", tool.id},
                           {"type", tool.instrument.name},
                           {"kind", instrument_kind_name(tool.instrument.kind)},
                           {"label", tool.instrument.instrument_label},
                           {"keyframes", keyframes},
                           {"events", events}});
  }
  json camera{{"width", scn.camera.width},
              {"height", scn.camera.height},
              {"focal", scn.camera.focal},
              {"position", vec3_json(scn.camera.position)},
              {"look_at", vec3_json(scn.camera.look_at)},
              {"up", vec3_json(scn.camera.up)}};
  if (!scn.camera.keyframes.empty()) {
    json kfs = json::array();
    for (const auto& kf : scn.camera.keyframes)
      kfs.push_back({{"time", kf.time},
                     {"position", vec3_json(kf.position)},
                     {"look_at", vec3_json(kf.look_at)}});
    camera["keyframes"] = kfs;
  }
  return json{{"name", scn.name},
              {"duration", scn.duration},
              {"frame_rate", scn.frame_rate},
              {"solver", solver},
              {"interaction", interaction},
              {"anatomy", anatomy},
              {"instruments", instruments},
              {"camera", camera},
              {"channels", scn.output.channels},
              {"previews", scn.output.previews}};
}

struct ChannelFile {
  std::string channel;
  std::string suffix;  // "<channel>.<ext>"
  const char* format;
  const char* dtype;
  int components;
};

/// File plan for one frame given the output spec, in manifest order.
std::vector<ChannelFile> channel_files(const OutputSpec& output) {
  std::vector<ChannelFile> plan;
  for (const auto& name : output.channels) {
    if (name == "rgb") plan.push_back({name, "rgb.png", "png", "u8", 3});
    else if (name == "depth") plan.push_back({name, "depth.simf", "simf", "f32", 1});
    else if (name == "normal") plan.push_back({name, "normal.simf", "simf", "f32", 3});
    else if (name == "segmentation")
      plan.push_back({name, "segmentation.png", "png", "u16", 1});
    else if (name == "tool_mask") plan.push_back({name, "tool_mask.png", "png", "u8", 1});
    else if (name == "flow") plan.push_back({name, "flow.simf", "simf", "f32", 2});
    else if (name == "blood") plan.push_back({name, "blood.png", "png", "u8", 1});
    else if (name == "damage") plan.push_back({name, "damage.png", "png", "u8", 1});
    else if (name == "coag") plan.push_back({name, "coag.png", "png", "u8", 1});
    else if (name == "edge") plan.push_back({name, "edge.png", "png", "u8", 1});
  }
  if (output.previews) {
    plan.push_back({"depth_preview", "depth_preview.png", "png", "u8", 1});
    plan.push_back({"normal_preview", "normal_preview.png", "png", "u8", 3});
    plan.push_back({"flow_preview", "flow_preview.png", "png", "u8", 3});
  }
  return plan;
}

std::string frame_file_name(int frame, const std::string& suffix) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06d_", frame);
  return std::string(buf) + suffix;
}

/// Out-of-range frames keep their files from an earlier full run; the
/// manifest re-states them, so they must exist.
json stat_existing_frame(const std::filesystem::path& dir, int frame, const OutputSpec& output) {
  json files_json;
  for (const auto& cf : channel_files(output)) {
    const std::string name = frame_file_name(frame, cf.suffix);
    const auto path = dir / name;
    if (!std::filesystem::exists(path))
      throw ConfigError("partial frame range needs an existing full run; missing " +
                        path.string());
    files_json[cf.channel] = {{"file", name}, {"bytes", std::filesystem::file_size(path)}};
  }
  return files_json;
}

ImageU8 gray_u8(const FrameAnnotations& ann, const std::vector<uint8_t>& data) {
  return ImageU8{ann.width, ann.height, 1, data};
}

ImageF32 float_channel(const FrameAnnotations& ann, const std::vector<float>& data,
                       int components) {
  return ImageF32{ann.width, ann.height, components, data};
}

}  // namespace

std::filesystem::path resolve_output_dir(const Scenario& scenario, const RunOptions& options) {
  std::filesystem::path dir =
      options.out_dir.empty() ? scenario.output.directory : options.out_dir;
  if (dir.is_relative())
    if (const char* root = std::getenv("LAPSIM_OUTPUT_ROOT")) dir = std::filesystem::path(root) / dir;
  return dir;
}

std::vector<WrittenFile> write_frame(const FrameAnnotations& ann, int frame,
                                     const std::filesystem::path& dir, const OutputSpec& output) {
  std::vector<WrittenFile> written;
  std::vector<std::filesystem::path> paths;
  auto emit = [&](const ChannelFile& cf, const auto& writer) {
    const std::string name = frame_file_name(frame, cf.suffix);
    const auto path = dir / name;
    paths.push_back(path);
    writer(path);
    written.push_back({cf.channel, name, std::filesystem::file_size(path)});
  };

  try {
    for (const auto& cf : channel_files(output)) {
      if (cf.channel == "rgb")
        emit(cf, [&](const auto& p) { write_png_u8(p, ImageU8{ann.width, ann.height, 3, ann.rgb}); });
      else if (cf.channel == "depth")
        emit(cf, [&](const auto& p) { write_raw_f32(p, float_channel(ann, ann.depth, 1)); });
      else if (cf.channel == "normal")
        emit(cf, [&](const auto& p) { write_raw_f32(p, float_channel(ann, ann.normal, 3)); });
      else if (cf.channel == "segmentation")
        emit(cf, [&](const auto& p) {
          write_png_u16(p, ImageU16{ann.width, ann.height, ann.segmentation});
        });
      else if (cf.channel == "tool_mask")
        emit(cf, [&](const auto& p) { write_png_u8(p, gray_u8(ann, ann.tool_mask)); });
      else if (cf.channel == "flow")
        emit(cf, [&](const auto& p) { write_raw_f32(p, float_channel(ann, ann.flow, 2)); });
      else if (cf.channel == "blood")
        emit(cf, [&](const auto& p) { write_png_u8(p, gray_u8(ann, ann.blood)); });
      else if (cf.channel == "damage")
        emit(cf, [&](const auto& p) { write_png_u8(p, gray_u8(ann, ann.damage)); });
      else if (cf.channel == "coag")
        emit(cf, [&](const auto& p) { write_png_u8(p, gray_u8(ann, ann.coag)); });
      else if (cf.channel == "edge")
        emit(cf, [&](const auto& p) {
          write_png_u8(p, edge_map(ImageU8{ann.width, ann.height, 3, ann.rgb}));
        });
      else if (cf.channel == "depth_preview")
        emit(cf, [&](const auto& p) { write_png_u8(p, encode_depth_preview(ann)); });
      else if (cf.channel == "normal_preview")
        emit(cf, [&](const auto& p) { write_png_u8(p, encode_normal_preview(ann)); });
      else if (cf.channel == "flow_preview")
        emit(cf, [&](const auto& p) { write_png_u8(p, encode_flow_preview(ann)); });
    }
  } catch (...) {
    for (const auto& p : paths) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
    }
    throw;
  }
  return written;
}

namespace {

/// Per-instrument mutable state across the run.
struct ToolRuntime {
  const ScenarioInstrument* def = nullptr;
  RenderMesh mesh;
  Pose pose;       // at the current annotation time
  Pose prev_pose;  // at the previous annotation time
  bool cautery = false;
  bool attached = false;
  uint16_t attached_label = 0;
  // per-frame signals, cleared at frame start
  bool attached_this_frame = false;
  bool cut_this_frame = false;
  uint16_t cut_label = 0;
  bool clip_this_frame = false;
  uint16_t clip_label = 0;
  bool in_contact = false;
  uint16_t contact_label = 0;
  double tip_speed = 0.0;
};

/// Who owns an attachment constraint: tool index for grasps (their target
/// follows the tool), -1 for permanent world anchors (pins from clips).
struct AttachmentMeta {
  int tool = -1;
  Vec3 tool_local = Vec3::Zero();
};

struct Sim {
  TetMesh mesh;
  std::array<MaterialParams, kInstrumentLabelBase> material_of_label;
  ParticleSystem particles;
  ConstraintBatches batches;
  std::vector<int> dev_of_tet;
  Coloring coloring;
  TissueState tissue;
  FaceAdjacency adjacency;
  SurfaceMesh surface;
  std::vector<AttachmentMeta> attachment_meta;  // parallel to batches.attachments
  std::vector<std::vector<int>> tets_of_vertex;
  std::vector<uint8_t> particle_alive;  // belongs to >= 1 alive tet

  void refresh_particle_alive() {
    std::fill(particle_alive.begin(), particle_alive.end(), uint8_t{0});
    for (std::size_t t = 0; t < mesh.tet_count(); ++t)
      if (mesh.alive[t])
        for (int v : mesh.tets[t]) particle_alive[v] = 1;
  }
};

Sim build_simulation(const Scenario& scn) {
  Sim sim;
  std::vector<std::string> warnings;
  // Vertices of earlier pieces, for welding. Pieces cut from one parent mesh
  // (the demo organs) carry bit-identical coordinates on their shared
  // interfaces; welding those into one particle is what keeps a multi-piece
  // body mechanically connected. Within a single piece nothing ever welds.
  std::map<std::array<double, 3>, int> welded;
  for (const auto& piece : scn.anatomy) {
    TetMesh part = load_tet_mesh(piece.mesh_path, &warnings);
    std::vector<int> remap(part.vertex_count());
    for (std::size_t v = 0; v < part.vertex_count(); ++v) {
      const Vec3& p = part.vertices_rest[v];
      auto it = welded.find({p.x(), p.y(), p.z()});
      if (it != welded.end()) {
        remap[v] = it->second;
      } else {
        remap[v] = static_cast<int>(sim.mesh.vertex_count());
        sim.mesh.vertices_rest.push_back(p);
      }
    }
    for (const auto& tet : part.tets)
      sim.mesh.tets.push_back({remap[tet[0]], remap[tet[1]], remap[tet[2]], remap[tet[3]]});
    sim.mesh.labels.insert(sim.mesh.labels.end(), part.tet_count(), piece.label);
    sim.material_of_label[piece.label] = piece.material;
    for (std::size_t v = 0; v < part.vertex_count(); ++v) {
      const Vec3& p = part.vertices_rest[v];
      welded.emplace(std::array<double, 3>{p.x(), p.y(), p.z()}, remap[v]);
    }
  }
  sim.mesh.alive.assign(sim.mesh.tet_count(), 1);
  compute_rest_state(sim.mesh);

  std::vector<double> density(sim.mesh.tet_count());
  for (std::size_t t = 0; t < sim.mesh.tet_count(); ++t)
    density[t] = sim.material_of_label[sim.mesh.labels[t]].density;
  sim.particles = make_particles(sim.mesh, density);

  // Pins are rest-space boxes from the anatomy sections.
  for (const auto& piece : scn.anatomy)
    for (const auto& b : piece.pin_boxes)
      for (std::size_t v = 0; v < sim.mesh.vertex_count(); ++v) {
        const Vec3& p = sim.mesh.vertices_rest[v];
        if (p.x() >= b[0] && p.y() >= b[1] && p.z() >= b[2] && p.x() <= b[3] && p.y() <= b[4] &&
            p.z() <= b[5])
          sim.particles.pin(static_cast<int>(v));
      }

  build_constraints(
      sim.mesh,
      [&](uint16_t label) -> const MaterialParams& { return sim.material_of_label[label]; },
      sim.batches);
  sim.dev_of_tet.assign(sim.mesh.tet_count(), -1);
  for (std::size_t i = 0; i < sim.batches.deviatoric.size(); ++i)
    sim.dev_of_tet[sim.batches.deviatoric[i].tet] = static_cast<int>(i);
  sim.coloring = color_constraints(sim.batches, sim.particles.size());

  sim.tissue.init(sim.mesh);
  sim.adjacency = build_face_adjacency(sim.mesh);
  sim.surface = extract_surface(sim.mesh);

  sim.tets_of_vertex.resize(sim.mesh.vertex_count());
  for (std::size_t t = 0; t < sim.mesh.tet_count(); ++t)
    for (int v : sim.mesh.tets[t]) sim.tets_of_vertex[v].push_back(static_cast<int>(t));
  sim.particle_alive.assign(sim.mesh.vertex_count(), 0);
  sim.refresh_particle_alive();
  return sim;
}

uint16_t label_of_particle(const Sim& sim, int particle) {
  for (int t : sim.tets_of_vertex[particle])
    if (sim.mesh.alive[t]) return sim.mesh.labels[t];
  return 0;
}

uint16_t surface_label_of_particle(const Sim& sim, int particle) {
  for (std::size_t i = 0; i < sim.surface.triangles.size(); ++i)
    for (int v : sim.surface.triangles[i])
      if (v == particle) return sim.surface.labels[i];
  return label_of_particle(sim, particle);
}

void release_grasp(Sim& sim, int tool) {
  std::size_t w = 0;
  for (std::size_t i = 0; i < sim.batches.attachments.size(); ++i) {
    if (sim.attachment_meta[i].tool == tool) continue;
    sim.batches.attachments[w] = sim.batches.attachments[i];
    sim.attachment_meta[w] = sim.attachment_meta[i];
    ++w;
  }
  sim.batches.attachments.resize(w);
  sim.attachment_meta.resize(w);
}

}  // namespace

RunResult run_scenario(const Scenario& scenario, const RunOptions& options) {
  RunResult result;
  result.directory = resolve_output_dir(scenario, options);
  result.manifest_path = result.directory / "manifest.json";

  const int frame_count = scenario.frame_count;
  int begin = std::clamp(options.frame_begin, 0, frame_count);
  int end = options.frame_end < 0 ? frame_count : std::clamp(options.frame_end, begin, frame_count);
  const bool full_range = begin == 0 && end == frame_count;
  if (options.frame_begin != 0 && begin != options.frame_begin)
    throw ConfigError("frame range start outside the scenario");

  std::filesystem::create_directories(result.directory);
  if (full_range) {
    // The manifest must mirror the directory exactly, so stale frame files
    // from an earlier (longer) run have to go.
    for (const auto& entry : std::filesystem::directory_iterator(result.directory)) {
      const auto name = entry.path().filename().string();
      if (name.rfind("frame_", 0) == 0) std::filesystem::remove(entry.path());
    }
  }

  Sim sim = build_simulation(scenario);
  SolverConfig solver = scenario.solver;
  solver.threads = std::max(1, options.threads);
  solver.random_seed = options.seed;
  solver.validate();

  std::vector<ToolRuntime> tools(scenario.instruments.size());
  for (std::size_t k = 0; k < tools.size(); ++k) {
    tools[k].def = &scenario.instruments[k];
    tools[k].mesh = tessellate_instrument(scenario.instruments[k].instrument);
    tools[k].pose = pose_at(scenario.instruments[k].timeline, 0.0);
    tools[k].prev_pose = tools[k].pose;
  }

  ThreadPool pool(solver.threads);
  ThreadPool* pool_ptr = solver.threads > 1 ? &pool : nullptr;

  std::vector<Pose> sub_poses(tools.size());
  SubstepContext ctx;
  ctx.mesh = &sim.mesh;
  ctx.pool = pool_ptr;
  ctx.coloring = pool_ptr ? &sim.coloring : nullptr;
  if (!tools.empty())
    ctx.collision_update = [&](std::span<const Vec3> predicted, ConstraintBatches& batches) {
      for (std::size_t k = 0; k < tools.size(); ++k)
        generate_collision_constraints(tools[k].def->instrument, sub_poses[k], predicted,
                                       scenario.interaction.collision_margin, batches,
                                       scenario.interaction.collision_band);
    };

  const double frame_dt = 1.0 / scenario.frame_rate;
  const auto& inter = scenario.interaction;

  // Previous-frame snapshot feeding the flow channel.
  std::vector<Vec3> prev_positions;
  std::vector<Pose> prev_tool_poses(tools.size());
  Camera prev_camera;
  bool have_prev = false;

  json frames_json = json::array();
  using clock = std::chrono::steady_clock;

  for (int frame = 0; frame < frame_count && result.complete; ++frame) {
    const double t0 = frame * frame_dt;
    const double t1 = (frame + 1) * frame_dt;
    for (auto& tool : tools) {
      tool.attached_this_frame = false;
      tool.cut_this_frame = false;
      tool.clip_this_frame = false;
    }

    // --- substeps ---------------------------------------------------------
    const auto sim_start = clock::now();
    try {
      for (int s = 0; s < solver.substeps_per_frame; ++s) {
        const double ts = t0 + (s + 1) * solver.dt_substep;
        for (std::size_t k = 0; k < tools.size(); ++k)
          sub_poses[k] = pose_at(tools[k].def->timeline, ts);
        for (std::size_t i = 0; i < sim.batches.attachments.size(); ++i) {
          const auto& meta = sim.attachment_meta[i];
          if (meta.tool >= 0)
            sim.batches.attachments[i].target = sub_poses[meta.tool].apply(meta.tool_local);
        }
        substep(sim.particles, sim.batches, solver, ctx);
        ++result.substeps_done;
      }
    } catch (const SolverError& e) {
      result.complete = false;
      result.failed_frame = frame;
      result.error = e.what();
    }
    result.sim_seconds += std::chrono::duration<double>(clock::now() - sim_start).count();
    if (!result.complete) break;

    // --- interaction phase at the end of the frame interval ---------------
    bool topology_changed = false;
    const double event_window_end = frame + 1 == frame_count ? t1 + 1e-9 : t1;
    for (std::size_t k = 0; k < tools.size(); ++k) {
      auto& tool = tools[k];
      const auto& timeline = tool.def->timeline;
      tool.prev_pose = tool.pose;
      tool.pose = pose_at(timeline, t1);
      const Vec3 tip = tool.pose.apply(tool.def->instrument.tip_offset);
      tool.tip_speed = (tip - pose_at(timeline, t0).apply(tool.def->instrument.tip_offset)).norm() /
                       frame_dt;

      for (ToolAction action : timeline.events_in(t0, event_window_end)) {
        switch (action) {
          case ToolAction::jaw_close: {
            const auto anchors = grasp(sim.surface, sim.particles.positions,
                                       sim.particles.inv_mass, tool.pose, tip, inter.jaw_radius);
            if (!anchors.empty()) {
              tool.attached = true;
              tool.attached_this_frame = true;
              tool.attached_label = surface_label_of_particle(sim, anchors.front().particle);
              for (const auto& anchor : anchors) {
                sim.batches.attachments.push_back(
                    make_attachment(anchor.particle, tool.pose.apply(anchor.tool_local)));
                sim.attachment_meta.push_back({static_cast<int>(k), anchor.tool_local});
              }
            } else {
              std::fprintf(stderr, "[%s] jaw_close at t=%.3f grasped nothing\n",
                           tool.def->id.c_str(), t1);
            }
            break;
          }
          case ToolAction::jaw_open:
          case ToolAction::release:
            tool.attached = false;
            release_grasp(sim, static_cast<int>(k));
            break;
          case ToolAction::cautery_on:
            tool.cautery = true;
            break;
          case ToolAction::cautery_off:
            tool.cautery = false;
            break;
          case ToolAction::cut_stroke: {
            const auto& inst = tool.def->instrument;
            const Capsule& blade = inst.capsules[inst.blade_capsule];
            const Pose start = pose_at(timeline, t0);
            const SweptQuad quad{start.apply(blade.a), start.apply(blade.b),
                                 tool.pose.apply(blade.a), tool.pose.apply(blade.b)};
            const auto dead =
                cut(sim.mesh, sim.tissue, sim.adjacency, sim.particles.positions, quad);
            if (!dead.empty()) {
              tool.cut_this_frame = true;
              tool.cut_label = sim.mesh.labels[dead.front()];
              topology_changed = true;
            } else {
              std::fprintf(stderr, "[%s] cut_stroke at t=%.3f cut nothing\n", tool.def->id.c_str(),
                           t1);
            }
            break;
          }
          case ToolAction::clip_fire: {
            const auto res = clip(sim.mesh, sim.tissue, sim.particles.positions,
                                  sim.particles.inv_mass, tip, inter.clip_radius);
            if (!res.tets.empty()) {
              tool.clip_this_frame = true;
              tool.clip_label = sim.mesh.labels[res.tets.front()];
              for (int particle : res.particles) {
                sim.batches.attachments.push_back(
                    make_attachment(particle, sim.particles.positions[particle]));
                sim.attachment_meta.push_back({-1, Vec3::Zero()});
              }
            } else {
              std::fprintf(stderr, "[%s] clip_fire at t=%.3f clipped nothing\n",
                           tool.def->id.c_str(), t1);
            }
            break;
          }
        }
      }
    }

    if (inter.tear_threshold > 0.0) {
      const auto torn = tear_update(sim.mesh, sim.tissue, sim.adjacency, sim.particles.positions,
                                    inter.tear_threshold);
      if (!torn.empty()) topology_changed = true;
    }

    // Cautery dwell: counters reset when no tip is live this frame.
    bool any_cautery = false;
    for (std::size_t k = 0; k < tools.size(); ++k) {
      if (!tools[k].cautery) continue;
      any_cautery = true;
      const Vec3 tip = tools[k].pose.apply(tools[k].def->instrument.tip_offset);
      for (int tet : coagulate_update(sim.mesh, sim.tissue, sim.particles.positions, tip,
                                      inter.coag_radius, inter.coag_dwell_frames, true)) {
        if (sim.dev_of_tet[tet] >= 0)
          sim.batches.deviatoric[sim.dev_of_tet[tet]].compliance *= inter.coag_stiffening;
      }
    }
    if (!any_cautery && !tools.empty())
      coagulate_update(sim.mesh, sim.tissue, sim.particles.positions, Vec3::Zero(),
                       inter.coag_radius, inter.coag_dwell_frames, false);

    bleed_update(sim.tissue, inter.bleed_decay);

    if (topology_changed) {
      sim.surface = extract_surface(sim.mesh);
      sim.refresh_particle_alive();
    }

    // Contact scan for the triplet signals.
    for (auto& tool : tools) {
      tool.in_contact = false;
      tool.contact_label = 0;
      double best = inter.collision_margin + inter.collision_band;
      int best_particle = -1;
      for (std::size_t v = 0; v < sim.particles.size(); ++v) {
        if (!sim.particle_alive[v]) continue;
        const double d =
            capsule_sdf(tool.def->instrument, tool.pose, sim.particles.positions[v]);
        if (d < best) {
          best = d;
          best_particle = static_cast<int>(v);
        }
      }
      if (best_particle >= 0) {
        tool.in_contact = true;
        tool.contact_label = label_of_particle(sim, best_particle);
      }
    }

    std::vector<ToolSignals> signals(tools.size());
    for (std::size_t k = 0; k < tools.size(); ++k) {
      auto& s = signals[k];
      s.instrument = &tools[k].def->instrument;
      s.tip_speed = tools[k].tip_speed;
      s.attached = tools[k].attached;
      s.attached_label = tools[k].attached_label;
      s.attached_this_frame = tools[k].attached_this_frame;
      s.cautery_on = tools[k].cautery;
      s.in_contact = tools[k].in_contact;
      s.contact_label = tools[k].contact_label;
      s.cut_this_frame = tools[k].cut_this_frame;
      s.cut_label = tools[k].cut_label;
      s.clip_this_frame = tools[k].clip_this_frame;
      s.clip_label = tools[k].clip_label;
    }
    const ActionTriplet triplet = label_triplet(signals, inter.motion_speed);

    // --- annotate + persist ------------------------------------------------
    const bool in_range = frame >= begin && frame < end;
    const Camera camera = scenario.camera.at(t1);
    json record{{"index", frame}, {"time", t1}};

    if (in_range || options.observer) {
      const auto render_start = clock::now();
      const auto vertex_normals =
          compute_vertex_normals(sim.surface, sim.particles.positions, sim.particles.size());
      const SceneTissue tissue_scene{&sim.surface, sim.particles.positions, vertex_normals,
                                     &sim.tissue};
      std::vector<SceneInstrument> scene_tools(tools.size());
      std::vector<SceneInstrument> prev_scene_tools(tools.size());
      for (std::size_t k = 0; k < tools.size(); ++k) {
        scene_tools[k] = {&tools[k].def->instrument, &tools[k].mesh, tools[k].pose,
                          static_cast<int>(k)};
        prev_scene_tools[k] = {&tools[k].def->instrument, &tools[k].mesh, prev_tool_poses[k],
                               static_cast<int>(k)};
      }

      FrameAnnotations ann = rasterize(tissue_scene, scene_tools, camera, pool_ptr);
      if (have_prev) {
        FlowInputs prev;
        prev.prev_positions = prev_positions;
        prev.prev_instruments = prev_scene_tools;
        prev.prev_camera = prev_camera;
        optical_flow(ann, tissue_scene, scene_tools, camera, prev);
      }
      project_tool_annotations(scene_tools, camera, ann);
      ann.triplet = triplet;

      if (in_range) {
        const auto files = write_frame(ann, frame, result.directory, scenario.output);
        json files_json;
        for (const auto& f : files) files_json[f.channel] = {{"file", f.name}, {"bytes", f.bytes}};
        record["files"] = files_json;
        ++result.frames_written;
      } else {
        record["files"] = stat_existing_frame(result.directory, frame, scenario.output);
      }
      result.render_seconds += std::chrono::duration<double>(clock::now() - render_start).count();

      json tools_json = json::array();
      for (std::size_t k = 0; k < tools.size(); ++k) {
        json t{{"id", tools[k].def->id},
               {"pose_world", pose_json(tools[k].pose)},
               {"pose_camera", pose_json(ann.tool_poses_cam[k])},
               {"tip_valid", ann.tip_valid[k] != 0}};
        if (ann.tip_valid[k])
          t["tip_pixel"] = {ann.tool_tips[k].x(), ann.tool_tips[k].y()};
        tools_json.push_back(t);
      }
      record["tools"] = tools_json;

      if (options.observer)
        options.observer(FrameContext{frame, t1, sim.mesh, sim.particles, sim.surface, sim.tissue,
                                      sim.batches, ann, scene_tools});
    } else {
      record["files"] = stat_existing_frame(result.directory, frame, scenario.output);
      json tools_json = json::array();
      for (std::size_t k = 0; k < tools.size(); ++k) {
        const Pose cam_pose = camera.pose.compose(tools[k].pose);
        Vec2 tip_px = Vec2::Zero();
        const bool ok = camera.project(
            tools[k].pose.apply(tools[k].def->instrument.tip_offset), tip_px);
        json t{{"id", tools[k].def->id},
               {"pose_world", pose_json(tools[k].pose)},
               {"pose_camera", pose_json(cam_pose)},
               {"tip_valid", ok}};
        if (ok) t["tip_pixel"] = {tip_px.x(), tip_px.y()};
        tools_json.push_back(t);
      }
      record["tools"] = tools_json;
    }

    if (triplet.present)
      record["triplet"] = {{"instrument", triplet.instrument},
                           {"verb", triplet.verb},
                           {"target", triplet.target}};
    else
      record["triplet"] = nullptr;
    frames_json.push_back(record);

    prev_positions = sim.particles.positions;
    for (std::size_t k = 0; k < tools.size(); ++k) prev_tool_poses[k] = tools[k].pose;
    prev_camera = camera;
    have_prev = true;
  }

  // --- manifest, atomically and last --------------------------------------
  json channels_json = json::array();
  for (const auto& cf : channel_files(scenario.output))
    channels_json.push_back({{"name", cf.channel},
                             {"format", cf.format},
                             {"dtype", cf.dtype},
                             {"components", cf.components},
                             {"file_suffix", cf.suffix}});
  json manifest{
      {"schema_version", 1},
      {"generator", "lapsim"},
      {"random_seed", options.seed},
      {"threads", solver.threads},
      {"frame_count", frame_count},
      {"complete", result.complete},
      {"failed_frame", result.complete ? json(nullptr) : json(result.failed_frame)},
      {"channels", channels_json},
      {"conventions",
       {{"depth", "camera-space meters as float32; background +inf"},
        {"flow", "backward (current to previous) in pixels; frame 0 all zeros; NaN = invalid"},
        {"normal", "world-space unit vectors, float32"},
        {"segmentation", "uint16 object labels; 0 background; instruments from 16"},
        {"tool_mask", "bit k set = instrument with scene index k covers the pixel"},
        {"simf", "16-byte header 'SIMF' + u32 width,height,channels (LE), then row-major float32"}}},
      {"config", scenario_echo(scenario)},
      {"frames", frames_json}};
  if (!result.complete) manifest["error"] = result.error;

  const auto tmp = result.manifest_path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << manifest.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, result.manifest_path);
  return result;
}

}  // namespace lapsim
