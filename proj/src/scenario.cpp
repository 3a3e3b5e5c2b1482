#include "lapsim/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include "lapsim/structtext.hpp"

namespace lapsim {

namespace {

/// Strict-mode core: any key outside the section's vocabulary fails by name.
void check_keys(const StructuredFile& f, const TextSection& s,
                const std::set<std::string>& allowed) {
  for (const auto& e : s.entries)
    if (!allowed.contains(e.key))
      fail_at(f.path, e.line, "unknown key '" + e.key + "' in [" + s.kind + "]");
}

/// Optional key that may appear at most once.
const TextEntry* single(const StructuredFile& f, const TextSection& s, const std::string& key) {
  const TextEntry* found = nullptr;
  for (const auto& e : s.entries)
    if (e.key == key) {
      if (found) fail_at(f.path, e.line, "key '" + key + "' given more than once");
      found = &e;
    }
  return found;
}

void expect_anonymous(const StructuredFile& f, const TextSection& s) {
  if (!s.name.empty())
    fail_at(f.path, s.line, "section [" + s.kind + "] does not take a name");
}

double token_double(const StructuredFile& f, const TextEntry& e, const std::string& token) {
  double out = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto [ptr, ec] = std::from_chars(begin, end, out);
  if (ec != std::errc() || ptr != end)
    fail_at(f.path, e.line, "expected a number, got '" + token + "'");
  return out;
}

void parse_scenario_section(const StructuredFile& f, const TextSection& s, Scenario& out) {
  expect_anonymous(f, s);
  check_keys(f, s, {"name", "duration", "frame_rate"});
  if (const auto* e = single(f, s, "name")) out.name = e->value;
  out.duration = entry_double(f, s.require("duration", f.path));
  out.frame_rate = entry_double(f, s.require("frame_rate", f.path));
  if (!(out.duration > 0.0)) fail_at(f.path, s.line, "duration must be positive");
  if (!(out.frame_rate > 0.0)) fail_at(f.path, s.line, "frame_rate must be positive");
}

void parse_solver_section(const StructuredFile& f, const TextSection& s, SolverConfig& cfg) {
  expect_anonymous(f, s);
  check_keys(f, s, {"dt_substep", "substeps_per_frame", "iterations_per_substep", "gravity",
                    "velocity_damping"});
  if (const auto* e = single(f, s, "dt_substep")) cfg.dt_substep = entry_double(f, *e);
  if (const auto* e = single(f, s, "substeps_per_frame"))
    cfg.substeps_per_frame = static_cast<int>(entry_int(f, *e));
  if (const auto* e = single(f, s, "iterations_per_substep"))
    cfg.iterations_per_substep = static_cast<int>(entry_int(f, *e));
  if (const auto* e = single(f, s, "gravity")) cfg.gravity = entry_vec3(f, *e);
  if (const auto* e = single(f, s, "velocity_damping")) cfg.velocity_damping = entry_double(f, *e);
}

void parse_interaction_section(const StructuredFile& f, const TextSection& s,
                               InteractionParams& p) {
  expect_anonymous(f, s);
  check_keys(f, s, {"tear_threshold", "bleed_decay", "coag_stiffening", "coag_dwell_frames",
                    "coag_radius", "jaw_radius", "clip_radius", "collision_margin",
                    "collision_band", "motion_speed"});
  if (const auto* e = single(f, s, "tear_threshold")) p.tear_threshold = entry_double(f, *e);
  if (const auto* e = single(f, s, "bleed_decay")) p.bleed_decay = entry_double(f, *e);
  if (const auto* e = single(f, s, "coag_stiffening")) p.coag_stiffening = entry_double(f, *e);
  if (const auto* e = single(f, s, "coag_dwell_frames"))
    p.coag_dwell_frames = static_cast<int>(entry_int(f, *e));
  if (const auto* e = single(f, s, "coag_radius")) p.coag_radius = entry_double(f, *e);
  if (const auto* e = single(f, s, "jaw_radius")) p.jaw_radius = entry_double(f, *e);
  if (const auto* e = single(f, s, "clip_radius")) p.clip_radius = entry_double(f, *e);
  if (const auto* e = single(f, s, "collision_margin")) p.collision_margin = entry_double(f, *e);
  if (const auto* e = single(f, s, "collision_band")) p.collision_band = entry_double(f, *e);
  if (const auto* e = single(f, s, "motion_speed")) p.motion_speed = entry_double(f, *e);
}

AnatomyPiece parse_anatomy_section(const StructuredFile& f, const TextSection& s,
                                   const std::filesystem::path& base_dir) {
  if (s.name.empty())
    fail_at(f.path, s.line, "[anatomy] needs an object label name, e.g. [anatomy liver]");
  check_keys(f, s, {"mesh", "young", "poisson", "lame_lambda", "lame_mu", "density",
                    "hydro_correction", "pin_box"});

  AnatomyPiece piece;
  piece.label_name = s.name;
  const auto label = label_from_name(s.name);
  if (!label || *label == 0)
    fail_at(f.path, s.line,
            "'" + s.name + "' is not a tissue label (liver, gallbladder, cystic_duct, "
            "cystic_artery, fat)");
  piece.label = *label;

  piece.mesh_path = base_dir / s.require("mesh", f.path).value;
  if (!std::filesystem::exists(piece.mesh_path))
    fail_at(f.path, s.require("mesh", f.path).line,
            "mesh file not found: " + piece.mesh_path.string());

  const auto* young = single(f, s, "young");
  const auto* poisson = single(f, s, "poisson");
  const auto* lame_l = single(f, s, "lame_lambda");
  const auto* lame_m = single(f, s, "lame_mu");
  if (young || poisson) {
    if (!young || !poisson)
      fail_at(f.path, s.line, "young and poisson must be given together");
    if (lame_l || lame_m)
      fail_at(f.path, s.line, "give either young/poisson or lame_lambda/lame_mu, not both");
    piece.material =
        MaterialParams::from_young_poisson(entry_double(f, *young), entry_double(f, *poisson));
  } else {
    if (lame_l) piece.material.lame_lambda = entry_double(f, *lame_l);
    if (lame_m) piece.material.lame_mu = entry_double(f, *lame_m);
  }
  if (const auto* e = single(f, s, "density")) piece.material.density = entry_double(f, *e);
  if (const auto* e = single(f, s, "hydro_correction"))
    piece.material.hydro_correction = entry_bool(f, *e);

  for (const auto& e : s.entries)
    if (e.key == "pin_box") {
      const auto v = entry_doubles(f, e, 6);
      for (int axis = 0; axis < 3; ++axis)
        if (v[axis] > v[axis + 3])
          fail_at(f.path, e.line, "pin_box min corner exceeds max corner");
      piece.pin_boxes.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
    }
  return piece;
}

ScenarioInstrument parse_instrument_section(
    const StructuredFile& f, const TextSection& s, const std::filesystem::path& base_dir,
    std::map<std::string, std::map<std::string, Instrument>>& library_cache) {
  if (s.name.empty())
    fail_at(f.path, s.line, "[instrument] needs an id, e.g. [instrument grasper_left]");
  check_keys(f, s, {"library", "type", "keyframe", "event"});

  ScenarioInstrument tool;
  tool.id = s.name;

  const auto& lib_entry = s.require("library", f.path);
  const auto lib_path = (base_dir / lib_entry.value).lexically_normal();
  auto [it, fresh] = library_cache.try_emplace(lib_path.string());
  if (fresh) {
    if (!std::filesystem::exists(lib_path))
      fail_at(f.path, lib_entry.line, "instrument library not found: " + lib_path.string());
    it->second = load_instrument_library(lib_path);
  }

  const auto& type_entry = s.require("type", f.path);
  const auto found = it->second.find(type_entry.value);
  if (found == it->second.end())
    fail_at(f.path, type_entry.line,
            "no instrument '" + type_entry.value + "' in " + lib_path.string());
  tool.instrument = found->second;

  for (const auto& e : s.entries) {
    if (e.key == "keyframe") {
      const auto v = entry_doubles(f, e, 8);  // t x y z qw qx qy qz
      Pose pose;
      pose.translation = Vec3(v[1], v[2], v[3]);
      Quat q(v[4], v[5], v[6], v[7]);
      if (q.norm() < 1e-9) fail_at(f.path, e.line, "keyframe quaternion is zero");
      pose.rotation = q.normalized();
      tool.timeline.keyframes.emplace_back(v[0], pose);
    } else if (e.key == "event") {
      const auto tokens = entry_tokens(e);
      if (tokens.size() != 2)
        fail_at(f.path, e.line, "event takes '<time> <action>'");
      const double t = token_double(f, e, tokens[0]);
      const auto action = tool_action_from_name(tokens[1]);
      if (!action) fail_at(f.path, e.line, "unknown tool action '" + tokens[1] + "'");
      tool.timeline.events.emplace_back(t, *action);
    }
  }
  if (tool.timeline.keyframes.empty())
    fail_at(f.path, s.line, "instrument '" + s.name + "' has no keyframes");

  // Events only make sense on the tool kind that can execute them.
  for (const auto& [t, action] : tool.timeline.events) {
    const InstrumentKind k = tool.instrument.kind;
    const bool ok = (action == ToolAction::cut_stroke && k == InstrumentKind::scissors) ||
                    (action == ToolAction::clip_fire && k == InstrumentKind::clip_applier) ||
                    ((action == ToolAction::cautery_on || action == ToolAction::cautery_off) &&
                     k == InstrumentKind::hook) ||
                    ((action == ToolAction::jaw_close || action == ToolAction::jaw_open ||
                      action == ToolAction::release) &&
                     k == InstrumentKind::grasper);
    if (!ok)
      fail_at(f.path, s.line, std::string("a ") + instrument_kind_name(k) + " cannot perform '" +
                                  tool_action_name(action) + "'");
  }
  return tool;
}

void parse_camera_section(const StructuredFile& f, const TextSection& s, ScenarioCamera& cam) {
  expect_anonymous(f, s);
  check_keys(f, s, {"width", "height", "focal", "position", "look_at", "up", "keyframe"});
  if (const auto* e = single(f, s, "width")) cam.width = static_cast<int>(entry_int(f, *e));
  if (const auto* e = single(f, s, "height")) cam.height = static_cast<int>(entry_int(f, *e));
  if (const auto* e = single(f, s, "focal")) cam.focal = entry_double(f, *e);
  if (const auto* e = single(f, s, "position")) cam.position = entry_vec3(f, *e);
  if (const auto* e = single(f, s, "look_at")) cam.look_at = entry_vec3(f, *e);
  if (const auto* e = single(f, s, "up")) cam.up = entry_vec3(f, *e);
  for (const auto& e : s.entries)
    if (e.key == "keyframe") {
      const auto v = entry_doubles(f, e, 7);  // t pos look_at
      cam.keyframes.push_back({v[0], Vec3(v[1], v[2], v[3]), Vec3(v[4], v[5], v[6])});
    }
}

void parse_output_section(const StructuredFile& f, const TextSection& s, OutputSpec& out) {
  expect_anonymous(f, s);
  check_keys(f, s, {"directory", "channels", "previews"});
  if (const auto* e = single(f, s, "directory")) out.directory = e->value;
  if (const auto* e = single(f, s, "previews")) out.previews = entry_bool(f, *e);
  if (const auto* e = single(f, s, "channels")) {
    const auto& known = all_channel_names();
    std::set<std::string> wanted;
    for (const auto& token : entry_tokens(*e)) {
      if (std::find(known.begin(), known.end(), token) == known.end())
        fail_at(f.path, e->line, "unknown channel '" + token + "'");
      wanted.insert(token);
    }
    out.channels.clear();
    for (const auto& name : known)  // canonical order regardless of input order
      if (wanted.contains(name)) out.channels.push_back(name);
  }
}

}  // namespace

const std::vector<std::string>& all_channel_names() {
  static const std::vector<std::string> names = {"rgb",       "depth", "normal", "segmentation",
                                                 "tool_mask", "flow",  "blood",  "damage",
                                                 "coag",      "edge"};
  return names;
}

Camera ScenarioCamera::at(double t) const {
  Vec3 pos = position;
  Vec3 target = look_at;
  if (!keyframes.empty()) {
    if (t <= keyframes.front().time) {
      pos = keyframes.front().position;
      target = keyframes.front().look_at;
    } else if (t >= keyframes.back().time) {
      pos = keyframes.back().position;
      target = keyframes.back().look_at;
    } else {
      std::size_t i = 0;
      while (keyframes[i + 1].time <= t) ++i;
      const auto& a = keyframes[i];
      const auto& b = keyframes[i + 1];
      const double u = (t - a.time) / (b.time - a.time);
      pos = (1.0 - u) * a.position + u * b.position;
      target = (1.0 - u) * a.look_at + u * b.look_at;
    }
  }
  return make_lookat_camera(width, height, focal, pos, target, up);
}

Scenario parse_scenario(const std::filesystem::path& path) {
  const StructuredFile f = parse_structured_text(path);
  const auto base_dir = path.parent_path();

  Scenario scn;
  scn.source = path;
  scn.name = path.stem().string();
  scn.output.channels = all_channel_names();

  bool saw_scenario = false;
  std::set<std::string> seen_singletons;
  std::map<std::string, std::map<std::string, Instrument>> library_cache;

  for (const auto& s : f.sections) {
    if (s.kind == "scenario" || s.kind == "solver" || s.kind == "interaction" ||
        s.kind == "camera" || s.kind == "output") {
      if (!seen_singletons.insert(s.kind).second)
        fail_at(f.path, s.line, "duplicate [" + s.kind + "] section");
    }
    if (s.kind == "scenario") {
      saw_scenario = true;
      parse_scenario_section(f, s, scn);
    } else if (s.kind == "solver") {
      parse_solver_section(f, s, scn.solver);
    } else if (s.kind == "interaction") {
      parse_interaction_section(f, s, scn.interaction);
    } else if (s.kind == "anatomy") {
      scn.anatomy.push_back(parse_anatomy_section(f, s, base_dir));
    } else if (s.kind == "instrument") {
      scn.instruments.push_back(parse_instrument_section(f, s, base_dir, library_cache));
    } else if (s.kind == "camera") {
      parse_camera_section(f, s, scn.camera);
    } else if (s.kind == "output") {
      parse_output_section(f, s, scn.output);
    } else {
      fail_at(f.path, s.line, "unknown section [" + s.kind + "]");
    }
  }
  if (!saw_scenario) fail_at(f.path, 1, "missing required [scenario] section");
  if (scn.anatomy.empty()) fail_at(f.path, 1, "scenario has no [anatomy] sections");

  // Whole-frame bookkeeping must be exact: an off-by-epsilon frame count or a
  // substep grid that drifts against the frame grid would silently desync
  // timelines from rendering.
  const double frames = scn.duration * scn.frame_rate;
  if (std::abs(frames - std::round(frames)) > 1e-9 * std::max(1.0, frames))
    fail_at(f.path, 1, "duration * frame_rate = " + std::to_string(frames) +
                           " is not a whole number of frames");
  scn.frame_count = static_cast<int>(std::lround(frames));
  if (scn.frame_count < 1) fail_at(f.path, 1, "scenario must span at least one frame");

  const double per_frame = scn.solver.dt_substep * scn.solver.substeps_per_frame;
  if (std::abs(per_frame * scn.frame_rate - 1.0) > 1e-9)
    fail_at(f.path, 1,
            "dt_substep * substeps_per_frame = " + std::to_string(per_frame) +
                " s does not equal the frame period " + std::to_string(1.0 / scn.frame_rate) +
                " s");

  scn.solver.validate();
  scn.interaction.validate();
  for (const auto& piece : scn.anatomy) piece.material.validate();

  std::set<uint16_t> labels;
  for (const auto& piece : scn.anatomy)
    if (!labels.insert(piece.label).second)
      fail_at(f.path, 1, "two [anatomy] sections share the label '" + piece.label_name + "'");

  if (scn.instruments.size() > 8)
    fail_at(f.path, 1, "at most 8 instruments fit the tool mask");
  std::set<std::string> ids;
  for (const auto& tool : scn.instruments) {
    if (!ids.insert(tool.id).second)
      fail_at(f.path, 1, "duplicate instrument id '" + tool.id + "'");
    tool.timeline.validate(scn.duration);
  }

  for (std::size_t i = 0; i < scn.camera.keyframes.size(); ++i) {
    const auto& kf = scn.camera.keyframes[i];
    if (kf.time < 0.0 || kf.time > scn.duration)
      fail_at(f.path, 1, "camera keyframe time outside [0, duration]");
    if (i > 0 && kf.time <= scn.camera.keyframes[i - 1].time)
      fail_at(f.path, 1, "camera keyframe times must be strictly increasing");
  }
  scn.camera.at(0.0).validate();               // static setup (focal, resolution, view)
  scn.camera.at(scn.duration).validate();      // and the keyframed end, if any

  return scn;
}

}  // namespace lapsim
