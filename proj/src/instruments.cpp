#include "lapsim/instruments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lapsim/structtext.hpp"

namespace lapsim {

const char* instrument_kind_name(InstrumentKind k) {
  switch (k) {
    case InstrumentKind::grasper: return "grasper";
    case InstrumentKind::hook: return "hook";
    case InstrumentKind::scissors: return "scissors";
    case InstrumentKind::clip_applier: return "clip_applier";
  }
  return "?";
}

std::optional<InstrumentKind> instrument_kind_from_name(const std::string& name) {
  if (name == "grasper") return InstrumentKind::grasper;
  if (name == "hook") return InstrumentKind::hook;
  if (name == "scissors") return InstrumentKind::scissors;
  if (name == "clip_applier") return InstrumentKind::clip_applier;
  return std::nullopt;
}

void Instrument::validate() const {
  if (capsules.empty()) throw ConfigError("instrument " + name + " has no capsules");
  for (const auto& c : capsules)
    if (!(c.radius > 0.0)) throw ConfigError("instrument " + name + " has non-positive capsule radius");
  if (blade_capsule < 0 || blade_capsule >= static_cast<int>(capsules.size()))
    throw ConfigError("instrument " + name + " blade_capsule out of range");
  if (instrument_label < kInstrumentLabelBase)
    throw ConfigError("instrument " + name + " label collides with tissue labels");
}

void Pose::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-9)
    throw ConfigError("pose quaternion is not unit length");
  if (!translation.allFinite()) throw ConfigError("pose translation is not finite");
}

Pose Pose::inverse() const {
  Pose out;
  out.rotation = rotation.conjugate();
  out.translation = -(out.rotation * translation);
  return out;
}

Pose Pose::compose(const Pose& inner) const {
  Pose out;
  out.rotation = rotation * inner.rotation;
  out.rotation.normalize();
  out.translation = rotation * inner.translation + translation;
  return out;
}

const char* tool_action_name(ToolAction a) {
  switch (a) {
    case ToolAction::jaw_close: return "jaw_close";
    case ToolAction::jaw_open: return "jaw_open";
    case ToolAction::cautery_on: return "cautery_on";
    case ToolAction::cautery_off: return "cautery_off";
    case ToolAction::cut_stroke: return "cut_stroke";
    case ToolAction::clip_fire: return "clip_fire";
    case ToolAction::release: return "release";
  }
  return "?";
}

std::optional<ToolAction> tool_action_from_name(const std::string& name) {
  static const std::pair<const char*, ToolAction> table[] = {
      {"jaw_close", ToolAction::jaw_close},   {"jaw_open", ToolAction::jaw_open},
      {"cautery_on", ToolAction::cautery_on}, {"cautery_off", ToolAction::cautery_off},
      {"cut_stroke", ToolAction::cut_stroke}, {"clip_fire", ToolAction::clip_fire},
      {"release", ToolAction::release},
  };
  for (const auto& [n, a] : table)
    if (name == n) return a;
  return std::nullopt;
}

void ToolTimeline::validate(double duration) const {
  if (keyframes.empty()) throw ConfigError("tool timeline has no keyframes");
  for (size_t i = 0; i < keyframes.size(); ++i) {
    keyframes[i].second.validate();
    if (i > 0 && !(keyframes[i].first > keyframes[i - 1].first))
      throw ConfigError("tool keyframe times must be strictly increasing");
  }
  for (const auto& [t, action] : events) {
    (void)action;
    if (t < 0.0 || t > duration)
      throw ConfigError("tool event at t=" + std::to_string(t) + " outside scenario duration");
  }
}

std::vector<ToolAction> ToolTimeline::events_in(double t0, double t1) const {
  std::vector<std::pair<double, ToolAction>> hits;
  for (const auto& e : events)
    if (e.first >= t0 && e.first < t1) hits.push_back(e);
  std::stable_sort(hits.begin(), hits.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<ToolAction> out;
  out.reserve(hits.size());
  for (const auto& e : hits) out.push_back(e.second);
  return out;
}

Pose pose_at(const ToolTimeline& timeline, double t) {
  const auto& kf = timeline.keyframes;
  if (kf.empty()) return Pose{};
  if (t <= kf.front().first) return kf.front().second;
  if (t >= kf.back().first) return kf.back().second;
  size_t hi = 1;
  while (kf[hi].first < t) ++hi;
  const auto& [t0, p0] = kf[hi - 1];
  const auto& [t1, p1] = kf[hi];
  double u = (t - t0) / (t1 - t0);
  Pose out;
  out.translation = (1.0 - u) * p0.translation + u * p1.translation;
  out.rotation = p0.rotation.slerp(u, p1.rotation);
  return out;
}

std::vector<Capsule> world_capsules(const Instrument& instrument, const Pose& pose) {
  std::vector<Capsule> out;
  out.reserve(instrument.capsules.size());
  for (const auto& c : instrument.capsules)
    out.push_back(Capsule{pose.apply(c.a), pose.apply(c.b), c.radius});
  return out;
}

double capsule_sdf(const Instrument& instrument, const Pose& pose, const Vec3& point) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : instrument.capsules) {
    Capsule w{pose.apply(c.a), pose.apply(c.b), c.radius};
    best = std::min(best, capsule_sdf(w, point));
  }
  return best;
}

int generate_collision_constraints(const Instrument& instrument, const Pose& pose,
                                   std::span<const Vec3> positions, double margin,
                                   ConstraintBatches& batch, double detection_band) {
  std::vector<Capsule> world = world_capsules(instrument, pose);
  const double reach = margin + detection_band;
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& c : world) {
    lo = lo.cwiseMin(c.a.cwiseMin(c.b) - Vec3::Constant(c.radius + reach));
    hi = hi.cwiseMax(c.a.cwiseMax(c.b) + Vec3::Constant(c.radius + reach));
  }

  int base = static_cast<int>(batch.capsules.size());
  int emitted = 0;
  bool snapshot_taken = false;
  for (size_t i = 0; i < positions.size(); ++i) {
    const Vec3& p = positions[i];
    if ((p.array() < lo.array()).any() || (p.array() > hi.array()).any()) continue;
    for (size_t j = 0; j < world.size(); ++j) {
      if (capsule_sdf(world[j], p) >= reach) continue;
      if (!snapshot_taken) {
        batch.capsules.insert(batch.capsules.end(), world.begin(), world.end());
        snapshot_taken = true;
      }
      Constraint c;
      c.type = ConstraintType::collision;
      c.is_inequality = true;
      c.particles[0] = static_cast<int>(i);
      c.compliance = 0.0;
      c.capsule = base + static_cast<int>(j);
      c.margin = margin;
      batch.collisions.push_back(c);
      ++emitted;
    }
  }
  return emitted;
}

std::map<std::string, Instrument> load_instrument_library(const std::filesystem::path& path) {
  StructuredFile file = parse_structured_text(path);
  std::map<std::string, Instrument> out;
  for (const auto& section : file.sections) {
    if (section.kind != "instrument")
      fail_at(file.path, section.line, "unexpected section [" + section.kind + "] in instrument library");
    if (section.name.empty())
      fail_at(file.path, section.line, "instrument section needs a name");
    if (out.count(section.name))
      fail_at(file.path, section.line, "duplicate instrument " + section.name);

    Instrument inst;
    inst.name = section.name;
    bool saw_kind = false, saw_label = false;
    for (const auto& e : section.entries) {
      if (e.key == "kind") {
        auto k = instrument_kind_from_name(e.value);
        if (!k) fail_at(file.path, e.line, "unknown instrument kind " + e.value);
        inst.kind = *k;
        saw_kind = true;
      } else if (e.key == "label") {
        long long v = entry_int(file, e);
        if (v < kInstrumentLabelBase || v > 0xffff)
          fail_at(file.path, e.line, "instrument label must be in [16, 65535]");
        inst.instrument_label = static_cast<uint16_t>(v);
        saw_label = true;
      } else if (e.key == "tip_offset") {
        inst.tip_offset = entry_vec3(file, e);
      } else if (e.key == "blade_capsule") {
        inst.blade_capsule = static_cast<int>(entry_int(file, e));
      } else if (e.key == "capsule") {
        auto v = entry_doubles(file, e, 7);
        inst.capsules.push_back(Capsule{Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5]), v[6]});
      } else {
        fail_at(file.path, e.line, "unknown key " + e.key + " in [instrument " + section.name + "]");
      }
    }
    if (!saw_kind) fail_at(file.path, section.line, "instrument " + section.name + " missing kind");
    if (!saw_label) fail_at(file.path, section.line, "instrument " + section.name + " missing label");
    try {
      inst.validate();
    } catch (const ConfigError& err) {
      fail_at(file.path, section.line, err.what());
    }
    out.emplace(section.name, std::move(inst));
  }
  return out;
}

}  // namespace lapsim
