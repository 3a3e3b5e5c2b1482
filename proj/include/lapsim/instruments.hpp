#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lapsim/capsule.hpp"
#include "lapsim/math.hpp"
#include "lapsim/xpbd.hpp"

namespace lapsim {

enum class InstrumentKind : uint8_t { grasper, hook, scissors, clip_applier };

const char* instrument_kind_name(InstrumentKind k);
std::optional<InstrumentKind> instrument_kind_from_name(const std::string& name);

/// Rigid tool: collision capsules and the tip, all in the tool frame.
struct Instrument {
  std::string name;
  InstrumentKind kind = InstrumentKind::grasper;
  std::vector<Capsule> capsules;
  Vec3 tip_offset = Vec3::Zero();
  uint16_t instrument_label = kInstrumentLabelBase;
  int blade_capsule = 0;  // which capsule sweeps the cutting quad (scissors)

  void validate() const;  // throws ConfigError
};

struct Pose {
  Vec3 translation = Vec3::Zero();
  Quat rotation = Quat::Identity();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
  Pose compose(const Pose& inner) const;  // this ∘ inner
  void validate() const;                  // unit quaternion check
};

enum class ToolAction : uint8_t {
  jaw_close,
  jaw_open,
  cautery_on,
  cautery_off,
  cut_stroke,
  clip_fire,
  release,
};

const char* tool_action_name(ToolAction a);
std::optional<ToolAction> tool_action_from_name(const std::string& name);

/// Scripted actuation: pose keyframes (strictly increasing times) and timed
/// discrete events.
struct ToolTimeline {
  std::vector<std::pair<double, Pose>> keyframes;
  std::vector<std::pair<double, ToolAction>> events;

  void validate(double duration) const;  // throws ConfigError
  /// events with time in [t0, t1)
  std::vector<ToolAction> events_in(double t0, double t1) const;
};

/// Piecewise interpolation: linear translation, slerp rotation, clamped at
/// the ends.
Pose pose_at(const ToolTimeline& timeline, double t);

std::vector<Capsule> world_capsules(const Instrument& instrument, const Pose& pose);

/// min over the instrument's capsules of the world-space capsule sdf.
double capsule_sdf(const Instrument& instrument, const Pose& pose, const Vec3& point);

/// Appends one inequality constraint (C = sdf - margin >= 0, compliance 0)
/// per particle within margin of a capsule. The capsule snapshot is appended
/// to batch.capsules; constraints index into it. An axis-aligned bound
/// around the tool prunes distant particles. Returns the number of
/// constraints emitted.
///
/// detection_band widens the emission test to sdf < margin + band without
/// changing the constraint itself; the extra constraints start inactive and
/// only engage if the elastic passes later in the substep push their
/// particle through the margin. Zero band reproduces the bare predicate.
int generate_collision_constraints(const Instrument& instrument, const Pose& pose,
                                   std::span<const Vec3> positions, double margin,
                                   ConstraintBatches& batch, double detection_band = 0.0);

/// Parses an instrument library: [instrument <name>] sections with
/// kind/label/tip_offset/capsule keys. Strict about unknown keys.
std::map<std::string, Instrument> load_instrument_library(const std::filesystem::path& path);

}  // namespace lapsim
