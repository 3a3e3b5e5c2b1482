#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "lapsim/annotator.hpp"
#include "lapsim/instruments.hpp"
#include "lapsim/interaction.hpp"
#include "lapsim/neohookean.hpp"
#include "lapsim/xpbd.hpp"

namespace lapsim {

/// One mesh file plus the object label and material all its tets receive.
struct AnatomyPiece {
  std::string label_name;
  uint16_t label = 0;
  std::filesystem::path mesh_path;  // resolved against the scenario file
  MaterialParams material;
  std::vector<std::array<double, 6>> pin_boxes;  // rest-space min/max corners
};

struct CameraKeyframe {
  double time = 0.0;
  Vec3 position = Vec3::Zero();
  Vec3 look_at = Vec3::Zero();
};

/// Static or keyframed look-at camera. Keyframes lerp position and target
/// with clamped ends; focal, resolution and the up hint stay fixed.
struct ScenarioCamera {
  int width = 512;
  int height = 512;
  double focal = 430.0;
  Vec3 position = Vec3(0.0, -0.3, 0.15);
  Vec3 look_at = Vec3::Zero();
  Vec3 up = Vec3::UnitZ();
  std::vector<CameraKeyframe> keyframes;

  Camera at(double t) const;
};

struct ScenarioInstrument {
  std::string id;
  Instrument instrument;  // resolved copy out of the library file
  ToolTimeline timeline;
};

/// Channel names write_frame understands, in manifest order.
const std::vector<std::string>& all_channel_names();

struct OutputSpec {
  std::filesystem::path directory = "dataset";
  std::vector<std::string> channels;  // validated; parse fills all by default
  bool previews = false;              // extra 8-bit renderings of float channels
};

struct Scenario {
  std::filesystem::path source;
  std::string name;
  double duration = 1.0;
  double frame_rate = 25.0;
  int frame_count = 25;  // resolved from duration * frame_rate
  SolverConfig solver;
  InteractionParams interaction;
  std::vector<AnatomyPiece> anatomy;
  std::vector<ScenarioInstrument> instruments;
  ScenarioCamera camera;
  OutputSpec output;
};

/// Strict scenario parse: unknown sections or keys fail by name, referenced
/// files must exist, instrument types must resolve in their library,
/// duration * frame_rate must be a whole frame count, and
/// dt_substep * substeps_per_frame must equal the frame period. The returned
/// Scenario has every default filled in.
Scenario parse_scenario(const std::filesystem::path& path);

}  // namespace lapsim
