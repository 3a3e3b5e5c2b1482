#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lapsim/annotator.hpp"
#include "lapsim/scenario.hpp"

namespace lapsim {

/// Everything a per-frame observer may inspect after the frame's substeps,
/// interaction phase, and render. References are valid only inside the
/// callback.
struct FrameContext {
  int frame = 0;
  double time = 0.0;  // annotation timestamp: end of the frame interval
  const TetMesh& mesh;
  const ParticleSystem& particles;
  const SurfaceMesh& surface;
  const TissueState& tissue;
  const ConstraintBatches& batches;
  const FrameAnnotations& annotations;
  std::span<const SceneInstrument> scene_instruments;
};

struct RunOptions {
  uint64_t seed = 0;
  int threads = 1;
  int frame_begin = 0;
  int frame_end = -1;  // exclusive; -1 = whole scenario
  bool bench = false;
  std::filesystem::path out_dir;  // overrides the scenario's output directory
  std::function<void(const FrameContext&)> observer;
};

struct RunResult {
  std::filesystem::path directory;
  std::filesystem::path manifest_path;
  bool complete = true;
  int failed_frame = -1;  // first frame whose substeps went non-finite
  std::string error;      // solver message when !complete
  int frames_written = 0;
  long long substeps_done = 0;
  double sim_seconds = 0.0;
  double render_seconds = 0.0;
};

/// Dataset directory resolution: explicit override beats the scenario
/// setting; a relative result lands under $LAPSIM_OUTPUT_ROOT when that is
/// set.
std::filesystem::path resolve_output_dir(const Scenario& scenario, const RunOptions& options);

/// Writes one frame's enabled channels into dir as
/// frame_<index>_<channel>.{png,simf} and returns (channel, filename, bytes)
/// records. A failed write removes the frame's partial files before
/// rethrowing.
struct WrittenFile {
  std::string channel;
  std::string name;
  std::uintmax_t bytes = 0;
};
std::vector<WrittenFile> write_frame(const FrameAnnotations& ann, int frame,
                                     const std::filesystem::path& dir, const OutputSpec& output);

/// The frame loop: per frame, substeps_per_frame solver substeps (tool poses
/// and grasp targets tracked per substep, collision constraints rebuilt from
/// predicted positions), then the interaction phase (timeline events,
/// tearing, coagulation dwell, bleed decay), then annotation and
/// persistence for frames inside [frame_begin, frame_end). The whole
/// scenario is always simulated; a partial frame range only narrows what is
/// rendered and written, and expects the other frames' files on disk from a
/// previous full run. manifest.json is written last via a temp-file rename;
/// a solver abort still writes it, flagged incomplete with the failing
/// frame.
RunResult run_scenario(const Scenario& scenario, const RunOptions& options);

}  // namespace lapsim
