#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "lapsim/genmetrics.hpp"
#include "lapsim/gradcheck.hpp"
#include "lapsim/meshgen.hpp"
#include "lapsim/runner.hpp"

namespace {

using namespace lapsim;

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

std::pair<int, int> parse_frame_range(const std::string& text) {
  const auto sep = text.find("..");
  if (sep == std::string::npos)
    throw ConfigError("frame range must look like A..B, got '" + text + "'");
  return {std::stoi(text.substr(0, sep)), std::stoi(text.substr(sep + 2))};
}

int run_simulate(const std::string& scenario_path, const std::string& out_dir, uint64_t seed,
                 int threads, const std::string& frames, bool bench) {
  const Scenario scenario = parse_scenario(scenario_path);
  RunOptions options;
  options.seed = seed;
  options.threads = threads;
  options.out_dir = out_dir;
  if (!frames.empty()) std::tie(options.frame_begin, options.frame_end) = parse_frame_range(frames);

  const RunResult result = run_scenario(scenario, options);
  if (bench) {
    const double sim_rate = result.sim_seconds > 0 ? result.substeps_done / result.sim_seconds : 0;
    std::printf("substeps\t%lld\nsim_seconds\t%.3f\nsubsteps_per_second\t%.0f\n",
                static_cast<long long>(result.substeps_done), result.sim_seconds, sim_rate);
    std::printf("frames_written\t%d\nrender_seconds\t%.3f\n", result.frames_written,
                result.render_seconds);
  }
  if (!result.complete) {
    std::fprintf(stderr, "solver aborted at frame %d: %s\n", result.failed_frame,
                 result.error.c_str());
    std::fprintf(stderr, "partial dataset with incomplete manifest at %s\n",
                 result.directory.c_str());
    return kExitNumeric;
  }
  std::printf("%d frames -> %s\n", result.frames_written, result.directory.c_str());
  return 0;
}

int run_validate_gradients(int samples, uint64_t seed) {
  const GradCheckReport report = run_gradient_check(samples, seed);
  std::printf("samples\t%d\n", report.samples);
  std::printf("max_rel_error_hydrostatic\t%.3e\n", report.max_rel_error_hydrostatic);
  std::printf("max_rel_error_deviatoric\t%.3e\n", report.max_rel_error_deviatoric);
  std::printf("seconds\t%.2f\n", report.seconds);
  const bool ok = report.pass(1e-5);
  std::printf("result\t%s\n", ok ? "pass" : "FAIL");
  return ok ? 0 : kExitNumeric;
}

void write_report(const MetricReport& report, const std::string& path) {
  const std::string json = report.to_json();
  if (path.empty()) {
    std::printf("%s\n", json.c_str());
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << json << "\n";
}

int run_metrics(const std::string& real_path, const std::string& gen_path, int k,
                const std::string& bandwidth, int kid_subsets, int kid_subset_size,
                uint64_t kid_seed, const std::string& report_path) {
  const EmbeddingSet real = load_embeddings(real_path, "real");
  const EmbeddingSet gen = load_embeddings(gen_path, "generated");

  MetricReport report;
  report.fid = fid(real, gen);

  const int subset = kid_subset_size > 0
                         ? kid_subset_size
                         : static_cast<int>(std::min<Eigen::Index>(
                               100, std::min(real.count(), gen.count())));
  report.kid = kid(real, gen, 3, subset, kid_subsets, kid_seed);
  report.kid_subset_size = subset;
  report.kid_subsets = kid_subsets;
  report.kid_seed = kid_seed;

  const double sigma = bandwidth == "median" ? median_bandwidth(real, gen) : std::stod(bandwidth);
  report.mmd_rbf = mmd_rbf(real, gen, sigma);
  report.rbf_bandwidth = sigma;

  const DensityCoverage dc = density_coverage(real, gen, k);
  report.density = dc.density;
  report.coverage = dc.coverage;
  report.knn_k = k;

  write_report(report, report_path);
  return 0;
}

int run_miou(const std::string& pred_dir, const std::string& gt_dir, int n_classes,
             const std::string& report_path) {
  std::map<std::string, std::filesystem::path> gt_files;
  for (const auto& e : std::filesystem::directory_iterator(gt_dir))
    if (e.path().extension() == ".png") gt_files[e.path().filename().string()] = e.path();

  std::vector<ImageU16> pred, gt;
  std::vector<std::string> names;
  for (const auto& e : std::filesystem::directory_iterator(pred_dir))
    if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  for (const auto& name : names) {
    const auto it = gt_files.find(name);
    if (it == gt_files.end())
      throw ConfigError("no ground-truth counterpart for " + name + " in " + gt_dir);
    pred.push_back(read_png_u16(std::filesystem::path(pred_dir) / name));
    gt.push_back(read_png_u16(it->second));
  }
  if (pred.empty()) throw ConfigError("no .png masks found in " + pred_dir);

  MetricReport report;
  report.miou = miou(pred, gt, n_classes);
  report.n_classes = n_classes;
  write_report(report, report_path);
  return 0;
}

/// One mesh per label value, vertices renumbered but coordinates copied
/// verbatim so the pieces weld back together when a scenario loads them.
void split_by_label(const TetMesh& mesh, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::set<uint16_t> labels(mesh.labels.begin(), mesh.labels.end());
  for (uint16_t label : labels) {
    TetMesh part;
    std::vector<int> remap(mesh.vertex_count(), -1);
    for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
      if (mesh.labels[t] != label) continue;
      std::array<int, 4> tet;
      for (int k = 0; k < 4; ++k) {
        int v = mesh.tets[t][k];
        if (remap[v] < 0) {
          remap[v] = static_cast<int>(part.vertex_count());
          part.vertices_rest.push_back(mesh.vertices_rest[v]);
        }
        tet[k] = remap[v];
      }
      part.tets.push_back(tet);
      part.labels.push_back(label);
    }
    part.alive.assign(part.tet_count(), 1);
    const auto path = dir / (std::string(label_name(label)) + ".tet");
    save_tet_mesh(part, path);
    std::printf("%zu vertices, %zu tets -> %s\n", part.vertex_count(), part.tet_count(),
                path.c_str());
  }
}

int run_genmesh(const std::string& kind, const std::string& out, const std::vector<double>& lo,
                const std::vector<double>& hi, const std::vector<int>& cells, int label,
                const std::string& split_dir) {
  TetMesh mesh;
  if (kind == "demo") {
    mesh = make_demo_anatomy();
  } else if (kind == "box") {
    mesh = make_box_mesh(Vec3(lo[0], lo[1], lo[2]), Vec3(hi[0], hi[1], hi[2]), cells[0], cells[1],
                         cells[2], static_cast<uint16_t>(label));
  } else {
    throw ConfigError("unknown mesh kind '" + kind + "' (demo | box)");
  }
  if (!split_dir.empty()) {
    split_by_label(mesh, split_dir);
    return 0;
  }
  save_tet_mesh(mesh, out);
  std::printf("%zu vertices, %zu tets -> %s\n", mesh.vertex_count(), mesh.tet_count(),
              out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft-tissue surgical simulation dataset generator"};
  app.require_subcommand(1);

  // simulate
  std::string scenario_path, out_dir, frames;
  uint64_t seed = 0;
  int threads = 1;
  bool bench = false;
  auto* simulate = app.add_subcommand("simulate", "Run a scenario and write its dataset");
  simulate->add_option("scenario", scenario_path, "Scenario file")->required();
  simulate->add_option("--out", out_dir, "Output directory (overrides the scenario)");
  simulate->add_option("--seed", seed, "Solver random seed");
  simulate->add_option("--threads", threads, "Worker threads (1 = sequential)")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--frames", frames, "Render/write only frames A..B (half-open)");
  simulate->add_flag("--bench", bench, "Print throughput counters");

  // validate-gradients
  int samples = 1000;
  uint64_t grad_seed = 2024;
  auto* gradients =
      app.add_subcommand("validate-gradients", "Finite-difference check of constraint gradients");
  gradients->add_option("--samples", samples, "Random deformations to test")
      ->check(CLI::PositiveNumber);
  gradients->add_option("--seed", grad_seed, "Sampling seed");

  // metrics (+ miou mode)
  std::string real_path, gen_path, bandwidth, report_path;
  int k = 0, kid_subsets = 100, kid_subset_size = 0, n_classes = 0;
  uint64_t kid_seed = 0;
  std::string pred_dir, gt_dir;
  auto* metrics = app.add_subcommand("metrics", "Generative-model metrics over embedding files");
  metrics->add_option("--real", real_path, "Real-set .semb file");
  metrics->add_option("--gen", gen_path, "Generated-set .semb file");
  metrics->add_option("--k", k, "Neighborhood size for density/coverage");
  metrics->add_option("--bandwidth", bandwidth, "RBF sigma, or 'median'");
  metrics->add_option("--kid-subsets", kid_subsets, "KID subset count");
  metrics->add_option("--kid-subset-size", kid_subset_size, "KID subset size (0 = auto)");
  metrics->add_option("--kid-seed", kid_seed, "KID subsampling seed");
  metrics->add_option("--report", report_path, "Write the JSON report here (default stdout)");
  auto* miou_cmd = metrics->add_subcommand("miou", "Mask mIoU over paired PNG directories");
  miou_cmd->add_option("--pred", pred_dir, "Predicted masks")->required();
  miou_cmd->add_option("--gt", gt_dir, "Ground-truth masks")->required();
  miou_cmd->add_option("--classes", n_classes, "Number of classes")->required();

  // genmesh
  std::string mesh_kind, mesh_out, split_dir;
  std::vector<double> lo{-0.02, -0.02, -0.02}, hi{0.02, 0.02, 0.02};
  std::vector<int> cells{2, 2, 2};
  int mesh_label = 1;
  auto* genmesh = app.add_subcommand("genmesh", "Write a procedural tet mesh");
  genmesh->add_option("kind", mesh_kind, "demo | box")->required();
  auto* out_opt = genmesh->add_option("out", mesh_out, "Output .tet path");
  genmesh->add_option("--split-dir", split_dir,
                      "Write one <label>.tet per tissue label into this directory instead")
      ->excludes(out_opt);
  genmesh->add_option("--min", lo, "Box min corner")->expected(3);
  genmesh->add_option("--max", hi, "Box max corner")->expected(3);
  genmesh->add_option("--cells", cells, "Box cell counts")->expected(3);
  genmesh->add_option("--label", mesh_label, "Box tissue label");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) return run_simulate(scenario_path, out_dir, seed, threads, frames, bench);
    if (*gradients) return run_validate_gradients(samples, grad_seed);
    if (*metrics) {
      if (*miou_cmd) return run_miou(pred_dir, gt_dir, n_classes, report_path);
      if (real_path.empty() || gen_path.empty() || k <= 0 || bandwidth.empty())
        throw ConfigError("metrics needs --real, --gen, --k and --bandwidth (or the miou mode)");
      return run_metrics(real_path, gen_path, k, bandwidth, kid_subsets, kid_subset_size,
                         kid_seed, report_path);
    }
    if (*genmesh) {
      if (mesh_out.empty() && split_dir.empty())
        throw ConfigError("genmesh needs an output path or --split-dir");
      return run_genmesh(mesh_kind, mesh_out, lo, hi, cells, mesh_label, split_dir);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitConfig;
  } catch (const SolverError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  }
  return 0;
}
