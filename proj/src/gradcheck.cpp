#include "lapsim/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <vector>

#include "lapsim/neohookean.hpp"

namespace lapsim {

namespace {

double dof_sweep(const TetMesh& mesh, std::span<const Vec3> base,
                 ConstraintEval (*eval_fn)(const Mat3&, const Mat3&)) {
  const ConstraintEval eval = eval_fn(deformation_gradient(mesh, 0, base), mesh.inv_rest[0]);
  const double h = 1e-6;
  double max_rel = 0.0;
  std::vector<Vec3> probe(base.begin(), base.end());
  for (int v = 0; v < 4; ++v)
    for (int axis = 0; axis < 3; ++axis) {
      const double saved = probe[v][axis];
      probe[v][axis] = saved + h;
      const double cp = eval_fn(deformation_gradient(mesh, 0, probe), mesh.inv_rest[0]).C;
      probe[v][axis] = saved - h;
      const double cm = eval_fn(deformation_gradient(mesh, 0, probe), mesh.inv_rest[0]).C;
      probe[v][axis] = saved;
      const double fd = (cp - cm) / (2.0 * h);
      const double an = eval.grad[v][axis];
      const double scale = std::max({std::abs(fd), std::abs(an), 1e-4});
      max_rel = std::max(max_rel, std::abs(fd - an) / scale);
    }
  return max_rel;
}

}  // namespace

GradCheckReport run_gradient_check(int samples, uint64_t seed) {
  TetMesh mesh;
  mesh.vertices_rest = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  mesh.tets = {{0, 1, 2, 3}};
  mesh.labels = {1};
  mesh.alive = {1};
  compute_rest_state(mesh);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.6, 0.6);

  GradCheckReport report;
  report.samples = samples;
  const auto start = std::chrono::steady_clock::now();
  std::vector<Vec3> positions(4);
  for (int s = 0; s < samples; ++s) {
    double det = 0.0;
    do {
      for (auto& p : positions) p = Vec3(jitter(rng), jitter(rng), jitter(rng));
      for (int v = 0; v < 4; ++v) positions[v] += mesh.vertices_rest[v];
      det = deformation_gradient(mesh, 0, positions).determinant();
    } while (std::abs(det) < 0.05);

    report.max_rel_error_hydrostatic =
        std::max(report.max_rel_error_hydrostatic, dof_sweep(mesh, positions, hydrostatic_eval));
    report.max_rel_error_deviatoric =
        std::max(report.max_rel_error_deviatoric, dof_sweep(mesh, positions, deviatoric_eval));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace lapsim
