#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "lapsim/capsule.hpp"
#include "lapsim/math.hpp"
#include "lapsim/parallel.hpp"
#include "lapsim/tetmesh.hpp"

namespace lapsim {

/// Dynamic state. After any completed substep, velocities equal
/// damping * (positions - prev_positions) / dt (see SolverConfig).
struct ParticleSystem {
  std::vector<Vec3> positions;
  std::vector<Vec3> prev_positions;
  std::vector<Vec3> velocities;
  std::vector<double> inv_mass;  // 1/kg, 0 = pinned

  std::size_t size() const { return positions.size(); }
  void add(const Vec3& position, double mass);
  void pin(int index) { inv_mass[index] = 0.0; }
};

/// Builds particles from mesh rest positions. Each alive tet spreads
/// density * rest_volume / 4 to its vertices; isolated vertices get a tiny
/// fallback mass so inv_mass stays finite.
ParticleSystem make_particles(const TetMesh& mesh, std::span<const double> density_per_tet);

struct SolverConfig {
  double dt_substep = 1.0e-3;  // s
  int substeps_per_frame = 33;
  int iterations_per_substep = 1;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double velocity_damping = 0.999;  // per-substep multiplier in (0,1]
  uint64_t random_seed = 0;
  int threads = 1;

  void validate() const;  // throws ConfigError with the offending field
};

enum class ConstraintType : uint8_t { deviatoric, hydrostatic, attachment, collision };

const char* constraint_type_name(ConstraintType t);

/// One scalar constraint. The payload fields a type uses:
///   deviatoric/hydrostatic: tet (particles mirror the tet's vertices)
///   attachment: particles[0], target
///   collision: particles[0], capsule index into ConstraintBatches::capsules,
///              margin; is_inequality = true
struct Constraint {
  ConstraintType type = ConstraintType::attachment;
  bool is_inequality = false;
  std::array<int, 4> particles = {-1, -1, -1, -1};
  double compliance = 0.0;  // alpha, 1/stiffness units
  double lambda = 0.0;      // accumulated multiplier, reset each substep
  double offset = 0.0;      // rest target subtracted from the raw evaluation
  int tet = -1;
  Vec3 target = Vec3::Zero();
  int capsule = -1;
  double margin = 0.0;
  // Attachments only: direction of the last non-degenerate evaluation. Once
  // the particle sits exactly on the target the gradient is undefined, but
  // force recovery still needs the direction the multiplier acted along.
  Vec3 last_grad = Vec3::Zero();
};

Constraint make_attachment(int particle, const Vec3& target, double compliance = 0.0);

/// Result of evaluating one constraint at given positions.
struct ConstraintEval {
  double C = 0.0;
  int n = 0;  // involved particles
  std::array<Vec3, 4> grad;
  bool skip = false;  // degenerate; do not project
};

/// Constraint storage in projection order: deviatoric, hydrostatic,
/// attachments, collisions (collisions last so penetration resolution is not
/// undone by elasticity). `capsules` is the world-space collision geometry
/// snapshot the collision pass reads.
struct ConstraintBatches {
  std::vector<Constraint> deviatoric;
  std::vector<Constraint> hydrostatic;
  std::vector<Constraint> attachments;
  std::vector<Constraint> collisions;
  std::vector<Capsule> capsules;

  std::span<const Constraint> pass(ConstraintType t) const;
  std::span<Constraint> pass(ConstraintType t);
};

/// Greedy coloring of a constraint pass by particle sharing. Constraints of
/// one color touch disjoint particles, so a color may project in parallel;
/// colors run in index order, which keeps the result identical for any
/// thread count. Attachments and collisions always run sequentially (they
/// are few).
struct PassColoring {
  std::vector<int> order;                                // permuted constraint indices
  std::vector<std::pair<std::size_t, std::size_t>> color_ranges;  // ranges into order
};

struct Coloring {
  PassColoring deviatoric;
  PassColoring hydrostatic;
};

PassColoring color_pass(std::span<const Constraint> constraints, std::size_t particle_count);
Coloring color_constraints(const ConstraintBatches& batches, std::size_t particle_count);

/// Evaluation context shared by a substep. mesh supplies inv_rest/alive for
/// the elastic constraints and may be null when none exist. pool + coloring
/// enable the parallel mode; leave either null for the sequential reference.
/// substep() binds capsules to the batch's own snapshot; callers of
/// evaluate_constraint / constraint_forces set it themselves.
///
/// collision_update, when set, is called once per substep right after
/// predict with the predicted positions; it must rebuild
/// batches.collisions / batches.capsules (they are cleared first). Detecting
/// on predicted rather than start-of-step positions is what makes the
/// end-of-substep penetration bound hold: inertia cannot carry an
/// unconstrained particle into the tool.
struct SubstepContext {
  const TetMesh* mesh = nullptr;
  ThreadPool* pool = nullptr;
  const Coloring* coloring = nullptr;
  std::span<const Capsule> capsules;
  std::function<void(std::span<const Vec3>, ConstraintBatches&)> collision_update;
};

/// prev <- x; x += dt*v + dt^2*g (pinned particles do not move).
void predict(ParticleSystem& particles, const SolverConfig& config);

/// Generic XPBD projection:
///   dlambda = (-C - alpha_tilde*lambda) / (sum_i w_i |grad_i|^2 + alpha_tilde)
///   x_i += w_i * grad_i * dlambda,   alpha_tilde = compliance / dt^2
/// Inequalities skip when C >= 0; a denominator below 1e-12 skips. Returns
/// the applied dlambda (0 when skipped).
double project_constraint(const ConstraintEval& eval, std::span<const int> particles,
                          double compliance, double dt, double& lambda,
                          std::span<Vec3> positions, std::span<const double> inv_mass,
                          bool is_inequality);

ConstraintEval evaluate_constraint(const Constraint& c, std::span<const Vec3> positions,
                                   const SubstepContext& ctx);

/// One full substep: reset lambdas, predict, iterations_per_substep
/// Gauss-Seidel sweeps in pass order, velocity update with damping.
/// Throws SolverError naming the first constraint that produced a non-finite
/// update, or "predict" when the input state is already non-finite.
void substep(ParticleSystem& particles, ConstraintBatches& batches, const SolverConfig& config,
             const SubstepContext& ctx);

/// f_i = lambda * grad_i / dt^2 at the current positions, the XPBD force
/// identity. One entry per constraint in the pass, in order.
struct ForceSample {
  int n = 0;
  std::array<int, 4> particles;
  std::array<Vec3, 4> force;
};

std::vector<ForceSample> constraint_forces(std::span<const Constraint> pass,
                                           const ParticleSystem& particles,
                                           const SubstepContext& ctx, double dt);

}  // namespace lapsim
