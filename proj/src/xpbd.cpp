#include "lapsim/xpbd.hpp"

#include <atomic>
#include <cmath>

#include "lapsim/neohookean.hpp"

namespace lapsim {

void ParticleSystem::add(const Vec3& position, double mass) {
  positions.push_back(position);
  prev_positions.push_back(position);
  velocities.push_back(Vec3::Zero());
  inv_mass.push_back(mass > 0.0 ? 1.0 / mass : 0.0);
}

ParticleSystem make_particles(const TetMesh& mesh, std::span<const double> density_per_tet) {
  std::vector<double> mass(mesh.vertex_count(), 0.0);
  for (std::size_t t = 0; t < mesh.tet_count(); ++t) {
    if (!mesh.alive[t]) continue;
    const double share = density_per_tet[t] * mesh.rest_volume[t] * 0.25;
    for (int v : mesh.tets[t]) mass[v] += share;
  }
  ParticleSystem ps;
  for (std::size_t v = 0; v < mesh.vertex_count(); ++v)
    ps.add(mesh.vertices_rest[v], mass[v] > 0.0 ? mass[v] : 1e-6);
  return ps;
}

void SolverConfig::validate() const {
  if (!(dt_substep >= 1e-5 && dt_substep <= 1e-2))
    throw ConfigError("dt_substep must be in [1e-5, 1e-2]");
  if (substeps_per_frame < 1) throw ConfigError("substeps_per_frame must be >= 1");
  if (iterations_per_substep < 1) throw ConfigError("iterations_per_substep must be >= 1");
  if (!(velocity_damping > 0.0 && velocity_damping <= 1.0))
    throw ConfigError("velocity_damping must be in (0, 1]");
  if (!gravity.allFinite()) throw ConfigError("gravity must be finite");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

const char* constraint_type_name(ConstraintType t) {
  switch (t) {
    case ConstraintType::deviatoric: return "deviatoric";
    case ConstraintType::hydrostatic: return "hydrostatic";
    case ConstraintType::attachment: return "attachment";
    case ConstraintType::collision: return "collision";
  }
  return "unknown";
}

Constraint make_attachment(int particle, const Vec3& target, double compliance) {
  Constraint c;
  c.type = ConstraintType::attachment;
  c.particles = {particle, -1, -1, -1};
  c.compliance = compliance;
  c.target = target;
  return c;
}

std::span<const Constraint> ConstraintBatches::pass(ConstraintType t) const {
  switch (t) {
    case ConstraintType::deviatoric: return deviatoric;
    case ConstraintType::hydrostatic: return hydrostatic;
    case ConstraintType::attachment: return attachments;
    case ConstraintType::collision: return collisions;
  }
  return {};
}

std::span<Constraint> ConstraintBatches::pass(ConstraintType t) {
  switch (t) {
    case ConstraintType::deviatoric: return deviatoric;
    case ConstraintType::hydrostatic: return hydrostatic;
    case ConstraintType::attachment: return attachments;
    case ConstraintType::collision: return collisions;
  }
  return {};
}

PassColoring color_pass(std::span<const Constraint> constraints, std::size_t particle_count) {
  const std::size_t n = constraints.size();
  std::vector<std::vector<int>> touching(particle_count);
  for (std::size_t i = 0; i < n; ++i)
    for (int p : constraints[i].particles)
      if (p >= 0) touching[p].push_back(static_cast<int>(i));

  std::vector<int> color(n, -1);
  std::vector<int> forbidden_stamp;
  int max_color = -1;
  for (std::size_t i = 0; i < n; ++i) {
    for (int p : constraints[i].particles) {
      if (p < 0) continue;
      for (int j : touching[p]) {
        const int cj = color[j];
        if (cj >= 0) forbidden_stamp[cj] = static_cast<int>(i);
      }
    }
    int c = 0;
    while (c < static_cast<int>(forbidden_stamp.size()) &&
           forbidden_stamp[c] == static_cast<int>(i))
      ++c;
    color[i] = c;
    if (c > max_color) {
      max_color = c;
      forbidden_stamp.resize(max_color + 1, -1);
    }
  }

  PassColoring out;
  out.order.resize(n);
  const int n_colors = max_color + 1;
  std::vector<std::size_t> bucket_size(n_colors, 0);
  for (std::size_t i = 0; i < n; ++i) ++bucket_size[color[i]];
  std::vector<std::size_t> offset(n_colors, 0);
  std::size_t acc = 0;
  for (int c = 0; c < n_colors; ++c) {
    offset[c] = acc;
    out.color_ranges.emplace_back(acc, acc + bucket_size[c]);
    acc += bucket_size[c];
  }
  for (std::size_t i = 0; i < n; ++i) out.order[offset[color[i]]++] = static_cast<int>(i);
  return out;
}

Coloring color_constraints(const ConstraintBatches& batches, std::size_t particle_count) {
  Coloring c;
  c.deviatoric = color_pass(batches.deviatoric, particle_count);
  c.hydrostatic = color_pass(batches.hydrostatic, particle_count);
  return c;
}

void predict(ParticleSystem& particles, const SolverConfig& config) {
  const double dt = config.dt_substep;
  const Vec3 g_dt2 = config.gravity * dt * dt;
  const std::size_t n = particles.size();
  for (std::size_t i = 0; i < n; ++i) {
    particles.prev_positions[i] = particles.positions[i];
    if (particles.inv_mass[i] == 0.0) continue;
    particles.positions[i] += dt * particles.velocities[i] + g_dt2;
  }
}

double project_constraint(const ConstraintEval& eval, std::span<const int> particles,
                          double compliance, double dt, double& lambda,
                          std::span<Vec3> positions, std::span<const double> inv_mass,
                          bool is_inequality) {
  if (eval.skip) return 0.0;
  if (is_inequality && eval.C >= 0.0) return 0.0;
  const double alpha_tilde = compliance / (dt * dt);
  double denom = alpha_tilde;
  for (int i = 0; i < eval.n; ++i) denom += inv_mass[particles[i]] * eval.grad[i].squaredNorm();
  if (denom < 1e-12) return 0.0;
  const double dlambda = (-eval.C - alpha_tilde * lambda) / denom;
  lambda += dlambda;
  for (int i = 0; i < eval.n; ++i)
    positions[particles[i]] += inv_mass[particles[i]] * dlambda * eval.grad[i];
  return dlambda;
}

ConstraintEval evaluate_constraint(const Constraint& c, std::span<const Vec3> positions,
                                   const SubstepContext& ctx) {
  ConstraintEval eval;
  switch (c.type) {
    case ConstraintType::deviatoric:
    case ConstraintType::hydrostatic: {
      if (!ctx.mesh->alive[c.tet]) {
        eval.skip = true;
        return eval;
      }
      const Mat3 F = deformation_gradient(*ctx.mesh, c.tet, positions);
      eval = c.type == ConstraintType::deviatoric
                 ? deviatoric_eval(F, ctx.mesh->inv_rest[c.tet])
                 : hydrostatic_eval(F, ctx.mesh->inv_rest[c.tet]);
      eval.C -= c.offset;
      return eval;
    }
    case ConstraintType::attachment: {
      const Vec3 d = positions[c.particles[0]] - c.target;
      const double len = d.norm();
      eval.n = 1;
      if (len < 1e-12) {
        // At the target: C = 0 and the true gradient direction is whatever
        // the constraint last pushed along. A zero last_grad zeroes the
        // denominator, which skips projection, so this stays safe.
        eval.C = 0.0;
        eval.grad[0] = c.last_grad;
        return eval;
      }
      eval.C = len;
      eval.grad[0] = d / len;
      return eval;
    }
    case ConstraintType::collision: {
      const Capsule& cap = ctx.capsules[c.capsule];
      const Vec3& p = positions[c.particles[0]];
      eval.n = 1;
      eval.C = capsule_sdf(cap, p) - c.margin;
      eval.grad[0] = capsule_sdf_gradient(cap, p);
      return eval;
    }
  }
  eval.skip = true;
  return eval;
}

namespace {

// Shared by the sequential and parallel paths. Returns false on a non-finite
// update so the parallel path can record the failure without throwing across
// threads.
inline bool project_one(Constraint& c, ParticleSystem& ps, const SubstepContext& ctx, double dt) {
  const ConstraintEval eval = evaluate_constraint(c, ps.positions, ctx);
  if (c.type == ConstraintType::attachment && !eval.skip && eval.C > 0.0)
    c.last_grad = eval.grad[0];
  const double dlambda =
      project_constraint(eval, c.particles, c.compliance, dt, c.lambda, ps.positions, ps.inv_mass,
                         c.is_inequality);
  return std::isfinite(dlambda);
}

void run_pass(std::span<Constraint> pass, ConstraintType type, const PassColoring* coloring,
              ParticleSystem& ps, const SubstepContext& ctx, double dt) {
  if (ctx.pool && coloring && ctx.pool->thread_count() > 1) {
    std::atomic<int> first_bad{-1};
    ctx.pool->parallel_colored(coloring->color_ranges, [&](std::size_t slot) {
      const int i = coloring->order[slot];
      if (!project_one(pass[i], ps, ctx, dt)) {
        int expected = -1;
        first_bad.compare_exchange_strong(expected, i);
      }
    });
    if (first_bad.load() >= 0)
      throw SolverError(std::string("non-finite update at ") + constraint_type_name(type) +
                        " constraint " + std::to_string(first_bad.load()));
  } else {
    for (std::size_t i = 0; i < pass.size(); ++i) {
      if (!project_one(pass[i], ps, ctx, dt))
        throw SolverError(std::string("non-finite update at ") + constraint_type_name(type) +
                          " constraint " + std::to_string(i));
    }
  }
}

}  // namespace

void substep(ParticleSystem& particles, ConstraintBatches& batches, const SolverConfig& config,
             const SubstepContext& ctx) {
  SubstepContext bound = ctx;
  bound.capsules = batches.capsules;
  const double dt = config.dt_substep;

  for (auto* pass : {&batches.deviatoric, &batches.hydrostatic, &batches.attachments,
                     &batches.collisions})
    for (Constraint& c : *pass) c.lambda = 0.0;

  predict(particles, config);
  for (std::size_t i = 0; i < particles.size(); ++i)
    if (!particles.positions[i].allFinite())
      throw SolverError("non-finite position at particle " + std::to_string(i) +
                        " after predict");

  if (ctx.collision_update) {
    batches.collisions.clear();
    batches.capsules.clear();
    ctx.collision_update(particles.positions, batches);
    bound.capsules = batches.capsules;
  }

  for (int iter = 0; iter < config.iterations_per_substep; ++iter) {
    run_pass(batches.deviatoric, ConstraintType::deviatoric,
             ctx.coloring ? &ctx.coloring->deviatoric : nullptr, particles, bound, dt);
    run_pass(batches.hydrostatic, ConstraintType::hydrostatic,
             ctx.coloring ? &ctx.coloring->hydrostatic : nullptr, particles, bound, dt);
    run_pass(batches.attachments, ConstraintType::attachment, nullptr, particles, bound, dt);
    run_pass(batches.collisions, ConstraintType::collision, nullptr, particles, bound, dt);
  }

  const double damping_over_dt = config.velocity_damping / dt;
  for (std::size_t i = 0; i < particles.size(); ++i)
    particles.velocities[i] =
        damping_over_dt * (particles.positions[i] - particles.prev_positions[i]);
}

std::vector<ForceSample> constraint_forces(std::span<const Constraint> pass,
                                           const ParticleSystem& particles,
                                           const SubstepContext& ctx, double dt) {
  std::vector<ForceSample> out;
  out.reserve(pass.size());
  const double inv_dt2 = 1.0 / (dt * dt);
  for (const Constraint& c : pass) {
    ForceSample s;
    const ConstraintEval eval = evaluate_constraint(c, particles.positions, ctx);
    s.n = eval.skip ? 0 : eval.n;
    s.particles = c.particles;
    for (int i = 0; i < s.n; ++i) s.force[i] = c.lambda * eval.grad[i] * inv_dt2;
    out.push_back(s);
  }
  return out;
}

}  // namespace lapsim
