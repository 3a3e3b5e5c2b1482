#include "lapsim/xpbd.hpp"

#include <gtest/gtest.h>

#include <random>

#include "lapsim/meshgen.hpp"
#include "lapsim/neohookean.hpp"

using namespace lapsim;

namespace {

ParticleSystem single_particle(const Vec3& pos, double mass = 1.0) {
  ParticleSystem ps;
  ps.add(pos, mass);
  return ps;
}

SolverConfig config_for_tests() {
  SolverConfig cfg;
  cfg.dt_substep = 1e-3;
  cfg.velocity_damping = 1.0;
  cfg.gravity = Vec3::Zero();
  return cfg;
}

const MaterialParams& default_material() {
  static MaterialParams p;
  return p;
}

struct MeshSystem {
  TetMesh mesh;
  ParticleSystem particles;
  ConstraintBatches batches;
  SubstepContext ctx;
};

MeshSystem make_elastic_box(int cells, double size) {
  MeshSystem s;
  s.mesh = make_box_mesh(Vec3(0, 0, 0), Vec3(size, size, size), cells, cells, cells, 1);
  compute_rest_state(s.mesh);
  std::vector<double> density(s.mesh.tet_count(), 1000.0);
  s.particles = make_particles(s.mesh, density);
  build_constraints(s.mesh, [](uint16_t) -> const MaterialParams& { return default_material(); },
                    s.batches);
  s.ctx.mesh = &s.mesh;
  return s;
}

double kinetic_energy(const ParticleSystem& ps) {
  double e = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.inv_mass[i] > 0.0) e += 0.5 / ps.inv_mass[i] * ps.velocities[i].squaredNorm();
  return e;
}

}  // namespace

TEST(Config, ValidationCatchesBadFields) {
  SolverConfig ok;
  EXPECT_NO_THROW(ok.validate());
  SolverConfig bad = ok;
  bad.dt_substep = 0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.dt_substep = 1e-6;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.substeps_per_frame = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.iterations_per_substep = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.velocity_damping = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.velocity_damping = 1.5;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Predict, GravityOnly) {
  ParticleSystem ps = single_particle(Vec3::Zero());
  SolverConfig cfg;
  cfg.dt_substep = 1e-2;  // validated range cap
  cfg.gravity = Vec3(0, 0, -10);
  predict(ps, cfg);
  // x = dt^2 * g
  EXPECT_TRUE(ps.positions[0].isApprox(Vec3(0, 0, -0.001), 1e-15));
  EXPECT_EQ(ps.prev_positions[0], Vec3::Zero());
}

TEST(Predict, SpecExampleLargeStep) {
  // dt = 0.1 is outside the validated solver range but predict itself is
  // pure arithmetic: x = 0, v = 0, g = (0,0,-10) -> (0,0,-0.1).
  ParticleSystem ps = single_particle(Vec3::Zero());
  SolverConfig cfg;
  cfg.dt_substep = 0.1;
  cfg.gravity = Vec3(0, 0, -10);
  predict(ps, cfg);
  EXPECT_NEAR(ps.positions[0].z(), -0.1, 1e-15);
}

TEST(Predict, PinnedDoesNotMove) {
  ParticleSystem ps = single_particle(Vec3(1, 2, 3), 0.0);  // inv_mass = 0
  ps.velocities[0] = Vec3(5, 5, 5);
  SolverConfig cfg;
  cfg.gravity = Vec3(0, 0, -10);
  predict(ps, cfg);
  EXPECT_EQ(ps.positions[0], Vec3(1, 2, 3));
}

TEST(Predict, VelocityOnly) {
  ParticleSystem ps = single_particle(Vec3::Zero());
  ps.velocities[0] = Vec3(1, 0, 0);
  SolverConfig cfg;
  cfg.dt_substep = 0.5e-2;
  cfg.gravity = Vec3::Zero();
  predict(ps, cfg);
  EXPECT_TRUE(ps.positions[0].isApprox(Vec3(0.5e-2, 0, 0), 1e-15));
}

TEST(Project, RigidConstraintSnaps) {
  // C = x with x = 1, grad = (1,0,0), alpha = 0: dlambda = -1, x -> 0.
  std::vector<Vec3> pos = {Vec3(1, 0, 0)};
  std::vector<double> w = {1.0};
  ConstraintEval eval;
  eval.C = 1.0;
  eval.n = 1;
  eval.grad[0] = Vec3(1, 0, 0);
  const int idx[] = {0};
  double lambda = 0.0;
  const double dl = project_constraint(eval, idx, 0.0, 0.1, lambda, pos, w, false);
  EXPECT_DOUBLE_EQ(dl, -1.0);
  EXPECT_DOUBLE_EQ(lambda, -1.0);
  EXPECT_NEAR(pos[0].x(), 0.0, 1e-15);
}

TEST(Project, UnitComplianceHalves) {
  // alpha_tilde = 1 (compliance = dt^2): dlambda = -0.5, x -> 0.5.
  const double dt = 0.1;
  std::vector<Vec3> pos = {Vec3(1, 0, 0)};
  std::vector<double> w = {1.0};
  ConstraintEval eval;
  eval.C = 1.0;
  eval.n = 1;
  eval.grad[0] = Vec3(1, 0, 0);
  const int idx[] = {0};
  double lambda = 0.0;
  const double dl = project_constraint(eval, idx, dt * dt, dt, lambda, pos, w, false);
  EXPECT_DOUBLE_EQ(dl, -0.5);
  EXPECT_NEAR(pos[0].x(), 0.5, 1e-15);
}

TEST(Project, InactiveInequalitySkips) {
  std::vector<Vec3> pos = {Vec3(1, 0, 0)};
  std::vector<double> w = {1.0};
  ConstraintEval eval;
  eval.C = 0.3;
  eval.n = 1;
  eval.grad[0] = Vec3(1, 0, 0);
  const int idx[] = {0};
  double lambda = 0.0;
  EXPECT_EQ(project_constraint(eval, idx, 0.0, 0.1, lambda, pos, w, true), 0.0);
  EXPECT_EQ(lambda, 0.0);
  EXPECT_EQ(pos[0], Vec3(1, 0, 0));
}

TEST(Project, ZeroDenominatorSkips) {
  std::vector<Vec3> pos = {Vec3(1, 0, 0)};
  std::vector<double> w = {0.0};  // pinned, alpha = 0 -> denominator 0
  ConstraintEval eval;
  eval.C = 1.0;
  eval.n = 1;
  eval.grad[0] = Vec3(1, 0, 0);
  const int idx[] = {0};
  double lambda = 0.0;
  EXPECT_EQ(project_constraint(eval, idx, 0.0, 0.1, lambda, pos, w, false), 0.0);
  EXPECT_EQ(pos[0], Vec3(1, 0, 0));
}

TEST(Substep, FreeFallClosedForm) {
  // 10 substeps, dt = 0.01, g = -10 z: z_n = -g_mag * dt^2 * n(n+1)/2 = -0.055.
  ParticleSystem ps = single_particle(Vec3::Zero());
  ConstraintBatches batches;
  SolverConfig cfg;
  cfg.dt_substep = 0.01;
  cfg.gravity = Vec3(0, 0, -10);
  cfg.velocity_damping = 1.0;
  SubstepContext ctx;
  for (int n = 0; n < 10; ++n) substep(ps, batches, cfg, ctx);
  EXPECT_NEAR(ps.positions[0].z(), -0.055, 1e-12);
}

TEST(Substep, RigidAttachmentHolds) {
  ParticleSystem ps = single_particle(Vec3::Zero());
  ConstraintBatches batches;
  batches.attachments.push_back(make_attachment(0, Vec3::Zero()));
  SolverConfig cfg = config_for_tests();
  cfg.gravity = Vec3(3, -7, -10);  // arbitrary direction
  SubstepContext ctx;
  for (int n = 0; n < 100; ++n) {
    substep(ps, batches, cfg, ctx);
    EXPECT_LT(ps.positions[0].norm(), 1e-9);
  }
}

TEST(Substep, UniformMotionPreserved) {
  ParticleSystem ps = single_particle(Vec3::Zero());
  ps.velocities[0] = Vec3(1, 0, 0);
  ConstraintBatches batches;
  SolverConfig cfg = config_for_tests();
  SubstepContext ctx;
  for (int n = 0; n < 100; ++n) substep(ps, batches, cfg, ctx);
  EXPECT_NEAR(ps.velocities[0].x(), 1.0, 1e-12);
  EXPECT_NEAR(ps.positions[0].x(), 0.1, 1e-12);
}

TEST(Substep, VelocityMatchesPositionDelta) {
  MeshSystem s = make_elastic_box(2, 0.1);
  SolverConfig cfg;
  cfg.gravity = Vec3(0, 0, -9.81);
  cfg.velocity_damping = 0.999;
  for (int i = 0; i < 4; ++i) s.particles.pin(i);
  for (int n = 0; n < 10; ++n) {
    substep(s.particles, s.batches, cfg, s.ctx);
    for (std::size_t i = 0; i < s.particles.size(); ++i) {
      const Vec3 expect = cfg.velocity_damping / cfg.dt_substep *
                          (s.particles.positions[i] - s.particles.prev_positions[i]);
      EXPECT_LT((s.particles.velocities[i] - expect).norm(), 1e-15);
    }
  }
}

TEST(Substep, NanAbortsNamingConstraint) {
  MeshSystem s = make_elastic_box(1, 0.1);
  SolverConfig cfg = config_for_tests();
  s.particles.velocities[0] = Vec3(std::nan(""), 0, 0);
  try {
    substep(s.particles, s.batches, cfg, s.ctx);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_NE(std::string(e.what()).find("predict"), std::string::npos) << e.what();
  }
}

TEST(Substep, MomentumConservedByInternalConstraints) {
  MeshSystem s = make_elastic_box(2, 0.1);
  SolverConfig cfg = config_for_tests();  // g = 0, damping = 1
  // Uniform drift plus a squeeze so the elastic constraints actually work.
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    s.particles.velocities[i] = Vec3(0.1, -0.05, 0.02);
    s.particles.positions[i].z() *= 0.95;
  }
  Vec3 p0 = Vec3::Zero();
  double mass_total = 0.0;
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    p0 += s.particles.velocities[i] / s.particles.inv_mass[i];
    mass_total += 1.0 / s.particles.inv_mass[i];
  }
  for (int n = 0; n < 1000; ++n) substep(s.particles, s.batches, cfg, s.ctx);
  Vec3 p1 = Vec3::Zero();
  for (std::size_t i = 0; i < s.particles.size(); ++i)
    p1 += s.particles.velocities[i] / s.particles.inv_mass[i];
  EXPECT_LT((p1 - p0).norm() / p0.norm(), 1e-8);
}

TEST(Substep, AttachmentBalanceIsStationary) {
  // Every vertex held by a rigid attachment at its rest position: gravity is
  // exactly balanced, so positions are fixed points of the substep map.
  MeshSystem s = make_elastic_box(2, 0.1);
  for (std::size_t i = 0; i < s.particles.size(); ++i)
    s.batches.attachments.push_back(make_attachment(static_cast<int>(i), s.particles.positions[i]));
  SolverConfig cfg;
  cfg.gravity = Vec3(0, 0, -9.81);
  for (int n = 0; n < 100; ++n) substep(s.particles, s.batches, cfg, s.ctx);
  std::vector<Vec3> before = s.particles.positions;
  substep(s.particles, s.batches, cfg, s.ctx);
  double max_disp = 0.0;
  for (std::size_t i = 0; i < s.particles.size(); ++i)
    max_disp = std::max(max_disp, (s.particles.positions[i] - before[i]).norm());
  EXPECT_LT(max_disp, 1e-6);
}

TEST(Substep, HugeComplianceFreezesCorrection) {
  ParticleSystem ps = single_particle(Vec3(1, 0, 0));
  ConstraintBatches batches;
  batches.attachments.push_back(make_attachment(0, Vec3::Zero(), 1e9));
  SolverConfig cfg = config_for_tests();
  SubstepContext ctx;
  const Vec3 before = ps.positions[0];
  substep(ps, batches, cfg, ctx);
  EXPECT_LT((ps.positions[0] - before).norm(), 1e-9);
}

TEST(Substep, KineticEnergyNonIncreasingWhenDamped) {
  ParticleSystem ps;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 20; ++i) {
    ps.add(Vec3(u(rng), u(rng), u(rng)), 1.0 + 0.5 * u(rng));
    ps.velocities.back() = Vec3(u(rng), u(rng), u(rng));
  }
  ConstraintBatches batches;
  SolverConfig cfg = config_for_tests();
  cfg.velocity_damping = 0.99;
  SubstepContext ctx;
  double prev = kinetic_energy(ps);
  for (int n = 0; n < 200; ++n) {
    substep(ps, batches, cfg, ctx);
    const double now = kinetic_energy(ps);
    EXPECT_LE(now, prev + 1e-15);
    prev = now;
  }
}

TEST(Substep, DeterministicSequentialRerun) {
  auto run = [] {
    MeshSystem s = make_elastic_box(2, 0.1);
    SolverConfig cfg;
    cfg.gravity = Vec3(0, 0, -9.81);
    for (int i = 0; i < 9; ++i) s.particles.pin(i);
    for (int n = 0; n < 50; ++n) substep(s.particles, s.batches, cfg, s.ctx);
    return s.particles.positions;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].x(), b[i].x());
    EXPECT_EQ(a[i].y(), b[i].y());
    EXPECT_EQ(a[i].z(), b[i].z());
  }
}

TEST(Substep, ParallelMatchesAcrossThreadCounts) {
  // Fixed coloring: results must be bit-identical for any worker count.
  auto run = [](int threads) {
    MeshSystem s = make_elastic_box(2, 0.1);
    SolverConfig cfg;
    cfg.gravity = Vec3(0, 0, -9.81);
    for (int i = 0; i < 9; ++i) s.particles.pin(i);
    const Coloring coloring = color_constraints(s.batches, s.particles.size());
    ThreadPool pool(threads);
    s.ctx.pool = &pool;
    s.ctx.coloring = &coloring;
    for (int n = 0; n < 25; ++n) substep(s.particles, s.batches, cfg, s.ctx);
    return s.particles.positions;
  };
  const auto two = run(2);
  const auto four = run(4);
  ASSERT_EQ(two.size(), four.size());
  for (std::size_t i = 0; i < two.size(); ++i) EXPECT_EQ(two[i], four[i]);
}

TEST(Coloring, NoColorSharesParticles) {
  MeshSystem s = make_elastic_box(3, 0.1);
  const PassColoring pc = color_pass(s.batches.deviatoric, s.particles.size());
  ASSERT_EQ(pc.order.size(), s.batches.deviatoric.size());
  for (const auto& [begin, end] : pc.color_ranges) {
    std::vector<uint8_t> seen(s.particles.size(), 0);
    for (std::size_t k = begin; k < end; ++k)
      for (int p : s.batches.deviatoric[pc.order[k]].particles) {
        ASSERT_GE(p, 0);
        EXPECT_EQ(seen[p], 0) << "particle " << p << " shared within a color";
        seen[p] = 1;
      }
  }
}

TEST(Forces, DirectIdentity) {
  // lambda = -1, grad = (1,0,0), dt = 0.1 -> force (-100, 0, 0).
  ParticleSystem ps = single_particle(Vec3(2, 0, 0));
  Constraint c = make_attachment(0, Vec3(1, 0, 0));
  c.lambda = -1.0;
  std::vector<Constraint> pass = {c};
  SubstepContext ctx;
  const auto forces = constraint_forces(pass, ps, ctx, 0.1);
  ASSERT_EQ(forces.size(), 1u);
  ASSERT_EQ(forces[0].n, 1);
  EXPECT_TRUE(forces[0].force[0].isApprox(Vec3(-100, 0, 0), 1e-12));
}

TEST(Forces, ZeroLambdaZeroForce) {
  ParticleSystem ps = single_particle(Vec3(2, 0, 0));
  std::vector<Constraint> pass = {make_attachment(0, Vec3(1, 0, 0))};
  SubstepContext ctx;
  const auto forces = constraint_forces(pass, ps, ctx, 0.1);
  ASSERT_EQ(forces.size(), 1u);
  EXPECT_EQ(forces[0].force[0], Vec3::Zero());
}

TEST(Forces, StaticEquilibriumRecoversGravityLoad) {
  // Unit mass pinned by a rigid attachment under g = -10 z: the recovered
  // constraint force must balance gravity, +10 N in z, within 5%.
  ParticleSystem ps = single_particle(Vec3::Zero());
  ConstraintBatches batches;
  batches.attachments.push_back(make_attachment(0, Vec3::Zero()));
  SolverConfig cfg = config_for_tests();
  cfg.gravity = Vec3(0, 0, -10);
  SubstepContext ctx;
  for (int n = 0; n < 50; ++n) substep(ps, batches, cfg, ctx);
  const auto forces = constraint_forces(batches.attachments, ps, ctx, cfg.dt_substep);
  ASSERT_EQ(forces.size(), 1u);
  ASSERT_EQ(forces[0].n, 1);
  const Vec3 f = forces[0].force[0];
  EXPECT_NEAR(f.z(), 10.0, 0.5);
  EXPECT_LT(std::abs(f.x()), 1e-9);
  EXPECT_LT(std::abs(f.y()), 1e-9);
}

TEST(Particles, MassLumping) {
  TetMesh m = make_box_mesh(Vec3(0, 0, 0), Vec3(1, 1, 1), 1, 1, 1, 1);
  compute_rest_state(m);
  std::vector<double> density(m.tet_count(), 1000.0);
  const ParticleSystem ps = make_particles(m, density);
  double total = 0.0;
  for (double w : ps.inv_mass) total += 1.0 / w;
  EXPECT_NEAR(total, 1000.0, 1e-9);  // density * unit volume
}
