#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "lapsim/instruments.hpp"
#include "lapsim/meshgen.hpp"
#include "lapsim/neohookean.hpp"
#include "lapsim/structtext.hpp"
#include "lapsim/xpbd.hpp"

using namespace lapsim;

namespace {

Instrument probe_tool(double radius = 0.5) {
  Instrument inst;
  inst.name = "probe";
  inst.kind = InstrumentKind::hook;
  inst.capsules = {Capsule{Vec3(0, 0, 0), Vec3(0, 0, 1), radius}};
  inst.instrument_label = kInstrumentLabelBase;
  return inst;
}

Pose identity_pose() { return Pose{}; }

}  // namespace

TEST(CapsuleSdf, PointBesideAxis) {
  // Unit-ish capsule, point 2 m off the axis: distance 2 - 0.5.
  Instrument inst = probe_tool(0.5);
  EXPECT_NEAR(capsule_sdf(inst, identity_pose(), Vec3(2, 0, 0.5)), 1.5, 1e-12);
}

TEST(CapsuleSdf, OnAxisIsMinusRadius) {
  Instrument inst = probe_tool(0.5);
  EXPECT_NEAR(capsule_sdf(inst, identity_pose(), Vec3(0, 0, 0.3)), -0.5, 1e-12);
}

TEST(CapsuleSdf, BeyondEndMeasuresToEndpoint) {
  Instrument inst = probe_tool(0.25);
  Vec3 p(0, 3, 5);
  double d = (p - Vec3(0, 0, 1)).norm();
  EXPECT_NEAR(capsule_sdf(inst, identity_pose(), p), d - 0.25, 1e-12);
}

TEST(CapsuleSdf, MinOverCapsules) {
  Instrument inst = probe_tool(0.1);
  inst.capsules.push_back(Capsule{Vec3(5, 0, 0), Vec3(6, 0, 0), 1.0});
  // Near the second capsule the first is irrelevant.
  EXPECT_NEAR(capsule_sdf(inst, identity_pose(), Vec3(5.5, 0, 0.2)), -0.8, 1e-12);
}

TEST(CapsuleSdf, LipschitzBound) {
  Instrument inst = probe_tool(0.3);
  inst.capsules.push_back(Capsule{Vec3(0.2, -0.1, 0.4), Vec3(-0.3, 0.5, 1.2), 0.15});
  Pose pose;
  pose.translation = Vec3(0.1, 0.2, -0.3);
  pose.rotation = Quat(Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> span(-2.0, 2.0);
  for (int trial = 0; trial < 2000; ++trial) {
    Vec3 a(span(rng), span(rng), span(rng));
    Vec3 b(span(rng), span(rng), span(rng));
    double da = capsule_sdf(inst, pose, a);
    double db = capsule_sdf(inst, pose, b);
    EXPECT_LE(std::abs(da - db), (a - b).norm() + 1e-9);
  }
}

TEST(CapsuleSdf, GradientIsUnitAndOutward) {
  Capsule c{Vec3(0, 0, 0), Vec3(0, 0, 1), 0.2};
  Vec3 p(0.5, 0.4, 0.3);
  Vec3 g = capsule_sdf_gradient(c, p);
  EXPECT_NEAR(g.norm(), 1.0, 1e-12);
  double step = 1e-7;
  double forward = capsule_sdf(c, p + step * g);
  EXPECT_GT(forward, capsule_sdf(c, p));
  // Exactly on the axis: still unit, still perpendicular to the axis.
  Vec3 g0 = capsule_sdf_gradient(c, Vec3(0, 0, 0.5));
  EXPECT_NEAR(g0.norm(), 1.0, 1e-12);
  EXPECT_NEAR(g0.dot(Vec3(0, 0, 1)), 0.0, 1e-12);
}

TEST(PoseInterp, SlerpMidpointHalvesAngle) {
  ToolTimeline tl;
  Pose p0, p1;
  p1.rotation = Quat(Eigen::AngleAxisd(M_PI / 2.0, Vec3::UnitZ()));
  p1.translation = Vec3(2, 0, 0);
  tl.keyframes = {{0.0, p0}, {1.0, p1}};
  Pose mid = pose_at(tl, 0.5);
  Eigen::AngleAxisd aa(mid.rotation);
  EXPECT_NEAR(aa.angle(), M_PI / 4.0, 1e-9);
  EXPECT_NEAR(std::abs(aa.axis().dot(Vec3::UnitZ())), 1.0, 1e-9);
  EXPECT_NEAR(mid.translation.x(), 1.0, 1e-12);
}

TEST(PoseInterp, ClampsOutsideKeyframeRange) {
  ToolTimeline tl;
  Pose p0, p1;
  p0.translation = Vec3(1, 2, 3);
  p1.translation = Vec3(4, 5, 6);
  tl.keyframes = {{1.0, p0}, {2.0, p1}};
  EXPECT_EQ(pose_at(tl, -5.0).translation, p0.translation);
  EXPECT_EQ(pose_at(tl, 99.0).translation, p1.translation);
}

TEST(PoseInterp, ContinuousAtKeyframes) {
  ToolTimeline tl;
  Pose p0, p1, p2;
  p1.translation = Vec3(1, 0, 0);
  p1.rotation = Quat(Eigen::AngleAxisd(0.4, Vec3::UnitY()));
  p2.translation = Vec3(1, 3, 0);
  p2.rotation = Quat(Eigen::AngleAxisd(-0.9, Vec3::UnitX()));
  tl.keyframes = {{0.0, p0}, {1.0, p1}, {2.0, p2}};
  for (double t : {0.0, 1.0, 2.0}) {
    Pose before = pose_at(tl, t - 1e-10);
    Pose after = pose_at(tl, t + 1e-10);
    EXPECT_LT((before.translation - after.translation).norm(), 1e-8);
    EXPECT_LT(before.rotation.angularDistance(after.rotation), 1e-8);
  }
}

TEST(Timeline, RejectsNonIncreasingKeyframes) {
  ToolTimeline tl;
  tl.keyframes = {{0.0, Pose{}}, {0.0, Pose{}}};
  EXPECT_THROW(tl.validate(1.0), ConfigError);
  tl.keyframes = {{0.5, Pose{}}, {0.2, Pose{}}};
  EXPECT_THROW(tl.validate(1.0), ConfigError);
}

TEST(Timeline, RejectsEventOutsideDuration) {
  ToolTimeline tl;
  tl.keyframes = {{0.0, Pose{}}};
  tl.events = {{1.5, ToolAction::jaw_close}};
  EXPECT_THROW(tl.validate(1.0), ConfigError);
  tl.events = {{0.5, ToolAction::jaw_close}};
  EXPECT_NO_THROW(tl.validate(1.0));
}

TEST(Timeline, EventsInWindowAreHalfOpenAndTimeOrdered) {
  ToolTimeline tl;
  tl.keyframes = {{0.0, Pose{}}};
  tl.events = {{0.30, ToolAction::jaw_open}, {0.10, ToolAction::jaw_close}, {0.20, ToolAction::cautery_on}};
  auto hits = tl.events_in(0.10, 0.30);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0], ToolAction::jaw_close);
  EXPECT_EQ(hits[1], ToolAction::cautery_on);
}

TEST(Timeline, RejectsNonUnitQuaternion) {
  ToolTimeline tl;
  Pose bad;
  bad.rotation = Quat(2.0, 0.0, 0.0, 0.0);  // not normalized
  tl.keyframes = {{0.0, bad}};
  EXPECT_THROW(tl.validate(1.0), ConfigError);
}

TEST(Collision, EmitsOnlyWithinMargin) {
  Instrument inst = probe_tool(0.1);
  std::vector<Vec3> pts = {Vec3(0.05, 0, 0.5),   // inside the capsule
                           Vec3(0.1005, 0, 0.5), // within 1 mm margin
                           Vec3(0.3, 0, 0.5)};   // far
  ConstraintBatches batch;
  int n = generate_collision_constraints(inst, identity_pose(), pts, 1e-3, batch);
  EXPECT_EQ(n, 2);
  ASSERT_EQ(batch.collisions.size(), 2u);
  EXPECT_EQ(batch.collisions[0].particles[0], 0);
  EXPECT_EQ(batch.collisions[1].particles[0], 1);
  EXPECT_TRUE(batch.collisions[0].is_inequality);
  EXPECT_EQ(batch.collisions[0].compliance, 0.0);
  ASSERT_EQ(batch.capsules.size(), 1u);
}

TEST(Collision, EmptyWhenNothingClose) {
  Instrument inst = probe_tool(0.1);
  std::vector<Vec3> pts = {Vec3(5, 5, 5), Vec3(-3, 0, 0)};
  ConstraintBatches batch;
  EXPECT_EQ(generate_collision_constraints(inst, identity_pose(), pts, 1e-3, batch), 0);
  EXPECT_TRUE(batch.collisions.empty());
  EXPECT_TRUE(batch.capsules.empty());
}

TEST(Collision, ConstraintEvalMatchesSdf) {
  Instrument inst = probe_tool(0.1);
  std::vector<Vec3> pts = {Vec3(0.05, 0, 0.5)};
  ConstraintBatches batch;
  generate_collision_constraints(inst, identity_pose(), pts, 1e-3, batch);
  SubstepContext ctx;
  ctx.capsules = batch.capsules;
  auto eval = evaluate_constraint(batch.collisions[0], pts, ctx);
  EXPECT_NEAR(eval.C, (0.05 - 0.1) - 1e-3, 1e-12);
  EXPECT_EQ(eval.n, 1);
  EXPECT_NEAR(eval.grad[0].dot(Vec3::UnitX()), 1.0, 1e-12);
}

TEST(Collision, SubstepPushesPenetratingParticlesOut) {
  // Soft box resting; a capsule poked through its middle. After projection
  // no free particle may stay inside margin.
  TetMesh mesh = make_box_mesh(Vec3(-0.05, -0.05, -0.05), Vec3(0.05, 0.05, 0.05), 3, 3, 3,
                               static_cast<uint16_t>(ObjectLabel::liver));
  compute_rest_state(mesh);
  MaterialParams mat;
  std::vector<double> density(mesh.tet_count(), mat.density);
  ParticleSystem particles = make_particles(mesh, density);

  ConstraintBatches batches;
  build_constraints(mesh, [&](uint16_t) -> const MaterialParams& { return mat; }, batches);

  // Probe skewered through the box along +y; fat enough to overlap the
  // interior vertex ring at radius ~0.024.
  Instrument inst = probe_tool(0.03);
  Pose pose;
  pose.rotation = Quat(Eigen::AngleAxisd(-M_PI / 2.0, Vec3::UnitX()));
  pose.translation = Vec3(0.0, -0.1, 0.0);

  SolverConfig config;
  config.gravity = Vec3::Zero();
  config.dt_substep = 1e-3;
  SubstepContext ctx;
  ctx.mesh = &mesh;

  const std::vector<Vec3> rest = particles.positions;
  const double margin = 1e-3;
  int contacts_seen = 0;
  ctx.collision_update = [&](std::span<const Vec3> predicted, ConstraintBatches& b) {
    contacts_seen += generate_collision_constraints(inst, pose, predicted, margin, b, 5e-3);
  };
  for (int step = 0; step < 40; ++step) substep(particles, batches, config, ctx);
  EXPECT_GT(contacts_seen, 0);
  double moved = 0.0;
  double worst = 0.0;
  auto world = world_capsules(inst, pose);
  for (size_t i = 0; i < particles.size(); ++i) {
    if (particles.inv_mass[i] == 0.0) continue;
    moved = std::max(moved, (particles.positions[i] - rest[i]).norm());
    double sdf = capsule_sdf(world[0], particles.positions[i]);
    worst = std::min(worst, sdf - margin);
  }
  EXPECT_GT(moved, 1e-4) << "contact should have displaced boundary particles";
  EXPECT_GE(worst, -1e-6);
}

TEST(Collision, PinnedParticleGetsConstraintButDoesNotMove) {
  Instrument inst = probe_tool(0.1);
  std::vector<Vec3> pts = {Vec3(0.0, 0, 0.5)};  // dead center
  ConstraintBatches batches;
  generate_collision_constraints(inst, identity_pose(), pts, 1e-3, batches);
  ASSERT_EQ(batches.collisions.size(), 1u);

  ParticleSystem particles;
  particles.add(pts[0], 1.0);
  particles.pin(0);
  SolverConfig config;
  config.gravity = Vec3::Zero();
  SubstepContext ctx;
  substep(particles, batches, config, ctx);
  EXPECT_EQ(particles.positions[0], Vec3(0.0, 0, 0.5));
}

TEST(Library, ParsesInstruments) {
  auto dir = std::filesystem::temp_directory_path() / "lapsim_ilib_test";
  std::filesystem::create_directories(dir);
  auto path = dir / "tools.ilib";
  {
    std::ofstream out(path);
    out << "# minimal library\n"
        << "[instrument grasper_a]\n"
        << "kind = grasper\n"
        << "label = 16\n"
        << "tip_offset = 0 0 0.02\n"
        << "capsule = 0 0 -0.2  0 0 0.018  0.003\n"
        << "capsule = 0 0 0.018  0 0.004 0.024  0.002\n"
        << "[instrument shears]\n"
        << "kind = scissors\n"
        << "label = 19\n"
        << "blade_capsule = 1\n"
        << "capsule = 0 0 -0.2  0 0 0.01  0.003\n"
        << "capsule = 0 0 0.01  0 0 0.03  0.0015\n";
  }
  auto lib = load_instrument_library(path);
  ASSERT_EQ(lib.size(), 2u);
  EXPECT_EQ(lib.at("grasper_a").kind, InstrumentKind::grasper);
  EXPECT_EQ(lib.at("grasper_a").capsules.size(), 2u);
  EXPECT_EQ(lib.at("grasper_a").instrument_label, 16);
  EXPECT_EQ(lib.at("shears").blade_capsule, 1);
  EXPECT_NEAR(lib.at("grasper_a").tip_offset.z(), 0.02, 1e-15);
  std::filesystem::remove_all(dir);
}

TEST(Library, RejectsUnknownKeyByName) {
  auto dir = std::filesystem::temp_directory_path() / "lapsim_ilib_bad";
  std::filesystem::create_directories(dir);
  auto path = dir / "bad.ilib";
  {
    std::ofstream out(path);
    out << "[instrument t]\nkind = hook\nlabel = 17\nradius = 5\ncapsule = 0 0 0 0 0 1 0.1\n";
  }
  try {
    load_instrument_library(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("radius"), std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST(Library, RejectsTissueLabelRange) {
  auto dir = std::filesystem::temp_directory_path() / "lapsim_ilib_lbl";
  std::filesystem::create_directories(dir);
  auto path = dir / "bad.ilib";
  {
    std::ofstream out(path);
    out << "[instrument t]\nkind = hook\nlabel = 3\ncapsule = 0 0 0 0 0 1 0.1\n";
  }
  EXPECT_THROW(load_instrument_library(path), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(StructText, ParsesSectionsCommentsRepeats) {
  auto f = parse_structured_text_string(
      "# header comment\n"
      "[solver]\n"
      "dt = 0.001  # trailing\n"
      "gravity = 0 0 -9.81\n"
      "[instrument g1]\n"
      "keyframe = 0 0 0 0 1 0 0 0\n"
      "keyframe = 1 1 0 0 1 0 0 0\n",
      "inline");
  ASSERT_EQ(f.sections.size(), 2u);
  EXPECT_EQ(f.sections[0].kind, "solver");
  EXPECT_EQ(f.sections[1].name, "g1");
  EXPECT_EQ(f.sections[0].find("dt")->value, "0.001");
  int kf = 0;
  for (const auto& e : f.sections[1].entries)
    if (e.key == "keyframe") ++kf;
  EXPECT_EQ(kf, 2);
  Vec3 g = entry_vec3(f, *f.sections[0].find("gravity"));
  EXPECT_EQ(g, Vec3(0, 0, -9.81));
}

TEST(StructText, ErrorsCarryFileAndLine) {
  try {
    parse_structured_text_string("[a]\nkey value\n", "cfg.scn");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.scn:2"), std::string::npos);
  }
  EXPECT_THROW(parse_structured_text_string("orphan = 1\n", "x"), ConfigError);
  EXPECT_THROW(parse_structured_text_string("[a b c]\n", "x"), ConfigError);
  EXPECT_THROW(parse_structured_text("/nonexistent/path.scn"), IoError);
}

TEST(StructText, NumericValidation) {
  auto f = parse_structured_text_string("[s]\nx = 1.5\nn = nope\nb = true\n", "v");
  EXPECT_EQ(entry_double(f, *f.sections[0].find("x")), 1.5);
  EXPECT_THROW(entry_int(f, *f.sections[0].find("n")), ConfigError);
  EXPECT_THROW(entry_double(f, *f.sections[0].find("n")), ConfigError);
  EXPECT_TRUE(entry_bool(f, *f.sections[0].find("b")));
}
