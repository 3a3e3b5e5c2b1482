#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "lapsim/meshgen.hpp"
#include "lapsim/scenario.hpp"

using namespace lapsim;

namespace {

/// Temp directory with a small box mesh and a two-tool library, torn down
/// with the fixture.
class ScenarioFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("lapsim_scn_" + std::string(::testing::UnitTest::GetInstance()
                                            ->current_test_info()
                                            ->name()));
    std::filesystem::create_directories(dir_);
    save_tet_mesh(make_box_mesh(Vec3(-0.02, -0.02, -0.02), Vec3(0.02, 0.02, 0.02), 2, 2, 2, 1),
                  dir_ / "box.tet");
    std::ofstream lib(dir_ / "tools.ilib");
    lib << "[instrument grasper_a]\n"
           "kind = grasper\n"
           "label = 16\n"
           "tip_offset = 0 0 0.02\n"
           "capsule = 0 0 -0.2  0 0 0.02  0.003\n"
           "[instrument shears]\n"
           "kind = scissors\n"
           "label = 19\n"
           "blade_capsule = 0\n"
           "capsule = 0 0 0  0 0 0.03  0.0015\n";
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::filesystem::path write(const std::string& text) {
    const auto path = dir_ / "case.scn";
    std::ofstream out(path);
    out << text;
    return path;
  }

  /// Header whose frame grid is consistent: 25 fps, 40 x 1ms substeps.
  static std::string header(double duration = 0.4) {
    return "[scenario]\nduration = " + std::to_string(duration) +
           "\nframe_rate = 25\n"
           "[solver]\ndt_substep = 0.001\nsubsteps_per_frame = 40\n";
  }

  std::filesystem::path dir_;
};

std::string error_of(const std::filesystem::path& path) {
  try {
    parse_scenario(path);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_F(ScenarioFile, MinimalScenarioParses) {
  const auto path = write(header() + "[anatomy liver]\nmesh = box.tet\n");
  const Scenario scn = parse_scenario(path);
  EXPECT_EQ(scn.frame_count, 10);
  EXPECT_DOUBLE_EQ(scn.duration, 0.4);
  EXPECT_EQ(scn.name, "case");
  ASSERT_EQ(scn.anatomy.size(), 1u);
  EXPECT_EQ(scn.anatomy[0].label, label_from_name("liver"));
  EXPECT_EQ(scn.output.channels.size(), all_channel_names().size());
  EXPECT_TRUE(scn.instruments.empty());
}

TEST_F(ScenarioFile, UnknownKeyIsNamedInTheError) {
  const auto path = write(
      "[scenario]\nduration = 0.4\nframe_rate = 25\n"
      "[solver]\ndt_substep = 0.001\nsubsteps_per_frame = 40\ngravty = 0 0 -9.81\n"
      "[anatomy liver]\nmesh = box.tet\n");
  const auto msg = error_of(path);
  EXPECT_NE(msg.find("gravty"), std::string::npos) << msg;
  EXPECT_NE(msg.find("solver"), std::string::npos) << msg;
}

TEST_F(ScenarioFile, MissingMeshNamesThePath) {
  const auto path = write(header() + "[anatomy liver]\nmesh = nope.tet\n");
  EXPECT_NE(error_of(path).find("nope.tet"), std::string::npos);
}

TEST_F(ScenarioFile, NonIntegerFrameCountRejected) {
  const auto path = write(header(0.41) + "[anatomy liver]\nmesh = box.tet\n");
  EXPECT_NE(error_of(path).find("whole number"), std::string::npos);
}

TEST_F(ScenarioFile, SubstepGridMustTileTheFrame) {
  const auto path = write(
      "[scenario]\nduration = 0.4\nframe_rate = 25\n"
      "[solver]\ndt_substep = 0.001\nsubsteps_per_frame = 33\n"
      "[anatomy liver]\nmesh = box.tet\n");
  EXPECT_NE(error_of(path).find("frame period"), std::string::npos);
}

TEST_F(ScenarioFile, UnknownTissueLabelRejected) {
  const auto path = write(header() + "[anatomy spleen]\nmesh = box.tet\n");
  EXPECT_NE(error_of(path).find("spleen"), std::string::npos);
}

TEST_F(ScenarioFile, DuplicateAnatomyLabelRejected) {
  const auto path = write(header() + "[anatomy liver]\nmesh = box.tet\n" +
                          "[anatomy liver]\nmesh = box.tet\n");
  EXPECT_NE(error_of(path).find("share the label"), std::string::npos);
}

TEST_F(ScenarioFile, EventMustMatchInstrumentKind) {
  const auto path = write(header() +
                          "[anatomy liver]\nmesh = box.tet\n"
                          "[instrument g]\nlibrary = tools.ilib\ntype = grasper_a\n"
                          "keyframe = 0  0 0 0.1  1 0 0 0\n"
                          "event = 0.2 cut_stroke\n");
  const auto msg = error_of(path);
  EXPECT_NE(msg.find("grasper"), std::string::npos) << msg;
  EXPECT_NE(msg.find("cut_stroke"), std::string::npos) << msg;
}

TEST_F(ScenarioFile, InstrumentTimelineParses) {
  const auto path = write(header() +
                          "[anatomy liver]\nmesh = box.tet\n"
                          "[instrument s]\nlibrary = tools.ilib\ntype = shears\n"
                          "keyframe = 0    0 0 0.10  1 0 0 0\n"
                          "keyframe = 0.4  0 0 0.02  1 0 0 0\n"
                          "event = 0.3 cut_stroke\n");
  const Scenario scn = parse_scenario(path);
  ASSERT_EQ(scn.instruments.size(), 1u);
  const auto& tool = scn.instruments[0];
  EXPECT_EQ(tool.id, "s");
  EXPECT_EQ(tool.instrument.kind, InstrumentKind::scissors);
  ASSERT_EQ(tool.timeline.keyframes.size(), 2u);
  ASSERT_EQ(tool.timeline.events.size(), 1u);
  const Pose mid = pose_at(tool.timeline, 0.2);
  EXPECT_NEAR(mid.translation.z(), 0.06, 1e-12);
}

TEST_F(ScenarioFile, UnknownChannelRejected) {
  const auto path =
      write(header() + "[anatomy liver]\nmesh = box.tet\n[output]\nchannels = rgb lidar\n");
  EXPECT_NE(error_of(path).find("lidar"), std::string::npos);
}

TEST_F(ScenarioFile, ChannelsNormalizeToCanonicalOrder) {
  const auto path =
      write(header() + "[anatomy liver]\nmesh = box.tet\n[output]\nchannels = flow rgb depth\n");
  const Scenario scn = parse_scenario(path);
  ASSERT_EQ(scn.output.channels.size(), 3u);
  EXPECT_EQ(scn.output.channels[0], "rgb");
  EXPECT_EQ(scn.output.channels[1], "depth");
  EXPECT_EQ(scn.output.channels[2], "flow");
}

TEST_F(ScenarioFile, YoungPoissonAndLamePairsAreExclusive) {
  const auto path = write(header() +
                          "[anatomy liver]\nmesh = box.tet\nyoung = 3e4\npoisson = 0.45\n"
                          "lame_mu = 1e4\n");
  EXPECT_NE(error_of(path).find("not both"), std::string::npos);
}

TEST_F(ScenarioFile, CameraKeyframesInterpolate) {
  const auto path = write(header() +
                          "[anatomy liver]\nmesh = box.tet\n"
                          "[camera]\nwidth = 64\nheight = 64\nfocal = 60\n"
                          "keyframe = 0    0 -0.4 0.2   0 0 0\n"
                          "keyframe = 0.4  0 -0.2 0.2   0 0 0.1\n");
  const Scenario scn = parse_scenario(path);
  const Camera mid = scn.camera.at(0.2);
  const Camera expect = make_lookat_camera(64, 64, 60.0, Vec3(0, -0.3, 0.2), Vec3(0, 0, 0.05),
                                           Vec3(0, 0, 1));
  EXPECT_LT((mid.pose.translation - expect.pose.translation).norm(), 1e-12);
  EXPECT_LT(mid.pose.rotation.angularDistance(expect.pose.rotation), 1e-12);
  // Clamped outside the keyframe span.
  EXPECT_LT((scn.camera.at(-1.0).pose.translation - scn.camera.at(0.0).pose.translation).norm(),
            1e-12);
}

TEST_F(ScenarioFile, CameraKeyframesMustIncrease) {
  const auto path = write(header() +
                          "[anatomy liver]\nmesh = box.tet\n"
                          "[camera]\nkeyframe = 0.2 0 -0.4 0.2 0 0 0\n"
                          "keyframe = 0.2 0 -0.3 0.2 0 0 0\n");
  EXPECT_NE(error_of(path).find("strictly increasing"), std::string::npos);
}

TEST_F(ScenarioFile, EventOutsideDurationRejected) {
  const auto path = write(header() +
                          "[anatomy liver]\nmesh = box.tet\n"
                          "[instrument g]\nlibrary = tools.ilib\ntype = grasper_a\n"
                          "keyframe = 0  0 0 0.1  1 0 0 0\n"
                          "event = 0.7 jaw_close\n");
  EXPECT_FALSE(error_of(path).empty());
}

TEST_F(ScenarioFile, MoreThanEightInstrumentsRejected) {
  std::string text = header() + "[anatomy liver]\nmesh = box.tet\n";
  for (int i = 0; i < 9; ++i)
    text += "[instrument g" + std::to_string(i) +
            "]\nlibrary = tools.ilib\ntype = grasper_a\nkeyframe = 0 0 0 0.1 1 0 0 0\n";
  EXPECT_NE(error_of(write(text)).find("at most 8"), std::string::npos);
}
