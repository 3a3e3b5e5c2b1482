#include "lapsim/image_io.hpp"

#include "lapsim/math.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace lapsim;

namespace {
std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}
}  // namespace

TEST(PngU8, RoundTripRgb) {
  ImageU8 img;
  img.width = 7;
  img.height = 5;
  img.channels = 3;
  img.data.resize(7 * 5 * 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<uint8_t>(i * 13);
  const auto path = temp_file("rt_rgb.png");
  write_png_u8(path, img);
  const ImageU8 back = read_png_u8(path);
  EXPECT_EQ(back.width, img.width);
  EXPECT_EQ(back.height, img.height);
  EXPECT_EQ(back.channels, img.channels);
  EXPECT_EQ(back.data, img.data);
  std::filesystem::remove(path);
}

TEST(PngU8, RoundTripGray) {
  ImageU8 img;
  img.width = 4;
  img.height = 4;
  img.channels = 1;
  img.data = {0, 16, 32, 48, 64, 80, 96, 112, 128, 144, 160, 176, 192, 208, 224, 255};
  const auto path = temp_file("rt_gray.png");
  write_png_u8(path, img);
  const ImageU8 back = read_png_u8(path);
  EXPECT_EQ(back.channels, 1);
  EXPECT_EQ(back.data, img.data);
  std::filesystem::remove(path);
}

TEST(PngU16, RoundTripDepthStyle) {
  ImageU16 img;
  img.width = 3;
  img.height = 2;
  img.data = {0, 1, 32768, 65535, 1234, 40000};
  const auto path = temp_file("rt_u16.png");
  write_png_u16(path, img);
  const ImageU16 back = read_png_u16(path);
  EXPECT_EQ(back.width, img.width);
  EXPECT_EQ(back.height, img.height);
  EXPECT_EQ(back.data, img.data);
  std::filesystem::remove(path);
}

TEST(RawF32, RoundTripWithNan) {
  ImageF32 img;
  img.width = 2;
  img.height = 2;
  img.channels = 2;
  img.data = {1.5f, -2.25f, std::numeric_limits<float>::quiet_NaN(), 0.0f,
              1e-20f, 3.4e38f, -1.0f, 42.0f};
  const auto path = temp_file("rt_f32.bin");
  write_raw_f32(path, img);
  const ImageF32 back = read_raw_f32(path);
  EXPECT_EQ(back.width, 2);
  EXPECT_EQ(back.height, 2);
  EXPECT_EQ(back.channels, 2);
  ASSERT_EQ(back.data.size(), img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    if (std::isnan(img.data[i]))
      EXPECT_TRUE(std::isnan(back.data[i]));
    else
      EXPECT_EQ(back.data[i], img.data[i]);
  }
  std::filesystem::remove(path);
}

TEST(RawF32, RejectsGarbageMagic) {
  const auto path = temp_file("bad_magic.bin");
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE1234";
  }
  EXPECT_THROW(read_raw_f32(path), IoError);
  std::filesystem::remove(path);
}

TEST(Png, MissingFileThrows) {
  EXPECT_THROW(read_png_u8("/nonexistent/a.png"), IoError);
  EXPECT_THROW(read_png_u16("/nonexistent/a.png"), IoError);
}
