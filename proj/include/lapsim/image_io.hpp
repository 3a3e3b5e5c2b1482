#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace lapsim {

struct ImageU8 {
  int width = 0, height = 0, channels = 0;  // channels: 1 (gray) or 3 (rgb)
  std::vector<uint8_t> data;                // row-major, interleaved
};

struct ImageU16 {
  int width = 0, height = 0;  // single channel
  std::vector<uint16_t> data;
};

struct ImageF32 {
  int width = 0, height = 0, channels = 0;
  std::vector<float> data;
};

// PNG. 16-bit images are single-channel grayscale; 8-bit gray or RGB.
void write_png_u8(const std::filesystem::path& path, const ImageU8& img);
void write_png_u16(const std::filesystem::path& path, const ImageU16& img);
ImageU8 read_png_u8(const std::filesystem::path& path);
ImageU16 read_png_u16(const std::filesystem::path& path);

// Raw float channel file: 16-byte header "SIMF" + width + height + channels
// (unsigned 32-bit little-endian each), then row-major float32 samples.
void write_raw_f32(const std::filesystem::path& path, const ImageF32& img);
ImageF32 read_raw_f32(const std::filesystem::path& path);

}  // namespace lapsim
