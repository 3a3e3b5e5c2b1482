#include "lapsim/image_io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "lapsim/math.hpp"

namespace lapsim {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth,
               int color_type, const std::vector<png_bytep>& rows) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // buffers are host little-endian
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr file;

  explicit PngReader(const std::filesystem::path& path) : file(open_file(path, "rb")) {
    png_byte sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
      throw IoError("not a PNG file: " + path.string());
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
      png_destroy_read_struct(&png, &info, nullptr);
      throw IoError("libpng init failed for " + path.string());
    }
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

}  // namespace

void write_png_u8(const std::filesystem::path& path, const ImageU8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("write_png_u8: unsupported channel count");
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.data.data() + y * stride);
  write_png(path, img.width, img.height, 8,
            img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, rows);
}

void write_png_u16(const std::filesystem::path& path, const ImageU16& img) {
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(
        reinterpret_cast<const png_byte*>(img.data.data() + static_cast<std::size_t>(y) * img.width));
  write_png(path, img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

ImageU8 read_png_u8(const std::filesystem::path& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("png read failed: " + path.string());
  png_read_info(r.png, r.info);
  png_set_strip_16(r.png);
  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  png_set_strip_alpha(r.png);
  png_read_update_info(r.png, r.info);

  ImageU8 img;
  img.width = static_cast<int>(png_get_image_width(r.png, r.info));
  img.height = static_cast<int>(png_get_image_height(r.png, r.info));
  img.channels = static_cast<int>(png_get_channels(r.png, r.info));
  if (img.channels != 1 && img.channels != 3)
    throw IoError("read_png_u8: unsupported channel count in " + path.string());
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y) rows[y] = img.data.data() + y * stride;
  png_read_image(r.png, rows.data());
  return img;
}

ImageU16 read_png_u16(const std::filesystem::path& path) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("png read failed: " + path.string());
  png_read_info(r.png, r.info);
  if (png_get_bit_depth(r.png, r.info) != 16 ||
      png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY)
    throw IoError("read_png_u16: expected 16-bit grayscale in " + path.string());
  png_set_swap(r.png);
  png_read_update_info(r.png, r.info);

  ImageU16 img;
  img.width = static_cast<int>(png_get_image_width(r.png, r.info));
  img.height = static_cast<int>(png_get_image_height(r.png, r.info));
  img.data.resize(static_cast<std::size_t>(img.width) * img.height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[y] = reinterpret_cast<png_byte*>(img.data.data() + static_cast<std::size_t>(y) * img.width);
  png_read_image(r.png, rows.data());
  return img;
}

// Header layout is fixed little-endian; this code assumes a little-endian host.
static_assert(std::endian::native == std::endian::little, "raw float IO assumes little-endian host");

void write_raw_f32(const std::filesystem::path& path, const ImageF32& img) {
  FilePtr f = open_file(path, "wb");
  const uint32_t header[3] = {static_cast<uint32_t>(img.width), static_cast<uint32_t>(img.height),
                              static_cast<uint32_t>(img.channels)};
  const std::size_t n = img.data.size();
  if (n != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw IoError("write_raw_f32: buffer size mismatch");
  if (std::fwrite("SIMF", 1, 4, f.get()) != 4 || std::fwrite(header, 4, 3, f.get()) != 3 ||
      std::fwrite(img.data.data(), sizeof(float), n, f.get()) != n)
    throw IoError("short write: " + path.string());
}

ImageF32 read_raw_f32(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  char magic[4];
  uint32_t header[3];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "SIMF", 4) != 0)
    throw IoError("bad magic in " + path.string());
  if (std::fread(header, 4, 3, f.get()) != 3) throw IoError("truncated header: " + path.string());
  ImageF32 img;
  img.width = static_cast<int>(header[0]);
  img.height = static_cast<int>(header[1]);
  img.channels = static_cast<int>(header[2]);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.data.resize(n);
  if (std::fread(img.data.data(), sizeof(float), n, f.get()) != n)
    throw IoError("truncated data: " + path.string());
  return img;
}

}  // namespace lapsim
