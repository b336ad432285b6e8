#include "attrcenter/synth/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace attrcenter::synth {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const ad::Tensor& img) {
  const bool gray = img.rank() == 2;
  if (!gray && !(img.rank() == 3 && img.dim(0) == 3)) {
    throw ad::ShapeError("write_png: expected H x W or 3 x H x W, got " + ad::shape_str(img.shape()));
  }
  const std::size_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1), C = gray ? 1 : 3;
  std::vector<png_byte> pixels(H * W * C);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::clamp(img[(c * H + y) * W + x], 0.0, 1.0);
        pixels[(y * W + x) * C + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }

  File f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed for " + path.string());
  }
  std::vector<png_bytep> rows(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = pixels.data() + y * W * C;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("writing " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
               gray ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ad::Tensor read_png(const std::filesystem::path& path) {
  File f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, f.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError(path.string() + " is not a PNG file");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed for " + path.string());
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("reading " + path.string() + ": " + err);
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const std::size_t W = png_get_image_width(png, info), H = png_get_image_height(png, info);
  const std::size_t C = png_get_channels(png, info);
  if (C != 1 && C != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": unsupported channel count " + std::to_string(C));
  }
  pixels.resize(H * W * C);
  rows.resize(H);
  for (std::size_t y = 0; y < H; ++y) rows[y] = pixels.data() + y * W * C;
  // Re-arm after the buffers were resized so the jump target sees them as they are now.
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("reading " + path.string() + ": " + err);
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  ad::Tensor out(C == 1 ? ad::Shape{H, W} : ad::Shape{3, H, W}, 0.0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < C; ++c) out[(c * H + y) * W + x] = pixels[(y * W + x) * C + c] / 255.0;
  return out;
}

}  // namespace attrcenter::synth
