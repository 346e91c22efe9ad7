#include "semalign/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "semalign/errors.hpp"

namespace semalign {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.channels() != 1 && image.channels() != 3)) {
    throw ShapeError("write_png expects a (1|3,H,W) raster, got " + image.shape_string());
  }
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialisation failed");
  }
  const int c = image.channels(), h = image.height(), w = image.width();
  std::vector<png_byte> pixels(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image.at(ch, y, x), 0.0, 1.0);
        pixels[(static_cast<std::size_t>(y) * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
  }
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = pixels.data() + static_cast<std::size_t>(y) * w * c;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  const int h = static_cast<int>(img.height), w = static_cast<int>(img.width);
  Tensor out = Tensor::chw(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        out.at(ch, y, x) = buffer[(static_cast<std::size_t>(y) * w + x) * 3 + ch] / 255.0;
      }
    }
  }
  return out;
}

double sample_channel(const Tensor& image, int channel, const Vec2& p) {
  const int h = image.height(), w = image.width();
  const double px = std::clamp(to_pixel(p.x(), w), 0.0, w - 1.0);
  const double py = std::clamp(to_pixel(p.y(), h), 0.0, h - 1.0);
  const int x0 = std::min(static_cast<int>(px), w - 2);
  const int y0 = std::min(static_cast<int>(py), h - 2);
  const double fx = px - x0, fy = py - y0;
  return (1 - fy) * ((1 - fx) * image.at(channel, y0, x0) + fx * image.at(channel, y0, x0 + 1)) +
         fy * ((1 - fx) * image.at(channel, y0 + 1, x0) + fx * image.at(channel, y0 + 1, x0 + 1));
}

Tensor resample(const Tensor& image, int height, int width, const std::function<Vec2(const Vec2&)>& source_of) {
  Tensor out = Tensor::chw(image.channels(), height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Vec2 q = source_of(Vec2(to_normalized(x, width), to_normalized(y, height)));
      for (int ch = 0; ch < image.channels(); ++ch) out.at(ch, y, x) = sample_channel(image, ch, q);
    }
  }
  return out;
}

}  // namespace semalign
