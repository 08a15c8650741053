#include "rxm/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace rxm {

namespace {

struct ImageGuard {
  png_image* image;
  ~ImageGuard() { png_image_free(image); }
};

}  // namespace

std::uint8_t to_byte(float value) {
  const float clamped = std::clamp(value, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::floor(255.0f * clamped + 0.5f));
}

Tensor pad_to_multiple(const Tensor& image, std::int64_t multiple) {
  const Shape s = image.shape();
  const std::int64_t h = (s.h + multiple - 1) / multiple * multiple;
  const std::int64_t w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w) return image;
  Tensor out(Shape{s.n, s.c, h, w});
  for (std::int64_t p = 0; p < s.n * s.c; ++p)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        out[(p * h + y) * w + x] = image[(p * s.h + std::min(y, s.h - 1)) * s.w + std::min(x, s.w - 1)];
      }
  return out;
}

LoadedImage load_image(const std::string& path) {
  {
    std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!file) throw ImageError(ImageErrorKind::unreadable, "cannot open image '" + path + "'");
    png_byte signature[8] = {};
    const std::size_t got = std::fread(signature, 1, sizeof signature, file.get());
    if (got != sizeof signature || png_sig_cmp(signature, 0, sizeof signature) != 0) {
      throw ImageError(ImageErrorKind::not_png, "'" + path + "' is not a PNG file");
    }
  }

  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  ImageGuard guard{&image};
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw ImageError(ImageErrorKind::corrupt, "corrupt PNG '" + path + "': " + image.message);
  }
  const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool wide = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  if (!colour || alpha || wide) {
    throw ImageError(ImageErrorKind::not_rgb, "'" + path + "' is not an 8-bit RGB PNG");
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    throw ImageError(ImageErrorKind::corrupt, "corrupt PNG '" + path + "': " + image.message);
  }

  const std::int64_t h = image.height, w = image.width;
  Tensor t(Shape{1, 3, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t c = 0; c < 3; ++c) t.at(0, c, y, x) = static_cast<float>(pixels[(y * w + x) * 3 + c]) / 255.0f;
  return LoadedImage{pad_to_multiple(t, 4), h, w};
}

void save_image(const Tensor& image, const std::string& path, std::int64_t height, std::int64_t width) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw DimensionError("save_image: expected (1,3,H,W), got " + s.str());
  if (height < 1 || height > s.h) throw DimensionError("save_image: axis H crop out of range");
  if (width < 1 || width > s.w) throw DimensionError("save_image: axis W crop out of range");
  std::vector<png_byte> pixels(static_cast<std::size_t>(height * width * 3));
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x)
      for (std::int64_t c = 0; c < 3; ++c) pixels[(y * width + x) * 3 + c] = to_byte(image.at(0, c, y, x));

  png_image out;
  std::memset(&out, 0, sizeof out);
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(width);
  out.height = static_cast<png_uint_32>(height);
  out.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&out, path.c_str(), 0, pixels.data(), 0, nullptr)) {
    const std::string reason = out.message;
    png_image_free(&out);
    throw ImageError(ImageErrorKind::unwritable, "cannot write image '" + path + "': " + reason);
  }
}

}  // namespace rxm
