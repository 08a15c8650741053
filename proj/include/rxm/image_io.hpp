#pragma once

#include <cstdint>
#include <string>

#include "rxm/error.hpp"
#include "rxm/tensor.hpp"

namespace rxm {

enum class ImageErrorKind { unreadable, not_png, not_rgb, corrupt, unwritable };

class ImageError : public IoError {
 public:
  ImageError(ImageErrorKind kind, const std::string& message) : IoError(message), kind_(kind) {}
  ImageErrorKind kind() const { return kind_; }

 private:
  ImageErrorKind kind_;
};

struct LoadedImage {
  Tensor tensor;  // (1, 3, H', W'), H' and W' rounded up to multiples of 4
  std::int64_t height = 0;  // original extents
  std::int64_t width = 0;
};

// 8-bit RGB PNG, byte v -> v / 255, edge-replicated up to multiples of 4.
LoadedImage load_image(const std::string& path);

// Clamps to [0, 1], maps v -> floor(255 v + 0.5), keeps the top-left
// height x width region and writes an 8-bit RGB PNG.
void save_image(const Tensor& image, const std::string& path, std::int64_t height, std::int64_t width);

std::uint8_t to_byte(float value);

// Edge replication on the bottom and right borders.
Tensor pad_to_multiple(const Tensor& image, std::int64_t multiple);

}  // namespace rxm
