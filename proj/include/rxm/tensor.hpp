#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace rxm {

// (N, C, H, W) extents of a dense row-major tensor.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::int64_t spatial() const { return h * w; }
  std::int64_t operator[](int axis) const;
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Seeded generator with a platform-independent mapping from raw bits to floats.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal();
  bool coin() { return (next() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor uniform(Shape shape, float lo, float hi, Rng& rng);
  static Tensor normal(Shape shape, float stddev, Rng& rng);

  const Shape& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  float* ptr() { return data_.data(); }
  const float* ptr() const { return data_.data(); }

  std::int64_t offset(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  float& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(offset(n, c, h, w))];
  }
  float at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(offset(n, c, h, w))];
  }
  float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Same buffer, new extents. Element count must match.
  Tensor reshaped(Shape shape) const;

  void fill(float value);
  // this += other (same shape).
  void add_(const Tensor& other);
  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<float> data_;
};

// Throws DimensionError naming the first mismatching axis.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);
// ||a - b|| / max(||b||, tiny), accumulated in double.
double relative_l2(std::span<const double> a, std::span<const double> b);

}  // namespace rxm
