#include "rxm/metrics.hpp"

#include <array>
#include <cmath>

#include "rxm/error.hpp"

namespace rxm::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 1.0) * (0.01 * 1.0);
constexpr double kC2 = (0.03 * 1.0) * (0.03 * 1.0);

std::array<double, kWindow> gaussian_taps() {
  std::array<double, kWindow> taps{};
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

// Separable valid-mode Gaussian filter of one plane.
std::vector<double> blur(const std::vector<double>& plane, std::int64_t h, std::int64_t w) {
  static const auto taps = gaussian_taps();
  const std::int64_t oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * plane[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  return out;
}

}  // namespace

double mse(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  if (a.numel() == 0) throw DimensionError("mse: empty images");
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCapDb;
  return 10.0 * std::log10(1.0 / m);
}

double rmse(const Tensor& a, const Tensor& b) { return 255.0 * std::sqrt(mse(a, b)); }

double ssim(const Tensor& a, const Tensor& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape s = a.shape();
  if (s.h < kWindow) throw DimensionError("ssim: axis H (" + std::to_string(s.h) + ") smaller than the 11x11 window");
  if (s.w < kWindow) throw DimensionError("ssim: axis W (" + std::to_string(s.w) + ") smaller than the 11x11 window");
  const std::int64_t hw = s.spatial();
  const std::int64_t planes = s.n * s.c;
  double total = 0.0;
  for (std::int64_t p = 0; p < planes; ++p) {
    std::vector<double> x(hw), y(hw), xx(hw), yy(hw), xy(hw);
    for (std::int64_t i = 0; i < hw; ++i) {
      x[i] = a[p * hw + i];
      y[i] = b[p * hw + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x, s.h, s.w), my = blur(y, s.h, s.w);
    const auto sxx = blur(xx, s.h, s.w), syy = blur(yy, s.h, s.w), sxy = blur(xy, s.h, s.w);
    double plane_sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      plane_sum += ((2.0 * mx[i] * my[i] + kC1) * (2.0 * cov + kC2)) /
                   ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    total += plane_sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(planes);
}

MetricReport evaluate(const Tensor& a, const Tensor& b) { return {psnr(a, b), ssim(a, b), rmse(a, b)}; }

MetricReport mean(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.psnr_db += r.psnr_db;
    m.ssim += r.ssim;
    m.rmse += r.rmse;
  }
  const auto n = static_cast<double>(reports.size());
  m.psnr_db /= n;
  m.ssim /= n;
  m.rmse /= n;
  return m;
}

}  // namespace rxm::metrics
