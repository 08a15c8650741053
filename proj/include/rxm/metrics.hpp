#pragma once

#include <vector>

#include "rxm/tensor.hpp"

namespace rxm::metrics {

// Returned by psnr() when the images are identical.
inline constexpr double kPsnrCapDb = 100.0;

// Images are (1, 3, H, W) or (3, H, W)-equivalent tensors with values in [0, 1].
double mse(const Tensor& a, const Tensor& b);
// 10 log10(1 / MSE), peak 1.0.
double psnr(const Tensor& a, const Tensor& b);
// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// dynamic range 1, valid windows only, averaged over channels.
double ssim(const Tensor& a, const Tensor& b);
// Root mean square error on the 0-255 scale.
double rmse(const Tensor& a, const Tensor& b);

struct MetricReport {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double rmse = 0.0;
};

MetricReport evaluate(const Tensor& a, const Tensor& b);
MetricReport mean(const std::vector<MetricReport>& reports);

}  // namespace rxm::metrics
