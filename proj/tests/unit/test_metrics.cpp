#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rxm/error.hpp"
#include "rxm/metrics.hpp"

using namespace rxm;
using doctest::Approx;

namespace {
const Shape kShape{1, 3, 24, 20};
}

TEST_CASE("psnr") {
  Rng rng(1);
  const Tensor a = Tensor::uniform(kShape, 0.0f, 1.0f, rng);
  CHECK(metrics::psnr(a, a) == metrics::kPsnrCapDb);
  CHECK(std::abs(metrics::psnr(Tensor(kShape, 0.0f), Tensor(kShape, 0.1f)) - 20.0) <= 1e-6);
  CHECK(std::abs(metrics::psnr(Tensor(kShape, 0.0f), Tensor(kShape, 1.0f / 255.0f)) - 48.1308) <= 1e-3);
  CHECK_THROWS_AS(metrics::psnr(a, Tensor({1, 3, 24, 21})), DimensionError);
}

TEST_CASE("ssim") {
  Rng rng(2);
  const Tensor a = Tensor::uniform(kShape, 0.0f, 1.0f, rng), b = Tensor::uniform(kShape, 0.0f, 1.0f, rng);
  CHECK(metrics::ssim(a, a) == 1.0);
  const double c1 = 1e-4;
  CHECK(metrics::ssim(Tensor(kShape, 1.0f), Tensor(kShape, 0.0f)) == Approx(c1 / (1.0 + c1)).epsilon(1e-9));
  CHECK(std::abs(metrics::ssim(a, b) - metrics::ssim(b, a)) <= 1e-9);
  CHECK_THROWS_AS(metrics::ssim(Tensor({1, 3, 10, 30}), Tensor({1, 3, 10, 30})), DimensionError);
}

TEST_CASE("rmse") {
  Rng rng(3);
  const Tensor a = Tensor::uniform(kShape, 0.0f, 1.0f, rng);
  CHECK(metrics::rmse(a, a) == 0.0);
  CHECK(std::abs(metrics::rmse(Tensor(kShape, 0.0f), Tensor(kShape, 1.0f / 255.0f)) - 1.0) <= 1e-6);
  CHECK(metrics::rmse(Tensor(kShape, 0.0f), Tensor(kShape, 0.1f)) == Approx(25.5).epsilon(1e-6));
}

TEST_CASE("psnr and rmse agree through mse; all metrics symmetric") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    const Tensor a = Tensor::uniform(kShape, 0.0f, 1.0f, rng), b = Tensor::uniform(kShape, 0.0f, 1.0f, rng);
    const double r = metrics::rmse(a, b);
    const double implied = 255.0 * 255.0 * std::pow(10.0, -metrics::psnr(a, b) / 10.0);
    CHECK(std::abs(r * r - implied) / implied <= 1e-6);
    CHECK(metrics::psnr(a, b) == metrics::psnr(b, a));
    CHECK(metrics::rmse(a, b) == metrics::rmse(b, a));
  }
}

TEST_CASE("mean report") {
  const auto m = metrics::mean({{10.0, 0.5, 2.0}, {20.0, 0.7, 4.0}});
  CHECK(m.psnr_db == 15.0);
  CHECK(m.ssim == Approx(0.6));
  CHECK(m.rmse == 3.0);
}
