#pragma once

#include <bit>
#include <cstdint>

// Raw kernels for the selective state-space recurrence
//
//   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * x_t,   h_{-1} = 0
//   y_t = <C_t, h_t> + d_skip * x_t
//
// evaluated independently per (batch, channel) lane with a d_state-wide state.
namespace rxm::scan {

// Branch-free exp for float, within 2 ulp of std::exp over [-87, 88] (inputs are
// clamped to that range). Written so that loops calling it vectorise.
inline float fast_exp(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  // Truncating a positive value floors it.
  const int n = static_cast<int>(x * 1.44269504088896341f + 256.5f) - 256;
  const float fn = static_cast<float>(n);
  float r = x - fn * 0.693359375f;
  r = r + fn * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  return p * std::bit_cast<float>(static_cast<std::uint32_t>(n + 127) << 23);
}

// Per-step transition terms shared by the forward kernels and the backward replay.
inline float decay(float delta, float a) { return fast_exp(delta * a); }
inline float drive(float delta, float b, float x) { return delta * b * x; }

// Element of the linear-recurrence monoid: h -> a * h + b.
struct ScanPair {
  float a = 1.0f;
  float b = 0.0f;
};

// Applies `first`, then `second`: (a2 * a1, a2 * b1 + b2).
inline ScanPair combine(ScanPair first, ScanPair second) {
  return {second.a * first.a, second.a * first.b + second.b};
}

struct ScanProblem {
  std::int64_t batch = 0;
  std::int64_t channels = 0;  // d_inner
  std::int64_t length = 0;    // L
  std::int64_t d_state = 0;
  const float* x = nullptr;       // (batch, channels, length)
  const float* delta = nullptr;   // (batch, channels, length), positive
  const float* a = nullptr;       // (channels, d_state), negative
  const float* b = nullptr;       // (batch, length, d_state)
  const float* c = nullptr;       // (batch, length, d_state)
  const float* d_skip = nullptr;  // (channels)
};

// Token-by-token reference evaluation. Throws NumericError naming the first
// token whose output is not finite.
void scan_sequential(const ScanProblem& problem, float* y);

inline constexpr std::int64_t kDefaultChunk = 64;

// Blocked associative scan: per-chunk aggregates, a carry pass across chunks,
// then chunk-local replay from the carried state. With a single chunk it
// performs exactly the sequential arithmetic.
void scan_parallel(const ScanProblem& problem, float* y, std::int64_t chunk = kDefaultChunk);

}  // namespace rxm::scan
