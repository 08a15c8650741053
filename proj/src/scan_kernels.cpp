#include "rxm/scan_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rxm/error.hpp"
#include "rxm/parallel.hpp"

namespace rxm::scan {

namespace {

using I64 = std::int64_t;

bool multi_lane() { return parallel::num_threads() > 1; }

// One token of the recurrence; h is updated in place and <C_t, h_t> returned.
inline float advance(float* h, const float* A, const float* Bt, const float* Ct, float dl, float xt, I64 S) {
  for (I64 s = 0; s < S; ++s) h[s] = decay(dl, A[s]) * h[s] + drive(dl, Bt[s], xt);
  float acc = 0.0f;
  for (I64 s = 0; s < S; ++s) acc += Ct[s] * h[s];
  return acc;
}

void check_lane(const ScanProblem& p, const float* y, I64 n, I64 d) {
  const float* yl = y + (n * p.channels + d) * p.length;
  for (I64 t = 0; t < p.length; ++t) {
    if (!std::isfinite(yl[t])) {
      throw NumericError("selective scan produced a non-finite value at token " + std::to_string(t) + " (batch " +
                         std::to_string(n) + ", channel " + std::to_string(d) + ")");
    }
  }
}

void check_all(const ScanProblem& p, const float* y) {
  for (I64 n = 0; n < p.batch; ++n)
    for (I64 d = 0; d < p.channels; ++d) check_lane(p, y, n, d);
}

}  // namespace

void scan_sequential(const ScanProblem& p, float* y) {
  const I64 S = p.d_state, L = p.length, lanes = p.batch * p.channels;
#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 lane = 0; lane < lanes; ++lane) {
    const I64 n = lane / p.channels, d = lane % p.channels;
    const float* x = p.x + lane * L;
    const float* dt = p.delta + lane * L;
    const float* A = p.a + d * S;
    const float* B = p.b + n * L * S;
    const float* C = p.c + n * L * S;
    const float skip = p.d_skip[d];
    float* yl = y + lane * L;
    std::vector<float> h(static_cast<std::size_t>(S), 0.0f);
    for (I64 t = 0; t < L; ++t) {
      yl[t] = advance(h.data(), A, B + t * S, C + t * S, dt[t], x[t], S) + skip * x[t];
    }
  }
  check_all(p, y);
}

void scan_parallel(const ScanProblem& p, float* y, I64 chunk) {
  if (chunk < 1) throw UsageError("scan_parallel: chunk must be >= 1");
  const I64 S = p.d_state, L = p.length, lanes = p.batch * p.channels;
  const I64 chunks = (L + chunk - 1) / chunk;
  const I64 units = lanes * chunks;
  // Per (lane, chunk, state): aggregate transform, then the state entering the chunk.
  std::vector<ScanPair> aggregate(static_cast<std::size_t>(units * S));
  std::vector<float> carry_in(static_cast<std::size_t>(units * S));

#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 unit = 0; unit < units; ++unit) {
    const I64 lane = unit / chunks, k = unit % chunks;
    const I64 n = lane / p.channels, d = lane % p.channels;
    const I64 t0 = k * chunk, t1 = std::min(L, t0 + chunk);
    const float* x = p.x + lane * L;
    const float* dt = p.delta + lane * L;
    const float* A = p.a + d * S;
    const float* B = p.b + n * L * S;
    ScanPair* agg = aggregate.data() + unit * S;
    std::vector<float> ga(static_cast<std::size_t>(S), 1.0f), gb(static_cast<std::size_t>(S), 0.0f);
    for (I64 t = t0; t < t1; ++t) {
      const float dl = dt[t], xt = x[t];
      const float* Bt = B + t * S;
      for (I64 s = 0; s < S; ++s) {
        const float a = decay(dl, A[s]);
        gb[s] = a * gb[s] + drive(dl, Bt[s], xt);
        ga[s] = a * ga[s];
      }
    }
    for (I64 s = 0; s < S; ++s) agg[s] = ScanPair{ga[s], gb[s]};
  }

#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 lane = 0; lane < lanes; ++lane) {
    std::vector<float> carry(static_cast<std::size_t>(S), 0.0f);
    for (I64 k = 0; k < chunks; ++k) {
      const I64 unit = lane * chunks + k;
      std::copy(carry.begin(), carry.end(), carry_in.begin() + unit * S);
      const ScanPair* agg = aggregate.data() + unit * S;
      for (I64 s = 0; s < S; ++s) carry[s] = agg[s].a * carry[s] + agg[s].b;
    }
  }

#pragma omp parallel for schedule(static) if (multi_lane())
  for (I64 unit = 0; unit < units; ++unit) {
    const I64 lane = unit / chunks, k = unit % chunks;
    const I64 n = lane / p.channels, d = lane % p.channels;
    const I64 t0 = k * chunk, t1 = std::min(L, t0 + chunk);
    const float* x = p.x + lane * L;
    const float* dt = p.delta + lane * L;
    const float* A = p.a + d * S;
    const float* B = p.b + n * L * S;
    const float* C = p.c + n * L * S;
    const float skip = p.d_skip[d];
    float* yl = y + lane * L;
    std::vector<float> h(carry_in.begin() + unit * S, carry_in.begin() + (unit + 1) * S);
    for (I64 t = t0; t < t1; ++t) {
      yl[t] = advance(h.data(), A, B + t * S, C + t * S, dt[t], x[t], S) + skip * x[t];
    }
  }
  check_all(p, y);
}

}  // namespace rxm::scan
