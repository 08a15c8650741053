#include "rxm/gradcheck.hpp"

#include <algorithm>
#include <array>
#include <numeric>

#include "rxm/attention.hpp"
#include "rxm/error.hpp"
#include "rxm/model.hpp"
#include "rxm/ops.hpp"
#include "rxm/ss2d.hpp"

namespace rxm {

namespace {

using I64 = std::int64_t;

// Up to k distinct indices in [0, n), in increasing order.
std::vector<I64> sample_indices(I64 n, I64 k, Rng& rng) {
  std::vector<I64> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), I64{0});
  if (n <= k) return all;
  for (I64 i = 0; i < k; ++i) {
    const auto j = i + static_cast<I64>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(all[i], all[j]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

std::vector<Param*> all_params(ParamSet& set) {
  std::vector<Param*> out;
  for (const auto& p : set.all()) out.push_back(p.get());
  return out;
}

I64 pick(Rng& rng, I64 lo, I64 hi) { return lo + static_cast<I64>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); }

}  // namespace

double gradcheck_case(const GraphFn& f, std::vector<Tensor> inputs, std::span<Param* const> params, Rng& rng,
                      const GradcheckOptions& options) {
  for (Param* p : params) p->zero_grad();
  Tape tape;
  ParamBinder bind(&tape);
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.input(t, true));
  const Var out = f(bind, vars);
  const Tensor seed = Tensor::normal(out.shape(), 1.0f, rng);
  tape.backward(out, seed);

  auto evaluate = [&](std::size_t replaced, const Tensor* replacement) {
    ParamBinder constants;
    std::vector<Var> cv;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      cv.push_back(Var::constant(i == replaced && replacement ? *replacement : inputs[i]));
    }
    return weighted_sum(f(constants, cv).value(), seed);
  };

  std::vector<double> analytic, numeric;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto coords = sample_indices(inputs[i].numel(), options.max_input_coords, rng);
    const Tensor g = vars[i].grad();
    for (I64 k : coords) analytic.push_back(g[k]);
    const auto fd = finite_diff_grad([&](const Tensor& probe) { return evaluate(i, &probe); }, inputs[i],
                                     options.step, coords);
    numeric.insert(numeric.end(), fd.begin(), fd.end());
  }

  I64 pool = 0;
  for (Param* p : params) pool += p->value.numel();
  if (pool > 0) {
    for (I64 global : sample_indices(pool, options.max_param_coords, rng)) {
      std::size_t owner = 0;
      while (global >= params[owner]->value.numel()) global -= params[owner++]->value.numel();
      Param& p = *params[owner];
      analytic.push_back(p.grad[global]);
      const float original = p.value[global];
      numeric.push_back(central_difference(
          [&](float v) {
            p.value[global] = v;
            return evaluate(inputs.size(), nullptr);
          },
          original, options.step));
      p.value[global] = original;
    }
  }
  for (Param* p : params) p->zero_grad();
  return relative_l2(analytic, numeric);
}

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed(); });
}

GradcheckReport run_gradcheck_suite(std::uint64_t seed, int cases) {
  GradcheckReport report;
  Rng rng(seed);
  auto run = [&](const std::string& op, double tolerance, auto&& one_case) {
    GradcheckEntry entry{op, cases, 0.0, tolerance};
    for (int c = 0; c < cases; ++c) entry.worst_relative_error = std::max(entry.worst_relative_error, one_case());
    report.entries.push_back(entry);
  };
  const std::vector<Param*> no_params;

  run("conv2d", kOpGradTolerance, [&] {
    const I64 n = pick(rng, 1, 2), cin = pick(rng, 1, 4);
    const I64 groups = rng.coin() ? 1 : cin;
    const I64 cout = groups * pick(rng, 1, 3);
    const std::array<I64, 4> kernels{1, 3, 4, 5};
    const I64 k = kernels[rng.below(4)];
    const int stride = static_cast<int>(pick(rng, 1, 2)), pad = static_cast<int>(pick(rng, 0, 2));
    const I64 h = std::max<I64>(k - 2 * pad, 1) + pick(rng, 0, 3);
    const I64 w = std::max<I64>(k - 2 * pad, 1) + pick(rng, 0, 3);
    std::vector<Tensor> in{Tensor::normal({n, cin, h, w}, 1.0f, rng), Tensor::normal({cout, cin / groups, k, k}, 0.5f, rng),
                           Tensor::normal({1, cout, 1, 1}, 0.5f, rng)};
    const ops::Conv2dOptions opt{stride, pad, static_cast<int>(groups)};
    return gradcheck_case([opt](ParamBinder&, std::span<const Var> v) { return ops::conv2d(v[0], v[1], v[2], opt); },
                          in, no_params, rng);
  });

  run("conv_transpose2d", kOpGradTolerance, [&] {
    const I64 n = pick(rng, 1, 2), cin = pick(rng, 1, 3), cout = pick(rng, 1, 3), k = pick(rng, 2, 3);
    const int stride = static_cast<int>(pick(rng, 1, 2)), pad = static_cast<int>(pick(rng, 0, 1));
    const I64 h = pick(rng, 2, 4), w = pick(rng, 2, 4);
    std::vector<Tensor> in{Tensor::normal({n, cin, h, w}, 1.0f, rng), Tensor::normal({cin, cout, k, k}, 0.5f, rng),
                           Tensor::normal({1, cout, 1, 1}, 0.5f, rng)};
    const ops::ConvTransposeOptions opt{stride, pad};
    return gradcheck_case(
        [opt](ParamBinder&, std::span<const Var> v) { return ops::conv_transpose2d(v[0], v[1], v[2], opt); }, in,
        no_params, rng);
  });

  run("layer_norm", kOpGradTolerance, [&] {
    const I64 n = pick(rng, 1, 2), c = pick(rng, 2, 6), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    std::vector<Tensor> in{Tensor::normal({n, c, h, w}, 2.0f, rng), Tensor::normal({1, c, 1, 1}, 1.0f, rng),
                           Tensor::normal({1, c, 1, 1}, 1.0f, rng)};
    return gradcheck_case([](ParamBinder&, std::span<const Var> v) { return ops::layer_norm(v[0], v[1], v[2]); }, in,
                          no_params, rng);
  });

  run("softmax", kOpGradTolerance, [&] {
    const Shape s{pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
    const int axis = static_cast<int>(rng.below(4));
    std::vector<Tensor> in{Tensor::normal(s, 2.0f, rng)};
    return gradcheck_case([axis](ParamBinder&, std::span<const Var> v) { return ops::softmax(v[0], axis); }, in,
                          no_params, rng);
  });

  for (auto kind : {ops::Activation::silu, ops::Activation::gelu}) {
    run(kind == ops::Activation::silu ? "activation:silu" : "activation:gelu", kOpGradTolerance, [&] {
      const Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
      std::vector<Tensor> in{Tensor::normal(s, 2.0f, rng)};
      return gradcheck_case([kind](ParamBinder&, std::span<const Var> v) { return ops::activation(v[0], kind); }, in,
                            no_params, rng);
    });
  }

  run("softplus", kOpGradTolerance, [&] {
    const Shape s{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 4), pick(rng, 1, 4)};
    std::vector<Tensor> in{Tensor::normal(s, 2.0f, rng)};
    return gradcheck_case([](ParamBinder&, std::span<const Var> v) { return ops::softplus(v[0]); }, in, no_params,
                          rng);
  });

  run("batched_matmul", kOpGradTolerance, [&] {
    const I64 n = pick(rng, 1, 2), c = pick(rng, 1, 2), m = pick(rng, 1, 5), k = pick(rng, 1, 5), p = pick(rng, 1, 5);
    const bool ta = rng.coin(), tb = rng.coin();
    std::vector<Tensor> in{Tensor::normal(ta ? Shape{n, c, k, m} : Shape{n, c, m, k}, 1.0f, rng),
                           Tensor::normal(tb ? Shape{n, c, p, k} : Shape{n, c, k, p}, 1.0f, rng)};
    return gradcheck_case(
        [ta, tb](ParamBinder&, std::span<const Var> v) { return ops::batched_matmul(v[0], v[1], ta, tb); }, in,
        no_params, rng);
  });

  run("selective_scan", kOpGradTolerance, [&] {
    const I64 n = pick(rng, 1, 2), d = pick(rng, 1, 4), s = pick(rng, 1, 4), l = pick(rng, 1, 12);
    std::vector<Tensor> in{Tensor::normal({n, d, l, 1}, 1.0f, rng), Tensor::uniform({n, d, l, 1}, 0.05f, 0.5f, rng),
                           Tensor::normal({d, s, 1, 1}, 0.5f, rng),  Tensor::normal({n, s, l, 1}, 1.0f, rng),
                           Tensor::normal({n, s, l, 1}, 1.0f, rng),  Tensor::normal({1, d, 1, 1}, 1.0f, rng)};
    const auto kernel = rng.coin() ? ScanKernel::sequential : ScanKernel::parallel;
    return gradcheck_case(
        [kernel](ParamBinder&, std::span<const Var> v) {
          return selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], kernel);
        },
        in, no_params, rng);
  });

  for (const bool igmsa : {false, true}) {
    run(igmsa ? "igmsa_forward" : "ifa_forward", kOpGradTolerance, [&] {
      const I64 heads = pick(rng, 1, 2);
      ParamSet ps;
      const IFAWeights w = make_ifa_weights(ps, "attn", 4, heads, rng);
      for (I64 h = 0; h < heads; ++h) w.alpha->value[h] = static_cast<float>(rng.uniform(0.5, 2.0));
      std::vector<Tensor> in{Tensor::normal({1, 4, 3, 3}, 1.0f, rng), Tensor::normal({1, 4, 3, 3}, 1.0f, rng)};
      const auto params = all_params(ps);
      return gradcheck_case(
          [&w, igmsa](ParamBinder& bind, std::span<const Var> v) {
            return igmsa ? igmsa_forward(bind, w, v[0], v[1]) : ifa_forward(bind, w, v[0], v[1]);
          },
          in, params, rng);
    });
  }

  run("ss2d_block", kOpGradTolerance, [&] {
    ParamSet ps;
    const SS2DWeights w = make_ss2d_weights(ps, "ss2d", 8, 4, rng);
    std::vector<Tensor> in{Tensor::normal({1, 8, 4, 4}, 1.0f, rng)};
    const auto params = all_params(ps);
    return gradcheck_case([&w](ParamBinder& bind, std::span<const Var> v) { return ss2d_block(bind, w, v[0]); }, in,
                          params, rng);
  });

  run("ifssm_forward", kOpGradTolerance, [&] {
    ModelConfig cfg;
    cfg.n_feat = 8;
    cfg.heads_base_width = 4;
    cfg.d_state_base = 4;
    ParamSet ps;
    const IFSSMWeights w = make_ifssm_weights(ps, "blk", cfg, 0, rng);
    std::vector<Tensor> in{Tensor::normal({1, 8, 8, 8}, 1.0f, rng), Tensor::normal({1, 8, 8, 8}, 1.0f, rng)};
    const auto params = all_params(ps);
    return gradcheck_case(
        [&w, &cfg](ParamBinder& bind, std::span<const Var> v) { return ifssm_forward(bind, w, cfg, v[0], v[1]); }, in,
        params, rng);
  });

  run("model_forward", kEndToEndGradTolerance, [&] {
    ModelConfig cfg;
    cfg.n_feat = 8;
    cfg.heads_base_width = 4;
    cfg.d_state_base = 4;
    cfg.seed = rng.next();
    ModelWeights weights = ModelWeights::create(cfg);
    std::vector<Tensor> in{Tensor::uniform({1, 3, 16, 16}, 0.0f, 1.0f, rng)};
    const auto params = all_params(weights.params());
    return gradcheck_case(
        [&weights](ParamBinder& bind, std::span<const Var> v) { return model_forward(bind, weights, v[0]); }, in,
        params, rng);
  });

  return report;
}

}  // namespace rxm
