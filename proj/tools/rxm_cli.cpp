#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rxm/checkpoint.hpp"
#include "rxm/config_file.hpp"
#include "rxm/error.hpp"
#include "rxm/gradcheck.hpp"
#include "rxm/image_io.hpp"
#include "rxm/metrics.hpp"
#include "rxm/model.hpp"
#include "rxm/parallel.hpp"
#include "rxm/ss2d.hpp"
#include "rxm/train.hpp"

namespace fs = std::filesystem;
using namespace rxm;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Common {
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--threads", c.threads, "worker lanes")->check(CLI::PositiveNumber);
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

std::vector<std::string> png_names(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError("not a directory: '" + dir + "'");
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") names.push_back(entry.path().filename());
  }
  std::sort(names.begin(), names.end());
  return names;
}

// Filenames present in both directories, sorted. Unmatched files are reported.
std::vector<std::string> matched_names(const std::string& low_dir, const std::string& gt_dir) {
  const auto low = png_names(low_dir);
  const auto gt = png_names(gt_dir);
  std::vector<std::string> both;
  std::set_intersection(low.begin(), low.end(), gt.begin(), gt.end(), std::back_inserter(both));
  for (const auto& n : low) {
    if (!std::binary_search(both.begin(), both.end(), n)) std::cerr << "warning: no ground truth for " << n << "\n";
  }
  for (const auto& n : gt) {
    if (!std::binary_search(both.begin(), both.end(), n)) std::cerr << "warning: no low-light image for " << n << "\n";
  }
  if (both.empty()) throw IoError("no matching image pairs between '" + low_dir + "' and '" + gt_dir + "'");
  return both;
}

Tensor original_region(const LoadedImage& img) { return crop(img.tensor, 0, 0, img.height, img.width); }

std::vector<ImagePair> load_dataset(const std::string& low_dir, const std::string& gt_dir) {
  std::vector<ImagePair> data;
  for (const auto& name : matched_names(low_dir, gt_dir)) {
    const LoadedImage low = load_image((fs::path(low_dir) / name).string());
    const LoadedImage gt = load_image((fs::path(gt_dir) / name).string());
    if (low.height != gt.height || low.width != gt.width) {
      throw IoError("size mismatch between low and ground-truth images for " + name);
    }
    data.push_back({low.tensor, gt.tensor});
  }
  return data;
}

void run_train(const std::string& low_dir, const std::string& gt_dir, RunConfig cfg, const std::string& out_ckpt,
               const std::string& trace, const Common& common) {
  if (common.seed) {
    cfg.model.seed = *common.seed;
    cfg.train.seed = *common.seed;
  }
  cfg.model.validate();
  cfg.train.validate();
  const auto data = load_dataset(low_dir, gt_dir);
  ModelWeights weights = ModelWeights::create(cfg.model);
  const auto steps = train_loop(data, weights, cfg.train, trace);
  save_checkpoint(weights, out_ckpt);
  if (!steps.empty()) std::cout << "final l1 " << fmt(steps.back().l1) << "\n";
}

void run_eval(const std::string& low_dir, const std::string& gt_dir, const ModelWeights& weights,
              const std::string& out_path) {
  const auto names = matched_names(low_dir, gt_dir);
  std::vector<metrics::MetricReport> reports(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const LoadedImage low = load_image((fs::path(low_dir) / names[i]).string());
    const LoadedImage gt = load_image((fs::path(gt_dir) / names[i]).string());
    if (low.height != gt.height || low.width != gt.width) {
      throw IoError("size mismatch between low and ground-truth images for " + names[i]);
    }
    const Tensor out = crop(enhance(weights, low.tensor), 0, 0, low.height, low.width);
    // Match what a saved PNG would contain.
    Tensor quantized = out;
    for (std::int64_t k = 0; k < quantized.numel(); ++k) quantized[k] = to_byte(quantized[k]) / 255.0f;
    reports[i] = metrics::evaluate(quantized, original_region(gt));
  }
  std::ofstream csv = open_output(out_path);
  csv << "file,psnr,ssim,rmse\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    csv << names[i] << ',' << fmt(reports[i].psnr_db) << ',' << fmt(reports[i].ssim) << ',' << fmt(reports[i].rmse)
        << '\n';
  }
  const auto m = metrics::mean(reports);
  csv << "mean," << fmt(m.psnr_db) << ',' << fmt(m.ssim) << ',' << fmt(m.rmse) << '\n';
  if (!csv) throw IoError("failed writing '" + out_path + "'");
  std::cout << "mean psnr " << fmt(m.psnr_db) << " ssim " << fmt(m.ssim) << " rmse " << fmt(m.rmse) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RetinexMamba low-light enhancement"};
  app.require_subcommand(1);

  Common common;
  std::string input, output, ckpt, config_path, low_dir, gt_dir, out_ckpt, out_csv, trace, variant, action;
  std::int64_t length = 0, d_state = 0, channels = 16;
  int trials = 0, cases = 20;
  bool identity = false;

  auto* enhance_cmd = app.add_subcommand("enhance", "enhance one image");
  enhance_cmd->add_option("--input", input)->required();
  enhance_cmd->add_option("--ckpt", ckpt)->required();
  enhance_cmd->add_option("--output", output)->required();
  enhance_cmd->add_option("--config", config_path, "must agree with the checkpoint's model config");
  add_common(enhance_cmd, common);

  auto* eval_cmd = app.add_subcommand("eval", "per-image PSNR/SSIM/RMSE against ground truth");
  eval_cmd->add_option("--low-dir", low_dir)->required();
  eval_cmd->add_option("--gt-dir", gt_dir)->required();
  eval_cmd->add_option("--ckpt", ckpt)->required();
  eval_cmd->add_option("--out", out_csv)->required();
  add_common(eval_cmd, common);

  auto* train_cmd = app.add_subcommand("train", "train from paired directories");
  train_cmd->add_option("--low-dir", low_dir)->required();
  train_cmd->add_option("--gt-dir", gt_dir)->required();
  train_cmd->add_option("--config", config_path)->required();
  train_cmd->add_option("--out-ckpt", out_ckpt)->required();
  train_cmd->add_option("--trace", trace, "step,lr,l1 CSV");
  add_common(train_cmd, common);

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad_cmd->add_option("--cases", cases, "cases per op")->check(CLI::PositiveNumber);
  add_common(grad_cmd, common);

  auto* bench_cmd = app.add_subcommand("bench-scan", "sequential vs parallel selective scan");
  bench_cmd->add_option("--length", length)->required()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--d-state", d_state)->required()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--trials", trials)->required()->check(CLI::PositiveNumber);
  bench_cmd->add_option("--out", out_csv)->required();
  bench_cmd->add_option("--channels", channels)->check(CLI::PositiveNumber);
  add_common(bench_cmd, common);

  auto* ablate_cmd = app.add_subcommand("ablate", "train or evaluate an ablation variant");
  ablate_cmd->add_option("--variant", variant)->required()->check(CLI::IsMember({"fixedhs", "nofb", "noss2d", "igmsa"}));
  ablate_cmd->add_option("--action", action)->required()->check(CLI::IsMember({"train", "eval"}));
  ablate_cmd->add_option("--low-dir", low_dir)->required();
  ablate_cmd->add_option("--gt-dir", gt_dir)->required();
  ablate_cmd->add_option("--config", config_path, "train: run config");
  ablate_cmd->add_option("--out-ckpt", out_ckpt, "train: checkpoint to write");
  ablate_cmd->add_option("--trace", trace, "train: step,lr,l1 CSV");
  ablate_cmd->add_option("--ckpt", ckpt, "eval: checkpoint to evaluate");
  ablate_cmd->add_option("--out", out_csv, "eval: metrics CSV");
  add_common(ablate_cmd, common);

  auto* init_cmd = app.add_subcommand("init", "write a freshly initialised checkpoint");
  init_cmd->add_option("--config", config_path);
  init_cmd->add_option("--out-ckpt", out_ckpt)->required();
  init_cmd->add_flag("--identity", identity, "zero weights and unit illumination: output equals input");
  add_common(init_cmd, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    parallel::set_num_threads(common.threads);

    if (*enhance_cmd) {
      const ModelWeights weights = load_checkpoint(ckpt);
      if (!config_path.empty()) {
        ModelConfig expected = load_config(config_path).model;
        if (!(expected == weights.config())) {
          throw UsageError("--config does not match the checkpoint's model configuration");
        }
      }
      const LoadedImage img = load_image(input);
      const Tensor out = enhance(weights, img.tensor);
      if (!out.all_finite()) throw NumericError("enhance produced non-finite values");
      save_image(out, output, img.height, img.width);
    } else if (*eval_cmd) {
      run_eval(low_dir, gt_dir, load_checkpoint(ckpt), out_csv);
    } else if (*train_cmd) {
      run_train(low_dir, gt_dir, load_config(config_path), out_ckpt, trace, common);
    } else if (*grad_cmd) {
      const auto report = run_gradcheck_suite(common.seed.value_or(0), cases);
      for (const auto& e : report.entries) {
        std::printf("%-18s cases=%d worst_rel_l2=%.3e tol=%.0e %s\n", e.op.c_str(), e.cases, e.worst_relative_error,
                    e.tolerance, e.passed() ? "ok" : "FAIL");
      }
      return report.all_passed() ? 0 : kExitNumeric;
    } else if (*bench_cmd) {
      const auto rows = bench_scan(length, d_state, channels, trials, common.threads, common.seed.value_or(0));
      std::ofstream csv = open_output(out_csv);
      csv << "kernel,L,d_state,threads,ns_per_token,max_abs_diff\n";
      for (const auto& r : rows) {
        csv << r.kernel << ',' << r.length << ',' << r.d_state << ',' << r.threads << ',' << fmt(r.ns_per_token)
            << ',' << fmt(r.max_abs_diff) << '\n';
        std::printf("%-10s L=%lld d_state=%lld ns/token=%.1f max_abs_diff=%.3e\n", r.kernel.c_str(),
                    static_cast<long long>(r.length), static_cast<long long>(r.d_state), r.ns_per_token,
                    r.max_abs_diff);
      }
      if (!csv) throw IoError("failed writing '" + out_csv + "'");
    } else if (*ablate_cmd) {
      const Ablation ablation = parse_ablation(variant);
      if (action == "train") {
        if (config_path.empty() || out_ckpt.empty()) throw UsageError("ablate --action train needs --config and --out-ckpt");
        RunConfig cfg = load_config(config_path);
        cfg.model = apply_ablation(cfg.model, ablation);
        run_train(low_dir, gt_dir, cfg, out_ckpt, trace, common);
      } else {
        if (ckpt.empty() || out_csv.empty()) throw UsageError("ablate --action eval needs --ckpt and --out");
        const ModelWeights weights = load_checkpoint(ckpt);
        if (!(apply_ablation(weights.config(), ablation) == weights.config())) {
          throw UsageError("checkpoint is not a '" + variant + "' model");
        }
        run_eval(low_dir, gt_dir, weights, out_csv);
      }
    } else if (*init_cmd) {
      ModelConfig cfg = config_path.empty() ? ModelConfig{} : load_config(config_path).model;
      if (common.seed) cfg.seed = *common.seed;
      ModelWeights weights = ModelWeights::create(cfg);
      if (identity) make_identity(weights);
      save_checkpoint(weights, out_ckpt);
    }
    return 0;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
