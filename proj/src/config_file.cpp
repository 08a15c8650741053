#include "rxm/config_file.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rxm/error.hpp"

namespace rxm {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("invalid boolean '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const char* fmt_bool(bool v) { return v ? "true" : "false"; }

}  // namespace

RunConfig parse_config(std::string_view text, RunConfig base) {
  RunConfig cfg = std::move(base);
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key == "n_feat") cfg.model.n_feat = parse_number<std::int64_t>(key, value);
    else if (key == "levels") cfg.model.levels = parse_number<int>(key, value);
    else if (key == "d_state_base") cfg.model.d_state_base = parse_number<std::int64_t>(key, value);
    else if (key == "d_state_fixed") cfg.model.d_state_fixed = parse_bool(key, value);
    else if (key == "fusion") cfg.model.fusion = parse_fusion_mode(value);
    else if (key == "ss2d_enabled") cfg.model.ss2d_enabled = parse_bool(key, value);
    else if (key == "heads_base_width") cfg.model.heads_base_width = parse_number<std::int64_t>(key, value);
    else if (key == "seed") cfg.model.seed = cfg.train.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "lr_max") cfg.train.lr_max = parse_number<double>(key, value);
    else if (key == "lr_min") cfg.train.lr_min = parse_number<double>(key, value);
    else if (key == "total_steps") cfg.train.total_steps = parse_number<std::int64_t>(key, value);
    else if (key == "batch") cfg.train.batch_size = parse_number<std::int64_t>(key, value);
    else if (key == "crop") cfg.train.crop = parse_number<std::int64_t>(key, value);
    else if (key == "hflip") cfg.train.hflip = parse_bool(key, value);
    else if (key == "vflip") cfg.train.vflip = parse_bool(key, value);
    else if (key == "rot90") cfg.train.rot90 = parse_bool(key, value);
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + std::string(key) + "'");
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_model_config(const ModelConfig& c) {
  std::string out;
  out += "n_feat = " + std::to_string(c.n_feat) + "\n";
  out += "levels = " + std::to_string(c.levels) + "\n";
  out += "d_state_base = " + std::to_string(c.d_state_base) + "\n";
  out += std::string("d_state_fixed = ") + fmt_bool(c.d_state_fixed) + "\n";
  out += "fusion = " + to_string(c.fusion) + "\n";
  out += std::string("ss2d_enabled = ") + fmt_bool(c.ss2d_enabled) + "\n";
  out += "heads_base_width = " + std::to_string(c.heads_base_width) + "\n";
  out += "seed = " + std::to_string(c.seed) + "\n";
  return out;
}

std::string format_config(const RunConfig& c) {
  std::string out = format_model_config(c.model);
  out += "lr_max = " + fmt_double(c.train.lr_max) + "\n";
  out += "lr_min = " + fmt_double(c.train.lr_min) + "\n";
  out += "total_steps = " + std::to_string(c.train.total_steps) + "\n";
  out += "batch = " + std::to_string(c.train.batch_size) + "\n";
  out += "crop = " + std::to_string(c.train.crop) + "\n";
  out += std::string("hflip = ") + fmt_bool(c.train.hflip) + "\n";
  out += std::string("vflip = ") + fmt_bool(c.train.vflip) + "\n";
  out += std::string("rot90 = ") + fmt_bool(c.train.rot90) + "\n";
  return out;
}

}  // namespace rxm
