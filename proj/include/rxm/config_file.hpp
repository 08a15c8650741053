#pragma once

#include <string>
#include <string_view>

#include "rxm/model.hpp"
#include "rxm/train.hpp"

namespace rxm {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Flat `key = value` lines; '#' starts a comment. Keys:
//   n_feat levels d_state_base d_state_fixed fusion ss2d_enabled heads_base_width
//   lr_max lr_min total_steps batch crop hflip vflip rot90 seed
// Absent keys keep their defaults; unknown keys and malformed values throw ConfigError.
// `seed` sets both the model initialisation seed and the training seed.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::string& path);

std::string format_config(const RunConfig& config);
// Model keys only (the checkpoint config block).
std::string format_model_config(const ModelConfig& config);

}  // namespace rxm
