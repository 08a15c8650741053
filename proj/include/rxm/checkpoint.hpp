#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rxm/model.hpp"

namespace rxm {

// Binary layout, all integers little-endian uint32:
//   "RXMB" | version | config length | config text (key = value lines)
//   | entry count | entries...
// entry: name length | name bytes | rank (4) | dims[rank] | float32 LE data
inline constexpr char kCheckpointMagic[4] = {'R', 'X', 'M', 'B'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ModelWeights& weights);
// Throws FormatError on unknown magic or version, IoError on truncation or
// entries that do not match the architecture described by the config block.
ModelWeights deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelWeights& weights, const std::string& path);
ModelWeights load_checkpoint(const std::string& path);

}  // namespace rxm
