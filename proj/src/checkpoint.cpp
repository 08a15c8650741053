#include "rxm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rxm/config_file.hpp"
#include "rxm/error.hpp"

namespace rxm {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    const auto b = take(4);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string text(std::size_t n) {
    const auto b = take(n);
    return std::string(b.begin(), b.end());
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelWeights& weights) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  const std::string config = format_model_config(weights.config());
  put_u32(out, static_cast<std::uint32_t>(config.size()));
  out.insert(out.end(), config.begin(), config.end());
  const auto& params = weights.params().all();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out.insert(out.end(), p->name.begin(), p->name.end());
    const Shape s = p->value.shape();
    put_u32(out, 4);
    for (int axis = 0; axis < 4; ++axis) put_u32(out, static_cast<std::uint32_t>(s[axis]));
    for (float v : p->value.data()) put_f32(out, v);
  }
  return out;
}

ModelWeights deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
    throw FormatError("not a checkpoint: bad magic");
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const RunConfig cfg = parse_config(in.text(in.u32()));
  ModelWeights weights = ModelWeights::create(cfg.model);
  ParamSet& params = weights.params();

  const std::uint32_t count = in.u32();
  if (count != params.size()) {
    throw IoError("checkpoint holds " + std::to_string(count) + " tensors, architecture expects " +
                  std::to_string(params.size()));
  }
  std::vector<bool> seen(params.size(), false);
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::string name = in.text(in.u32());
    Param* p = params.find(name);
    if (!p) throw IoError("checkpoint tensor '" + name + "' is not part of the architecture");
    const std::uint32_t rank = in.u32();
    if (rank != 4) throw IoError("checkpoint tensor '" + name + "' has rank " + std::to_string(rank));
    Shape s;
    s.n = in.u32();
    s.c = in.u32();
    s.h = in.u32();
    s.w = in.u32();
    if (s != p->value.shape()) {
      throw IoError("checkpoint tensor '" + name + "' has shape " + s.str() + ", expected " + p->value.shape().str());
    }
    for (auto& v : p->value.data()) v = in.f32();
    const auto index = static_cast<std::size_t>(
        std::find_if(params.all().begin(), params.all().end(), [&](const auto& q) { return q.get() == p; }) -
        params.all().begin());
    if (seen[index]) throw IoError("checkpoint tensor '" + name + "' appears twice");
    seen[index] = true;
  }
  if (!in.done()) throw IoError("trailing bytes after checkpoint entries");
  return weights;
}

void save_checkpoint(const ModelWeights& weights, const std::string& path) {
  const auto bytes = serialize_checkpoint(weights);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

ModelWeights load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace rxm
