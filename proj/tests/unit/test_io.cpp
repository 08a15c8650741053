#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include <png.h>

#include "rxm/checkpoint.hpp"
#include "rxm/config_file.hpp"
#include "rxm/error.hpp"
#include "rxm/image_io.hpp"

using namespace rxm;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / "rxm_io_test";
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Writes a PNG with libpng directly so colour types other than RGB can be produced.
void write_png(const fs::path& p, int width, int height, int color_type, int channels, std::uint8_t value) {
  FILE* f = std::fopen(p.c_str(), "wb");
  REQUIRE(f);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<std::uint8_t> row(static_cast<std::size_t>(width * channels), value);
  for (int y = 0; y < height; ++y) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

ImageErrorKind load_error(const fs::path& p) {
  try {
    load_image(p.string());
  } catch (const ImageError& e) {
    return e.kind();
  }
  FAIL("expected ImageError");
  return ImageErrorKind::unreadable;
}

ModelConfig small() {
  ModelConfig cfg;
  cfg.n_feat = 8;
  cfg.heads_base_width = 8;
  cfg.d_state_base = 4;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("byte mapping") {
  CHECK(to_byte(1.0f) == 255);
  CHECK(to_byte(0.0f) == 0);
  CHECK(to_byte(0.5f) == 128);
  CHECK(to_byte(-0.2f) == 0);
  CHECK(to_byte(1.7f) == 255);
  for (int v = 0; v < 256; ++v) CHECK(to_byte(static_cast<float>(v) / 255.0f) == v);
}

TEST_CASE("png round trip with padding") {
  const fs::path dir = scratch();
  write_png(dir / "white.png", 5, 3, PNG_COLOR_TYPE_RGB, 3, 255);
  const LoadedImage white = load_image((dir / "white.png").string());
  CHECK(white.height == 3);
  CHECK(white.width == 5);
  CHECK(white.tensor.shape() == Shape{1, 3, 4, 8});
  for (float v : white.tensor.data()) CHECK(v == 1.0f);

  Rng rng(1);
  for (auto [h, w] : {std::pair{7, 9}, std::pair{4, 4}, std::pair{1, 13}}) {
    Tensor img({1, 3, h, w});
    for (auto& v : img.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
    const auto a = dir / "a.png";
    save_image(img, a.string(), h, w);
    const LoadedImage loaded = load_image(a.string());
    CHECK(loaded.height == h);
    CHECK(loaded.width == w);
    CHECK(loaded.tensor.shape().h % 4 == 0);
    CHECK(loaded.tensor.shape().w % 4 == 0);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) CHECK(loaded.tensor.at(0, c, y, x) == img.at(0, c, y, x));
    // Padding replicates the last row / column.
    const auto& t = loaded.tensor;
    CHECK(t.at(0, 1, t.shape().h - 1, t.shape().w - 1) == img.at(0, 1, h - 1, w - 1));
    const auto b = dir / "b.png";
    save_image(loaded.tensor, b.string(), loaded.height, loaded.width);
    CHECK(read_bytes(a) == read_bytes(b));
  }
}

TEST_CASE("pad to multiple") {
  Rng rng(2);
  const Tensor x = Tensor::normal({1, 3, 5, 6}, 1.0f, rng);
  const Tensor p = pad_to_multiple(x, 4);
  CHECK(p.shape() == Shape{1, 3, 8, 8});
  CHECK(p.at(0, 2, 7, 7) == x.at(0, 2, 4, 5));
  CHECK(p.at(0, 0, 2, 6) == x.at(0, 0, 2, 5));
  CHECK(max_abs_diff(pad_to_multiple(p, 4), p) == 0.0);
}

TEST_CASE("image errors") {
  const fs::path dir = scratch();
  CHECK(load_error(dir / "missing.png") == ImageErrorKind::unreadable);
  write_bytes(dir / "text.png", {'h', 'e', 'l', 'l', 'o', ' ', 'w', 'o', 'r', 'l', 'd'});
  CHECK(load_error(dir / "text.png") == ImageErrorKind::not_png);
  write_png(dir / "rgba.png", 4, 4, PNG_COLOR_TYPE_RGBA, 4, 9);
  CHECK(load_error(dir / "rgba.png") == ImageErrorKind::not_rgb);
  write_png(dir / "gray.png", 4, 4, PNG_COLOR_TYPE_GRAY, 1, 9);
  CHECK(load_error(dir / "gray.png") == ImageErrorKind::not_rgb);
  write_png(dir / "full.png", 16, 16, PNG_COLOR_TYPE_RGB, 3, 9);
  auto bytes = read_bytes(dir / "full.png");
  bytes.resize(bytes.size() / 2);
  write_bytes(dir / "cut.png", bytes);
  CHECK(load_error(dir / "cut.png") == ImageErrorKind::corrupt);
  CHECK_THROWS_AS(save_image(Tensor({1, 3, 4, 4}), (dir / "no_dir" / "x.png").string(), 4, 4), ImageError);
}

TEST_CASE("checkpoint round trip") {
  const ModelWeights w = ModelWeights::create(small());
  const auto bytes = serialize_checkpoint(w);
  REQUIRE(bytes.size() > 8);
  CHECK(std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0);
  const ModelWeights back = deserialize_checkpoint(bytes);
  CHECK(back.config() == w.config());
  REQUIRE(back.params().size() == w.params().size());
  for (std::size_t i = 0; i < w.params().size(); ++i) {
    const Param& a = *w.params().all()[i];
    const Param& b = back.params().get(a.name);
    CHECK(std::memcmp(a.value.ptr(), b.value.ptr(), sizeof(float) * a.value.numel()) == 0);
  }
  CHECK(serialize_checkpoint(back) == bytes);

  const fs::path p = scratch() / "model.rxmb";
  save_checkpoint(w, p.string());
  CHECK(read_bytes(p) == bytes);
  CHECK(serialize_checkpoint(load_checkpoint(p.string())) == bytes);
  CHECK_THROWS_AS(load_checkpoint((scratch() / "absent.rxmb").string()), IoError);
}

TEST_CASE("checkpoint corruption") {
  const auto bytes = serialize_checkpoint(ModelWeights::create(small()));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bad_version), FormatError);
  for (std::size_t keep : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    try {
      deserialize_checkpoint(cut);
      FAIL("truncated checkpoint accepted");
    } catch (const FormatError&) {
      FAIL("truncation reported as a format error");
    } catch (const IoError&) {
    }
  }
}

TEST_CASE("config text") {
  RunConfig cfg;
  cfg.model = small();
  cfg.model.fusion = FusionMode::igmsa;
  cfg.model.ss2d_enabled = false;
  cfg.train.crop = 64;
  cfg.train.lr_max = 3e-4;
  cfg.train.hflip = false;
  const RunConfig back = parse_config(format_config(cfg));
  CHECK(back.model == cfg.model);
  CHECK(back.train.crop == 64);
  CHECK(back.train.lr_max == 3e-4);
  CHECK_FALSE(back.train.hflip);

  const RunConfig parsed = parse_config("# comment\nn_feat = 16\n\nseed = 9\n");
  CHECK(parsed.model.n_feat == 16);
  CHECK(parsed.model.seed == 9);
  CHECK(parsed.train.seed == 9);
  CHECK_THROWS_AS(parse_config("wings = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("n_feat = many\n"), ConfigError);
  CHECK_THROWS_AS(load_config((scratch() / "absent.cfg").string()), IoError);
}
