#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>

#include "doctest.h"
#include "kano/config.hpp"
#include "kano/io.hpp"
#include "test_support.hpp"

using namespace kano;
using namespace kano::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "kano_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_png16(const fs::path& path) {
  FILE* f = std::fopen(path.string().c_str(), "wb");
  REQUIRE(f != nullptr);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, 2, 2, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_byte row[4] = {0x12, 0x34, 0x56, 0x78};
  png_write_row(png, row);
  png_write_row(png, row);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

CubeFormatError::Kind decode_kind(const std::string& bytes) {
  try {
    decode_cube(bytes);
  } catch (const CubeFormatError& e) {
    return e.kind();
  }
  FAIL("expected CubeFormatError");
  return CubeFormatError::Kind::BadMagic;
}

}  // namespace

TEST_CASE("KANC round trip and header layout") {
  std::mt19937_64 rng(1);
  Cube c = random_cube(3, 5, 7, rng, -2.0, 2.0);
  for (auto& v : c.values()) v = static_cast<float>(v);  // exactly representable
  const auto bytes = encode_cube(c);
  REQUIRE(bytes.size() == 20 + 4 * c.size());
  CHECK(bytes.substr(0, 4) == "KANC");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data() + 8, 12);
  CHECK(dims[0] == 3);
  CHECK(dims[1] == 5);
  CHECK(dims[2] == 7);
  CHECK(decode_cube(bytes) == c);

  const auto path = scratch("cube.kanc");
  write_cube(path, c);
  CHECK(read_cube(path) == c);
  CHECK(read_image(path) == c);
}

TEST_CASE("KANC typed errors") {
  Cube c(1, 2, 2, 0.5);
  const auto good = encode_cube(c);
  auto bad = good;
  bad[0] = 'X';
  CHECK(decode_kind(bad) == CubeFormatError::Kind::BadMagic);
  bad = good;
  bad[4] = 2;
  CHECK(decode_kind(bad) == CubeFormatError::Kind::UnsupportedVersion);
  bad = good;
  bad[5] = 1;
  CHECK(decode_kind(bad) == CubeFormatError::Kind::UnsupportedDtype);
  CHECK(decode_kind(good.substr(0, good.size() - 1)) == CubeFormatError::Kind::Truncated);
  CHECK(decode_kind(good.substr(0, 10)) == CubeFormatError::Kind::Truncated);
  CHECK(decode_kind(good + "xxxx") == CubeFormatError::Kind::Truncated);
  bad = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + 20, &nan, 4);
  CHECK(decode_kind(bad) == CubeFormatError::Kind::NonFinite);
  CHECK_THROWS_AS(read_cube(scratch("missing.kanc")), IoError);
}

TEST_CASE("PNG ingestion and lossless round trip") {
  const auto gray = scratch("gray.png");
  write_png(gray, Cube(1, 3, 4, 128.0 / 255.0));
  const auto g = read_png(gray);
  REQUIRE(g.channels() == 1);
  for (double v : g.values()) CHECK(v == 128.0 / 255.0);

  std::mt19937_64 rng(2);
  const auto rgb = scratch("rgb.png");
  write_png(rgb, random_cube(3, 9, 6, rng));
  const auto first = read_file(rgb);
  const auto again = scratch("rgb2.png");
  write_png(again, read_png(rgb));
  CHECK(read_file(again) == first);

  // half-up rounding and clamping
  Cube edge(1, 1, 4, std::vector<double>{-0.2, 0.5 / 255.0, 1.5 / 255.0, 1.7});
  const auto ep = scratch("edge.png");
  write_png(ep, edge);
  const auto back = read_png(ep);
  CHECK(back.values()[0] == 0.0);
  CHECK(back.values()[1] == 1.0 / 255.0);
  CHECK(back.values()[2] == 2.0 / 255.0);
  CHECK(back.values()[3] == 1.0);

  const auto deep = scratch("deep.png");
  write_png16(deep);
  CHECK_THROWS_AS(read_png(deep), PngError);
  CHECK_THROWS_AS(write_png(scratch("two.png"), Cube(2, 2, 2)), PngError);
  CHECK_THROWS_AS(read_png(scratch("rgb.kanc.nope")), IoError);
}

TEST_CASE("kernel CSV round trip") {
  const auto k = gaussian_kernel(11, 2.3, 0.8, 0.4);
  const auto path = scratch("k.csv");
  write_kernel_csv(path, k);
  CHECK(read_kernel_csv(path) == k);
  const auto text = kernel_csv(Kernel::delta(3));
  CHECK(text == "0,0,0\n0,1,0\n0,0,0\n");
}

TEST_CASE("atomic writes leave no temporary files") {
  const auto dir = scratch("atomic");
  fs::remove_all(dir);
  fs::create_directories(dir);
  atomic_write(dir / "a.txt", "hello");
  atomic_write(dir / "a.txt", "world");
  CHECK(read_file(dir / "a.txt") == "world");
  std::size_t n = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++n;
  CHECK(n == 1);
  CHECK_THROWS_AS(atomic_write(dir / "no" / "such" / "dir.txt", "x"), IoError);
}

TEST_CASE("checkpoint round trip reproduces inference bit for bit") {
  TrainConfig tc;
  tc.model.kernel_size = 5;
  tc.data.kernel_size = 5;
  tc.model.stages = 2;
  tc.model.backbone = Backbone::Mlp;
  tc.steps = 17;
  KanoModel m(tc.model);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.05);
  for (auto* p : m.parameters())
    for (auto& v : p->data) v += n(rng);
  const auto path = scratch("model.ckpt");
  save_checkpoint(path, m, tc);
  const auto ck = load_checkpoint(path);
  CHECK(ck.train.steps == 17);
  CHECK(ck.model.config().backbone == Backbone::Mlp);
  const auto a = m.parameters();
  const auto b = std::as_const(ck.model).parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i]->data == b[i]->data);

  const auto y = random_cube(3, 6, 6, rng);
  const auto r1 = run_unfolding(y, m, 2, 5);
  const auto r2 = run_unfolding(y, ck.model, 2, 5);
  CHECK(r1.back().image == r2.back().image);
  CHECK(r1.back().kernel == r2.back().kernel);

  auto j = checkpoint_json(m, tc);
  CHECK(j["format"] == "kano-checkpoint");
  j["version"] = 99;
  CHECK_THROWS(checkpoint_from_json(j));
  j = checkpoint_json(m, tc);
  j["parameters"][0]["data"] = nlohmann::json::array();
  CHECK_THROWS(checkpoint_from_json(j));
}

TEST_CASE("strict JSON configuration") {
  const auto base = train_config_from_json(nlohmann::json::object());
  CHECK(base.steps == TrainConfig{}.steps);
  const auto c = train_config_from_json(nlohmann::json::parse(R"({"steps": 10, "model": {"stages": 2, "backbone": "mlp"}})"));
  CHECK(c.steps == 10);
  CHECK(c.model.stages == 2);
  CHECK(c.model.backbone == Backbone::Mlp);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"stepz": 10})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"steps": -1})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"steps": "10"})")), ConfigError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::parse(R"({"model": {"kernel_size": 4}})")), ConfigError);
  CHECK_THROWS_AS(degradation_from_json(nlohmann::json::parse(R"({"noise": -1})")), ConfigError);

  // to_json / from_json are inverse
  TrainConfig t;
  t.seed = 42;
  t.model.grid.intervals = 7;
  const auto round = train_config_from_json(to_json(t));
  CHECK(to_json(round) == to_json(t));
  CHECK_THROWS_AS(load_json_file(scratch("nope.json").string()), ConfigError);
}
