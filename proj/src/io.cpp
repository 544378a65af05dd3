#include "kano/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <unistd.h>

#include "kano/config.hpp"

using nlohmann::json;

namespace kano {

namespace fs = std::filesystem;

void atomic_write(const fs::path& path, std::string_view bytes) {
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at '" + path.string() + "'");
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---- KANC ----------------------------------------------------------------------

namespace {

constexpr std::size_t kHeaderSize = 20;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[at + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_cube(const Cube& cube) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (cube.channels() > kMax || cube.height() > kMax || cube.width() > kMax) {
    throw CubeFormatError(CubeFormatError::Kind::TooLarge, "cube dimensions exceed the format limit");
  }
  std::string s = "KANC";
  s.push_back(1);
  s.push_back(0);
  s.push_back(0);
  s.push_back(0);
  put_u32(s, static_cast<std::uint32_t>(cube.channels()));
  put_u32(s, static_cast<std::uint32_t>(cube.height()));
  put_u32(s, static_cast<std::uint32_t>(cube.width()));
  s.reserve(s.size() + 4 * cube.size());
  for (double v : cube.values()) {
    const auto f = static_cast<float>(v);
    if (!std::isfinite(f)) throw CubeFormatError(CubeFormatError::Kind::NonFinite, "cube holds a non-finite value");
    put_u32(s, std::bit_cast<std::uint32_t>(f));
  }
  return s;
}

Cube decode_cube(std::string_view bytes) {
  using Kind = CubeFormatError::Kind;
  if (bytes.size() < 4 || bytes.substr(0, 4) != "KANC") throw CubeFormatError(Kind::BadMagic, "bad magic: not a KANC file");
  if (bytes.size() < kHeaderSize) throw CubeFormatError(Kind::Truncated, "truncated header");
  if (bytes[4] != 1) throw CubeFormatError(Kind::UnsupportedVersion, "unsupported KANC version " + std::to_string(static_cast<int>(bytes[4])));
  if (bytes[5] != 0) throw CubeFormatError(Kind::UnsupportedDtype, "unsupported KANC dtype " + std::to_string(static_cast<int>(bytes[5])));
  const std::uint64_t c = get_u32(bytes, 8), h = get_u32(bytes, 12), w = get_u32(bytes, 16);
  const std::uint64_t n = c * h * w;
  if (c == 0 || h == 0 || w == 0) throw CubeFormatError(Kind::Truncated, "truncated: zero-sized dimension in header");
  if (n > (bytes.size() - kHeaderSize) / 4 || bytes.size() - kHeaderSize != 4 * n) {
    throw CubeFormatError(Kind::Truncated, "truncated payload: header says " + std::to_string(n) + " values, file holds " +
                                               std::to_string((bytes.size() - kHeaderSize) / 4));
  }
  std::vector<double> values(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const float f = std::bit_cast<float>(get_u32(bytes, kHeaderSize + 4 * i));
    if (!std::isfinite(f)) throw CubeFormatError(Kind::NonFinite, "non-finite value at index " + std::to_string(i));
    values[i] = f;
  }
  return Cube(c, h, w, std::move(values));
}

void write_cube(const fs::path& path, const Cube& cube) { atomic_write(path, encode_cube(cube)); }

Cube read_cube(const fs::path& path) { return decode_cube(read_file(path)); }

// ---- PNG -----------------------------------------------------------------------

namespace {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngWriteGuard() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

struct MemReader {
  const std::string* data;
  std::size_t pos;
};

void read_mem(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->data->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, r->data->data() + r->pos, n);
  r->pos += n;
}

void write_mem(png_structp png, png_bytep in, png_size_t n) {
  static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(in), n);
}

void flush_mem(png_structp) {}

void on_png_error(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

}  // namespace

Cube read_png(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw PngError("'" + path.string() + "' is not a PNG file");
  }
  std::string err;
  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  if (!g.png) throw PngError("png_create_read_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw PngError("png_create_info_struct failed");
  MemReader reader{&bytes, 0};
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int depth = 0, color = 0, channels = 0;
  if (setjmp(png_jmpbuf(g.png))) throw PngError("cannot decode '" + path.string() + "': " + err);
  png_set_read_fn(g.png, &reader, read_mem);
  png_read_info(g.png, g.info);
  png_get_IHDR(g.png, g.info, &width, &height, &depth, &color, nullptr, nullptr, nullptr);
  if (depth != 8) {
    throw PngError("unsupported PNG bit depth " + std::to_string(depth) + " (only 8-bit gray or RGB)");
  }
  if (color == PNG_COLOR_TYPE_GRAY) {
    channels = 1;
  } else if (color == PNG_COLOR_TYPE_RGB) {
    channels = 3;
  } else {
    throw PngError("unsupported PNG color type (only 8-bit gray or RGB, no palette or alpha)");
  }
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) throw PngError("unsupported PNG transparency chunk");
  const std::size_t stride = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 i = 0; i < height; ++i) rows[i] = pixels.data() + i * stride;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);

  const auto C = static_cast<std::size_t>(channels);
  Cube out(C, height, width);
  for (std::size_t i = 0; i < height; ++i)
    for (std::size_t j = 0; j < width; ++j)
      for (std::size_t c = 0; c < C; ++c) out.at(c, i, j) = pixels[i * stride + j * C + c] / 255.0;
  return out;
}

void write_png(const fs::path& path, const Cube& cube) {
  const std::size_t C = cube.channels();
  if (C != 1 && C != 3) throw PngError("PNG output needs 1 or 3 channels, cube has " + std::to_string(C));
  if (cube.height() == 0 || cube.width() == 0) throw PngError("cannot write an empty image");
  const std::size_t H = cube.height(), W = cube.width(), stride = W * C;
  std::vector<unsigned char> pixels(stride * H);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::clamp(cube.at(c, i, j), 0.0, 1.0);
        pixels[i * stride + j * C + c] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
      }
  std::vector<png_bytep> rows(H);
  for (std::size_t i = 0; i < H; ++i) rows[i] = pixels.data() + i * stride;

  std::string encoded, err;
  {
    PngWriteGuard g;
    g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
    if (!g.png) throw PngError("png_create_write_struct failed");
    g.info = png_create_info_struct(g.png);
    if (!g.info) throw PngError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(g.png))) throw PngError("cannot encode PNG: " + err);
    png_set_write_fn(g.png, &encoded, write_mem, flush_mem);
    png_set_IHDR(g.png, g.info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), 8,
                 C == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(g.png, g.info);
    png_write_image(g.png, rows.data());
    png_write_end(g.png, nullptr);
  }
  atomic_write(path, encoded);
}

// ---- kernel CSV ------------------------------------------------------------------

std::string kernel_csv(const Kernel& kernel) {
  std::string s;
  const std::size_t k = kernel.size();
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      if (c) s += ',';
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", kernel.at(r, c));
      s += buf;
    }
    s += '\n';
  }
  return s;
}

void write_kernel_csv(const fs::path& path, const Kernel& kernel) { atomic_write(path, kernel_csv(kernel)); }

Kernel read_kernel_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        values.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw IoError("kernel CSV '" + path.string() + "': bad number '" + cell + "'");
      }
      ++n;
    }
    if (rows == 0) cols = n;
    if (n != cols) throw IoError("kernel CSV '" + path.string() + "': ragged rows");
    ++rows;
  }
  if (rows == 0 || rows != cols) throw IoError("kernel CSV '" + path.string() + "': expected a square k x k table");
  try {
    return Kernel(rows, std::move(values));
  } catch (const std::invalid_argument& e) {
    throw IoError("kernel CSV '" + path.string() + "': " + e.what());
  }
}

Cube read_image(const fs::path& path) {
  return path.extension() == ".png" ? read_png(path) : read_cube(path);
}

void write_image(const fs::path& path, const Cube& cube) {
  if (path.extension() == ".png") {
    write_png(path, cube);
  } else {
    write_cube(path, cube);
  }
}

// ---- checkpoints -----------------------------------------------------------------

json checkpoint_json(const KanoModel& model, const TrainConfig& train) {
  json j;
  j["format"] = "kano-checkpoint";
  j["version"] = kCheckpointVersion;
  j["model"] = to_json(model.config());
  j["train"] = to_json(train);
  json gammas = json::array();
  for (std::size_t t = 0; t < model.config().stages; ++t) {
    gammas.push_back({model.gamma(t, 0), model.gamma(t, 1), model.gamma(t, 2)});
  }
  j["gammas"] = gammas;
  json params = json::array();
  const auto names = model.parameter_names();
  const auto tensors = model.parameters();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    params.push_back({{"name", names[i]}, {"shape", tensors[i]->shape}, {"data", tensors[i]->data}});
  }
  j["parameters"] = params;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (!j.is_object() || j.value("format", "") != "kano-checkpoint") throw IoError("not a kano checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw IoError("unsupported checkpoint version " + j.at("version").dump());
    }
    Checkpoint ck;
    ck.train = train_config_from_json(j.at("train"));
    ck.model = KanoModel(model_config_from_json(j.at("model")));
    const auto names = ck.model.parameter_names();
    auto tensors = ck.model.parameters();
    const json& params = j.at("parameters");
    if (!params.is_array() || params.size() != tensors.size()) {
      throw IoError("checkpoint parameter count does not match the model configuration");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const json& p = params[i];
      if (p.at("name").get<std::string>() != names[i]) {
        throw IoError("checkpoint parameter " + std::to_string(i) + " is '" + p.at("name").get<std::string>() +
                      "', expected '" + names[i] + "'");
      }
      Tensor t(p.at("shape").get<Shape>(), p.at("data").get<std::vector<double>>());
      if (!t.same_shape(*tensors[i])) throw IoError("checkpoint parameter '" + names[i] + "' has the wrong shape");
      if (!t.all_finite()) throw IoError("checkpoint parameter '" + names[i] + "' is not finite");
      *tensors[i] = std::move(t);
    }
    return ck;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw IoError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const fs::path& path, const KanoModel& model, const TrainConfig& train) {
  atomic_write(path, checkpoint_json(model, train).dump(1) + "\n");
}

Checkpoint load_checkpoint(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw IoError("checkpoint '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace kano
