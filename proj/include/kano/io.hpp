#pragma once

// File formats: KANC cubes, 8-bit PNG, kernel CSV and model checkpoints.
//
// KANC layout (little-endian):
//   "KANC" | u8 version = 1 | u8 dtype = 0 (float32) | u16 reserved = 0 |
//   u32 C | u32 H | u32 W | C*H*W float32, index (c*H + h)*W + w

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "kano/degradation.hpp"
#include "kano/tensor.hpp"
#include "kano/training.hpp"
#include "kano/unfolding.hpp"

namespace kano {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CubeFormatError : public IoError {
 public:
  enum class Kind { BadMagic, UnsupportedVersion, UnsupportedDtype, Truncated, NonFinite, TooLarge };
  CubeFormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class PngError : public IoError {
 public:
  using IoError::IoError;
};

// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

std::string encode_cube(const Cube& cube);
Cube decode_cube(std::string_view bytes);
void write_cube(const std::filesystem::path& path, const Cube& cube);
Cube read_cube(const std::filesystem::path& path);

// 8-bit gray or RGB. Values are divided by 255 on read; writes clamp to
// [0, 1] and round half up.
Cube read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Cube& cube);

// k rows of k comma-separated decimals.
std::string kernel_csv(const Kernel& kernel);
void write_kernel_csv(const std::filesystem::path& path, const Kernel& kernel);
Kernel read_kernel_csv(const std::filesystem::path& path);

// Reads .kanc or .png by extension.
Cube read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Cube& cube);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  KanoModel model;
  TrainConfig train;
};

nlohmann::json checkpoint_json(const KanoModel& model, const TrainConfig& train);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::filesystem::path& path, const KanoModel& model, const TrainConfig& train);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kano
