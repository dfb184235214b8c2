#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "isp/tensor.hpp"

namespace isp {

// ISPW weight file layout (all integers and floats little-endian):
//
//   "ISPW"                       4 magic bytes
//   u32 version                  kIspwVersion
//   u32 n, n bytes               config block: `key = value` text
//   u32 block_count
//   block_count times:
//     u32 n, n bytes             parameter name
//     u32 rank, rank x u64       shape
//     f64 x product(shape)       values, row-major
//
// Blocks appear in the owner's fixed named_parameters() order.

inline constexpr std::uint32_t kIspwVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct WeightFile {
  std::string config_text;
  NamedTensors blocks;

  /// Block by name; throws FormatError when missing.
  const Tensor& at(const std::string& name) const;
};

void write_ispw(std::ostream& out, const WeightFile& file);
WeightFile read_ispw(std::istream& in);

void save_ispw(const std::filesystem::path& path, const WeightFile& file);
WeightFile load_ispw(const std::filesystem::path& path);

/// In-memory ISPW encoding, used for byte comparisons.
std::string ispw_bytes(const WeightFile& file);

}  // namespace isp
