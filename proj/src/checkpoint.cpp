#include "isp/checkpoint.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace isp {

namespace {

constexpr std::array<char, 4> kMagic{'I', 'S', 'P', 'W'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw FormatError(std::string("ISPW: truncated while reading ") + what);
  }
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void put_string(std::ostream& out, const std::string& s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const char* what) {
  const auto n = get_le<std::uint32_t>(in, what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw FormatError(std::string("ISPW: truncated ") + what);
  return s;
}

}  // namespace

const Tensor& WeightFile::at(const std::string& name) const {
  for (const auto& [key, tensor] : blocks) {
    if (key == name) return tensor;
  }
  throw FormatError("ISPW: missing parameter block `" + name + "`");
}

void write_ispw(std::ostream& out, const WeightFile& file) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kIspwVersion);
  put_string(out, file.config_text);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.blocks.size()));
  for (const auto& [name, tensor] : file.blocks) {
    put_string(out, name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t dim : tensor.shape()) put_le<std::uint64_t>(out, dim);
    for (double v : tensor.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw FormatError("ISPW: write failed");
}

WeightFile read_ispw(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw FormatError("ISPW: bad magic bytes");
  }
  const auto version = get_le<std::uint32_t>(in, "version");
  if (version != kIspwVersion) {
    throw FormatError("ISPW: unsupported format version " + std::to_string(version));
  }
  WeightFile file;
  file.config_text = get_string(in, "config block");
  const auto count = get_le<std::uint32_t>(in, "block count");
  for (std::uint32_t b = 0; b < count; ++b) {
    std::string name = get_string(in, "block name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& dim : shape) {
      dim = static_cast<std::size_t>(get_le<std::uint64_t>(in, "shape"));
      n *= dim;
    }
    std::vector<double> data(n);
    for (double& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in, "values"));
    file.blocks.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return file;
}

void save_ispw(const std::filesystem::path& path, const WeightFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("ISPW: cannot open " + path.string() + " for writing");
  write_ispw(out, file);
}

WeightFile load_ispw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("ISPW: cannot open " + path.string());
  return read_ispw(in);
}

std::string ispw_bytes(const WeightFile& file) {
  std::ostringstream out(std::ios::binary);
  write_ispw(out, file);
  return out.str();
}

}  // namespace isp
