#pragma once

// Internal versioned binary container shared by corpus and checkpoint files.
// Layout (all integers little-endian):
//   magic      8 bytes (fixed per file kind)
//   version    u32
//   config     u64 length + UTF-8 JSON bytes
//   n_records  u64
//   records    name (u32 length + bytes), dtype u8 (0=f64, 1=i64),
//              rank u32, dims u64 each, payload (8 bytes per element)

#include <cstdint>
#include <string>
#include <vector>

namespace fpf::container {

constexpr std::uint8_t kF64 = 0;
constexpr std::uint8_t kI64 = 1;
constexpr std::uint32_t kVersion = 1;

struct Record {
  std::string name;
  std::uint8_t dtype = kF64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;
  std::vector<std::int64_t> i64;

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) n *= d;
    return n;
  }
};

struct File {
  std::uint32_t version = kVersion;
  std::string config_json;
  std::vector<Record> records;
};

/// Magic must be exactly 8 characters.
void write_file(const std::string& path, const char* magic, const File& file);

/// Throws IoError naming the failing record on malformed input, wrong magic,
/// or unsupported version.
File read_file(const std::string& path, const char* magic);

}  // namespace fpf::container
