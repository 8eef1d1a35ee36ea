#include "container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fpformant/error.hpp"

namespace fpf::container {

namespace {

void put_bytes(std::string& out, const void* p, std::size_t n) {
  out.append(static_cast<const char*>(p), n);
}

void put_u32(std::string& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_u64(std::string& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(out, b, 8);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& path, std::string data)
      : path_(path), data_(std::move(data)) {}

  void need(std::size_t n, const std::string& what) {
    if (pos_ + n > data_.size()) {
      throw IoError(path_ + ": truncated while reading " + what);
    }
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const std::string& what) {
    return std::bit_cast<double>(u64(what));
  }
  std::uint8_t u8(const std::string& what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_file(const std::string& path, const char* magic, const File& file) {
  if (std::strlen(magic) != 8) {
    throw ContractError("container: magic must be 8 characters");
  }
  std::string out;
  put_bytes(out, magic, 8);
  put_u32(out, file.version);
  put_u64(out, file.config_json.size());
  out += file.config_json;
  put_u64(out, file.records.size());
  for (const Record& rec : file.records) {
    put_u32(out, static_cast<std::uint32_t>(rec.name.size()));
    out += rec.name;
    out.push_back(static_cast<char>(rec.dtype));
    put_u32(out, static_cast<std::uint32_t>(rec.dims.size()));
    for (std::uint64_t d : rec.dims) put_u64(out, d);
    std::uint64_t n = rec.element_count();
    if (rec.dtype == kF64) {
      if (rec.f64.size() != n)
        throw ContractError("container: record '" + rec.name +
                            "' payload does not match dims");
      for (double v : rec.f64) put_f64(out, v);
    } else if (rec.dtype == kI64) {
      if (rec.i64.size() != n)
        throw ContractError("container: record '" + rec.name +
                            "' payload does not match dims");
      for (std::int64_t v : rec.i64)
        put_u64(out, static_cast<std::uint64_t>(v));
    } else {
      throw ContractError("container: record '" + rec.name +
                          "' has unknown dtype");
    }
  }

  std::ofstream stream(path, std::ios::binary | std::ios::trunc);
  if (!stream) throw IoError(path + ": cannot open for writing");
  stream.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!stream) throw IoError(path + ": write failed");
}

File read_file(const std::string& path, const char* magic) {
  std::ifstream stream(path, std::ios::binary);
  if (!stream) throw IoError(path + ": cannot open for reading");
  std::string data((std::istreambuf_iterator<char>(stream)),
                   std::istreambuf_iterator<char>());
  Reader r(path, std::move(data));

  std::string got_magic = r.bytes(8, "magic");
  if (got_magic != std::string(magic, 8)) {
    throw IoError(path + ": bad magic, not a " + std::string(magic, 8) +
                  " file");
  }
  File file;
  file.version = r.u32("version");
  if (file.version != kVersion) {
    throw IoError(path + ": unsupported format version " +
                  std::to_string(file.version));
  }
  std::uint64_t cfg_len = r.u64("config length");
  file.config_json = r.bytes(cfg_len, "config text");
  std::uint64_t n_records = r.u64("record count");
  for (std::uint64_t i = 0; i < n_records; ++i) {
    std::string where = "record " + std::to_string(i);
    Record rec;
    std::uint32_t name_len = r.u32(where + " name length");
    rec.name = r.bytes(name_len, where + " name");
    rec.dtype = r.u8(where + " dtype");
    if (rec.dtype != kF64 && rec.dtype != kI64) {
      throw IoError(path + ": " + where + " ('" + rec.name +
                    "') has unknown dtype tag " + std::to_string(rec.dtype));
    }
    std::uint32_t rank = r.u32(where + " rank");
    for (std::uint32_t d = 0; d < rank; ++d)
      rec.dims.push_back(r.u64(where + " dims"));
    std::uint64_t n = rec.element_count();
    if (rec.dtype == kF64) {
      rec.f64.reserve(n);
      for (std::uint64_t e = 0; e < n; ++e)
        rec.f64.push_back(r.f64(where + " payload"));
    } else {
      rec.i64.reserve(n);
      for (std::uint64_t e = 0; e < n; ++e)
        rec.i64.push_back(static_cast<std::int64_t>(r.u64(where + " payload")));
    }
    file.records.push_back(std::move(rec));
  }
  if (!r.at_end()) {
    throw IoError(path + ": trailing bytes after last record");
  }
  return file;
}

}  // namespace fpf::container
