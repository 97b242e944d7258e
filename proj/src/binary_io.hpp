#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include "mpresnet/error.hpp"

namespace mpresnet::detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class ByteWriter {
 public:
  void bytes(std::string_view b) { out_.append(b.data(), b.size()); }
  template <typename U>
  void pod(U v) {
    char buf[sizeof(U)];
    std::memcpy(buf, &v, sizeof(U));
    out_.append(buf, sizeof(U));
  }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

// Bounds-checked little-endian reader. Short reads raise TruncatedError with
// the total byte count the read needed versus what the buffer holds.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  void need(uint64_t n) const {
    if (n > remaining()) {
      throw TruncatedError(pos_ + n, data_.size(),
                           what_ + ": truncated, expected " + std::to_string(pos_ + n) + " bytes, got " +
                               std::to_string(data_.size()));
    }
  }

  std::string_view bytes(size_t n) {
    need(n);
    auto v = data_.substr(pos_, n);
    pos_ += n;
    return v;
  }

  template <typename U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, data_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  void expect_magic(std::string_view magic) {
    if (data_.size() < magic.size() || data_.substr(0, magic.size()) != magic) {
      throw BadMagicError(0, what_ + ": bad magic at offset 0, expected '" + std::string(magic) + "'");
    }
    pos_ = magic.size();
  }

 private:
  std::string_view data_;
  size_t pos_ = 0;
  std::string what_;
};

inline std::string read_file(const std::string& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io_error", "cannot open " + what + " '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes, const std::string& what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + what + " '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io_error", "failed writing " + what + " '" + path + "'");
}

}  // namespace mpresnet::detail
