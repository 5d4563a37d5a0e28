#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "kdream/error.hpp"

namespace kdream::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string str() {
    auto n = get<std::uint32_t>();
    return std::string(bytes(n));
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n)
      throw Error(ErrorKind::kFormat, "truncated file: need " + std::to_string(n) + " bytes at offset " +
                                          std::to_string(pos_) + ", have " + std::to_string(data_.size() - pos_));
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Tensor block: u8 element width (4 or 8), u32 rank, u32 dims, then values.
void write_block(Writer& w, const std::vector<std::size_t>& shape, const std::vector<double>& values, int width = 8);
std::vector<double> read_block(Reader& r, std::vector<std::size_t>& shape);

void expect_magic(Reader& r, std::string_view magic, std::uint16_t version);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view data);

}  // namespace kdream::binio
