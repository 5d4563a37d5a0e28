#include "kdream/binio.hpp"

#include <fstream>
#include <sstream>

namespace kdream::binio {

void write_block(Writer& w, const std::vector<std::size_t>& shape, const std::vector<double>& values, int width) {
  if (width != 4 && width != 8) throw Error(ErrorKind::kInvalidArgument, "tensor block width must be 4 or 8");
  w.put<std::uint8_t>(static_cast<std::uint8_t>(width));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (double v : values) {
    if (width == 8)
      w.put<double>(v);
    else
      w.put<float>(static_cast<float>(v));
  }
}

std::vector<double> read_block(Reader& r, std::vector<std::size_t>& shape) {
  const auto width = r.get<std::uint8_t>();
  if (width != 4 && width != 8) throw Error(ErrorKind::kFormat, "bad tensor block width " + std::to_string(width));
  const auto rank = r.get<std::uint32_t>();
  if (rank > 8) throw Error(ErrorKind::kFormat, "bad tensor block rank " + std::to_string(rank));
  shape.assign(rank, 0);
  std::size_t count = 1;
  for (auto& d : shape) {
    d = r.get<std::uint32_t>();
    count *= d;
  }
  if (count * width > r.remaining()) throw Error(ErrorKind::kFormat, "truncated tensor block");
  std::vector<double> values(count);
  for (auto& v : values) v = width == 8 ? r.get<double>() : static_cast<double>(r.get<float>());
  return values;
}

void expect_magic(Reader& r, std::string_view magic, std::uint16_t version) {
  if (r.remaining() < magic.size() || r.bytes(magic.size()) != magic)
    throw Error(ErrorKind::kFormat, "bad magic: expected " + std::string(magic));
  const auto v = r.get<std::uint16_t>();
  if (v != version)
    throw Error(ErrorKind::kFormat, "unsupported " + std::string(magic) + " version " + std::to_string(v) +
                                        " (expected " + std::to_string(version) + ")");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path);
}

}  // namespace kdream::binio
