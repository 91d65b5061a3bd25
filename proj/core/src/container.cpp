#include "gator/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "gator/error.hpp"

namespace gator {

namespace {

constexpr const char* kMagic = "GATOR-ARRAYS 1";

void put_double(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_double(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string encode_arrays(const ArrayMap& arrays) {
  std::ostringstream header;
  header << kMagic << "\n" << arrays.size() << "\n";
  std::size_t offset = 0;
  for (const auto& [name, tensor] : arrays) {
    if (name.empty() || name.find_first_of(" \t\n\r") != std::string::npos) {
      throw InvalidInput("array name '" + name + "' must be non-empty without whitespace");
    }
    header << name << " " << tensor.rank();
    for (std::size_t d : tensor.shape) header << " " << d;
    header << " " << offset << "\n";
    offset += tensor.size() * sizeof(double);
  }
  header << "DATA\n";
  std::string out = header.str();
  out.reserve(out.size() + offset);
  for (const auto& [name, tensor] : arrays) {
    for (double v : tensor.data) put_double(out, v);
  }
  return out;
}

ArrayMap decode_arrays(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) {
      throw InvalidInput("array container: truncated header at byte " + std::to_string(pos));
    }
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };
  if (next_line() != kMagic) throw InvalidInput("array container: bad magic at byte 0");
  std::size_t count = 0;
  {
    std::istringstream in(next_line());
    if (!(in >> count)) throw InvalidInput("array container: bad array count");
  }
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream in(next_line());
    Entry e;
    std::size_t rank = 0;
    if (!(in >> e.name >> rank)) throw InvalidInput("array container: bad header line " + std::to_string(k));
    e.shape.resize(rank);
    for (auto& d : e.shape) {
      if (!(in >> d)) throw InvalidInput("array container: bad shape for '" + e.name + "'");
    }
    if (!(in >> e.offset)) throw InvalidInput("array container: missing offset for '" + e.name + "'");
    entries.push_back(std::move(e));
  }
  if (next_line() != "DATA") throw InvalidInput("array container: missing DATA marker");
  const std::size_t data_start = pos;
  ArrayMap out;
  for (const Entry& e : entries) {
    const std::size_t n = shape_size(e.shape);
    const std::size_t begin = data_start + e.offset;
    if (begin + n * sizeof(double) > bytes.size()) {
      throw InvalidInput("array container: '" + e.name + "' truncated (needs bytes up to " +
                         std::to_string(begin + n * sizeof(double)) + ", file has " +
                         std::to_string(bytes.size()) + ")");
    }
    Tensor t(e.shape);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + begin);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = get_double(p + 8 * i);
    if (!out.emplace(e.name, std::move(t)).second) {
      throw InvalidInput("array container: duplicate array '" + e.name + "'");
    }
  }
  return out;
}

void save_arrays(const std::string& path, const ArrayMap& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write '" + path + "'");
  const std::string bytes = encode_arrays(arrays);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ArrayMap load_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return decode_arrays(buffer.str());
}

}  // namespace gator
