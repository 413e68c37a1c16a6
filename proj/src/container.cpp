#include "ltm/container.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ltm {

namespace {

constexpr char kMagic[] = "ltm-v1\n";
constexpr std::size_t kMagicSize = sizeof(kMagic) - 1;

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(const unsigned char* bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_container(const std::string& path, const Container& container) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(kMagic, kMagicSize);
  put_u64(out, container.header_json.size());
  out.write(container.header_json.data(), static_cast<std::streamsize>(container.header_json.size()));
  for (double p : container.params) put_u64(out, std::bit_cast<std::uint64_t>(p));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

Container read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kMagicSize + 8 || bytes.compare(0, kMagicSize, kMagic) != 0) {
    throw std::runtime_error("'" + path + "' is not an ltm-v1 container");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t header_len = get_u64(raw + kMagicSize);
  const std::size_t body = kMagicSize + 8;
  if (header_len > bytes.size() - body) throw std::runtime_error("truncated container header");
  Container c;
  c.header_json = bytes.substr(body, header_len);
  const std::size_t rest = bytes.size() - body - header_len;
  if (rest % 8 != 0) throw std::runtime_error("container parameter block is not a whole number of float64");
  c.params.resize(rest / 8);
  const unsigned char* p = raw + body + header_len;
  for (std::size_t i = 0; i < c.params.size(); ++i) c.params[i] = std::bit_cast<double>(get_u64(p + 8 * i));
  return c;
}

}  // namespace ltm
