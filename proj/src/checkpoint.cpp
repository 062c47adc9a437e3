#include "conda/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "conda/errors.hpp"

namespace conda {

namespace {

constexpr char kMagic[4] = {'C', 'N', 'D', 'A'};
constexpr uint16_t kVersion = 1;

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff);
  }
  write_bytes(os, buf, sizeof(T));
}

void read_bytes(std::istream& is, void* p, size_t n, const std::string& what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw DataError("checkpoint truncated while reading " + what);
  }
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  unsigned char buf[sizeof(T)];
  read_bytes(is, buf, sizeof(T), what);
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void save_checkpoint(const std::string& path, const std::map<std::string, Tensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_bytes(os, kMagic, 4);
  write_le<uint16_t>(os, kVersion);
  write_le<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw DataError("checkpoint tensor name too long: " + name);
    write_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
    write_bytes(os, name.data(), name.size());
    if (t.rank() > 0xff) throw DataError("checkpoint tensor rank too large: " + name);
    write_le<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (size_t d : t.shape) write_le<uint64_t>(os, static_cast<uint64_t>(d));
    for (double x : t.data) {
      float f = static_cast<float>(x);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      write_le<uint32_t>(os, bits);
    }
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad checkpoint magic: " + path);
  uint16_t version = read_le<uint16_t>(is, "version");
  if (version != kVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
  }
  uint32_t count = read_le<uint32_t>(is, "tensor count");
  std::map<std::string, Tensor> out;
  for (uint32_t k = 0; k < count; ++k) {
    uint16_t name_len = read_le<uint16_t>(is, "name length");
    std::string name(name_len, '\0');
    read_bytes(is, name.data(), name_len, "name");
    uint8_t rank = read_le<uint8_t>(is, "rank");
    std::vector<size_t> shape(rank);
    for (uint8_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<size_t>(read_le<uint64_t>(is, "dims of " + name));
    }
    Tensor t(shape);
    for (size_t i = 0; i < t.numel(); ++i) {
      uint32_t bits = read_le<uint32_t>(is, "data of " + name);
      float f;
      std::memcpy(&f, &bits, 4);
      t.data[i] = static_cast<double>(f);
    }
    if (out.count(name)) throw DataError("duplicate tensor in checkpoint: " + name);
    out[name] = std::move(t);
  }
  return out;
}

}  // namespace conda
