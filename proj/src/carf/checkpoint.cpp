#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace carf {
namespace checkpoint {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace {

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path, const char* what) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw_io("checkpoint: truncated file while reading " + std::string(what) + ": " + path);
  return v;
}

}  // namespace

void save(const std::string& path, const NamedTensors& items) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io("checkpoint: cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_pod<uint32_t>(out, kFormatVersion);
  for (const auto& [name, tensor] : items) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<uint32_t>(out, static_cast<uint32_t>(tensor.shape.size()));
    for (int64_t d : tensor.shape) write_pod<uint64_t>(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(tensor.data.data()),
              static_cast<std::streamsize>(tensor.data.size() * sizeof(double)));
  }
  if (!out) throw_io("checkpoint: write failed: " + path);
}

NamedTensors load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("checkpoint: cannot open: " + path);

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw_io("checkpoint: bad magic, not a checkpoint file: " + path);
  const auto version = read_pod<uint32_t>(in, path, "version");
  if (version != kFormatVersion)
    throw_io("checkpoint: format version " + std::to_string(version) + " unsupported (expected " +
             std::to_string(kFormatVersion) + "): " + path);

  NamedTensors items;
  for (;;) {
    uint32_t name_len;
    in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (in.eof()) break;
    if (!in) throw_io("checkpoint: truncated record header: " + path);
    if (name_len > 4096) throw_io("checkpoint: implausible name length, corrupt file: " + path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw_io("checkpoint: truncated name: " + path);
    const auto rank = read_pod<uint32_t>(in, path, "rank");
    if (rank > 8) throw_io("checkpoint: implausible rank, corrupt file: " + path);
    std::vector<int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<int64_t>(read_pod<uint64_t>(in, path, "dims"));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw_io("checkpoint: truncated values for tensor '" + name + "': " + path);
    items.emplace_back(std::move(name), std::move(t));
  }
  return items;
}

const Tensor& find(const NamedTensors& items, const std::string& name) {
  for (const auto& [n, t] : items)
    if (n == name) return t;
  throw_io("checkpoint: tensor '" + name + "' missing from container");
}

bool contains(const NamedTensors& items, const std::string& name) {
  for (const auto& [n, t] : items)
    if (n == name) return true;
  return false;
}

}  // namespace checkpoint
}  // namespace carf
