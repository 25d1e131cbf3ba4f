#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace carf {

// Single-file container of named f64 tensors: magic "CARF", format version,
// then one record per tensor (name, rank, dims, raw little-endian values).
// Model parameters, optimizer moments, and bit-packed RNG state all ride in
// the same container under reserved name prefixes.
namespace checkpoint {

constexpr uint32_t kFormatVersion = 1;
constexpr char kMagic[4] = {'C', 'A', 'R', 'F'};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save(const std::string& path, const NamedTensors& items);
NamedTensors load(const std::string& path);  // rejects bad magic / other versions

const Tensor& find(const NamedTensors& items, const std::string& name);
bool contains(const NamedTensors& items, const std::string& name);

}  // namespace checkpoint

}  // namespace carf
