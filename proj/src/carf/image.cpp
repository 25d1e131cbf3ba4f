#include "image.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "common.hpp"

namespace carf {

static_assert(std::endian::native == std::endian::little,
              "raw f32 dumps assume a little-endian host");

namespace {

void write_pgm_header(std::ofstream& f, int w, int h) {
  f << "P5\n" << w << " " << h << "\n255\n";
}

void read_pgm_header(std::ifstream& f, const std::string& path, int& w, int& h) {
  std::string magic;
  f >> magic;
  if (magic != "P5") throw_io("pgm: not a binary PGM (P5): " + path);
  int maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w < 1 || h < 1) throw_io("pgm: bad header: " + path);
  if (maxval != 255) throw_io("pgm: expected maxval 255: " + path);
  f.get();  // single whitespace before raster
}

}  // namespace

void save_mask_pgm(const Mask& mask, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("mask: cannot open for writing: " + path);
  write_pgm_header(f, mask.width, mask.height);
  std::vector<uint8_t> raw(mask.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = mask.data[i] ? 255 : 0;
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw_io("mask: write failed: " + path);
}

Mask load_mask_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("mask: cannot open: " + path);
  int w = 0, h = 0;
  read_pgm_header(f, path, w, h);
  Mask mask(w, h);
  std::vector<uint8_t> raw(mask.data.size());
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw_io("mask: truncated raster: " + path);
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] != 0 && raw[i] != 255)
      throw_validation("mask: pixel value " + std::to_string(raw[i]) +
                       " is not binary ({0,255}): " + path);
    mask.data[i] = raw[i] ? 1 : 0;
  }
  return mask;
}

void save_gray_pgm(const FloatImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("pgm: cannot open for writing: " + path);
  write_pgm_header(f, img.width, img.height);
  std::vector<uint8_t> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    const double v = std::clamp(img.data[i], 0.0, 1.0);
    raw[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw_io("pgm: write failed: " + path);
}

void save_f32_raw(const FloatImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw_io("f32: cannot open for writing: " + path);
  std::vector<float> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(img.data[i]);
  f.write(reinterpret_cast<const char*>(raw.data()),
          static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!f) throw_io("f32: write failed: " + path);

  nlohmann::json sidecar{{"width", img.width}, {"height", img.height}};
  std::ofstream s(path + ".json", std::ios::binary | std::ios::trunc);
  if (!s) throw_io("f32: cannot open sidecar for writing: " + path + ".json");
  s << sidecar.dump() << "\n";
}

FloatImage load_f32_raw(const std::string& path) {
  std::ifstream s(path + ".json", std::ios::binary);
  if (!s) throw_io("f32: missing sidecar: " + path + ".json");
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(s);
  } catch (const nlohmann::json::exception& e) {
    throw_io("f32: sidecar parse error: " + std::string(e.what()));
  }
  if (!sidecar.contains("width") || !sidecar.contains("height"))
    throw_validation("f32: sidecar must carry width and height: " + path + ".json");
  FloatImage img(sidecar["width"].get<int>(), sidecar["height"].get<int>());

  std::ifstream f(path, std::ios::binary);
  if (!f) throw_io("f32: cannot open: " + path);
  std::vector<float> raw(img.data.size());
  f.read(reinterpret_cast<char*>(raw.data()),
         static_cast<std::streamsize>(raw.size() * sizeof(float)));
  if (!f) throw_io("f32: truncated raster: " + path);
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = static_cast<double>(raw[i]);
  return img;
}

}  // namespace carf
