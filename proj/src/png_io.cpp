#include "sketchfill/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace sketchfill {

uint8_t to_u8(float v) {
  float u = std::round((std::clamp(v, -1.0f, 1.0f) + 1.0f) * 127.5f);
  return static_cast<uint8_t>(std::clamp(u, 0.0f, 255.0f));
}

namespace {

std::vector<uint8_t> write_memory(const std::vector<uint8_t>& raw, int width, int height,
                                  png_uint_32 format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  std::vector<uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<uint8_t> read_memory(std::span<const uint8_t> bytes, png_uint_32 format, int& width,
                                 int& height) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw IoError(std::string("png decode: ") + img.message);
  }
  img.format = format;
  std::vector<uint8_t> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(std::string("png decode: ") + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return raw;
}

}  // namespace

std::vector<uint8_t> encode_png(const Image& rgb) {
  if (rgb.channels() != 3) throw ContractError("encode_png: expected RGB image");
  std::vector<uint8_t> raw(rgb.size());
  auto d = rgb.data();
  std::transform(d.begin(), d.end(), raw.begin(), to_u8);
  return write_memory(raw, rgb.width(), rgb.height(), PNG_FORMAT_RGB);
}

std::vector<uint8_t> encode_png(const Bitmap& map) {
  std::vector<uint8_t> raw(map.size());
  auto d = map.data();
  std::transform(d.begin(), d.end(), raw.begin(), [](uint8_t v) { return uint8_t(v ? 255 : 0); });
  return write_memory(raw, map.width(), map.height(), PNG_FORMAT_GRAY);
}

Image decode_png_rgb(std::span<const uint8_t> bytes) {
  int w = 0, h = 0;
  auto raw = read_memory(bytes, PNG_FORMAT_RGB, w, h);
  Image out(w, h, 3);
  auto d = out.data();
  for (size_t i = 0; i < raw.size(); ++i) d[i] = float(raw[i]) / 127.5f - 1.0f;
  return out;
}

Bitmap decode_png_binary(std::span<const uint8_t> bytes) {
  int w = 0, h = 0;
  auto raw = read_memory(bytes, PNG_FORMAT_GRAY, w, h);
  Bitmap out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.set(y, x, raw[static_cast<size_t>(y) * w + x] >= 128);
  return out;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write " + path.string());
}

void write_png(const std::filesystem::path& path, const Image& rgb) { write_file(path, encode_png(rgb)); }
void write_png(const std::filesystem::path& path, const Bitmap& map) { write_file(path, encode_png(map)); }
Image read_png_rgb(const std::filesystem::path& path) { return decode_png_rgb(read_file(path)); }
Bitmap read_png_binary(const std::filesystem::path& path) { return decode_png_binary(read_file(path)); }

}  // namespace sketchfill
