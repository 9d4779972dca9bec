#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sketchfill/image.hpp"

namespace sketchfill {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit PNG codecs. RGB images map [-1, 1] <-> [0, 255]; binary maps are
// written as 0/255 grayscale and read back thresholded at 128.

std::vector<uint8_t> encode_png(const Image& rgb);
std::vector<uint8_t> encode_png(const Bitmap& map);
Image decode_png_rgb(std::span<const uint8_t> bytes);
Bitmap decode_png_binary(std::span<const uint8_t> bytes);

void write_png(const std::filesystem::path& path, const Image& rgb);
void write_png(const std::filesystem::path& path, const Bitmap& map);
Image read_png_rgb(const std::filesystem::path& path);
Bitmap read_png_binary(const std::filesystem::path& path);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes);

uint8_t to_u8(float v);

}  // namespace sketchfill
