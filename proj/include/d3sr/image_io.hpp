#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "d3sr/tensor.hpp"

namespace d3sr {

// 8-bit RGB PNG <-> float (3,H,W) in [0,1]. Quantization rounds to nearest.
Tensor<float> read_png(const std::string& path);
void write_png(const std::string& path, const Tensor<float>& image);

// Reads only the header; throws data_error on undecodable files.
void png_dimensions(const std::string& path, int* width, int* height);

// In-memory JPEG round trip at the given quality (1..100).
std::vector<uint8_t> jpeg_encode(const Tensor<float>& image, int quality);
Tensor<float> jpeg_decode(const std::vector<uint8_t>& bytes);

// Compile-time version of the linked JPEG library, for provenance notes.
std::string jpeg_library_version();

std::vector<uint8_t> to_u8_rgb(const Tensor<float>& image);
Tensor<float> from_u8_rgb(const std::vector<uint8_t>& bytes, int height, int width);

}  // namespace d3sr
