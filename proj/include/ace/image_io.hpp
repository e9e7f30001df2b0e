#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ace/tensor.hpp"

namespace ace {

// Grayscale (P5) / RGB (P6) binary netpbm, 8-bit.
struct PnmImage {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved for RGB
};

void write_pnm(const PnmImage& img, const std::string& path);
PnmImage read_pnm(const std::string& path);

// Tiles images[n][C*H*W] (values in [0,1], planar channels) into one image,
// row-major, `cols` tiles per row, 1px separator.
PnmImage tile_images(const std::vector<std::vector<float>>& images,
                     std::size_t channels, std::size_t height,
                     std::size_t width, std::size_t cols);

// Batch tensor [B,C,H,W] to per-image planar float vectors.
std::vector<std::vector<float>> split_batch(const Tensor<float>& batch);

}  // namespace ace
