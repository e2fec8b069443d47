#pragma once

// Dependency-free bit-exact image formats: binary P6 pixmaps for RGB images,
// ASCII P2 graymaps for density maps. Density values are quantized to 16 bits
// with the scale factor recorded in a header comment (`# scale <s>`, raw
// value = pixel / s).

#include <string>
#include <vector>

#include "countnet/model.hpp"

namespace countnet {

struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<float> pixels;  // H*W*3, values in [0, 1]
};

void write_ppm(const std::string& path, const RgbImage& img);
RgbImage read_ppm(const std::string& path);

void write_pgm_density(const std::string& path, const DensityMap& map);
DensityMap read_pgm_density(const std::string& path);

RgbImage resize_bilinear(const RgbImage& img, std::size_t new_size);

}  // namespace countnet
