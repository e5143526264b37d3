#pragma once

#include <filesystem>

#include "splab/data.hpp"

namespace splab {

// Binary PPM (P6, maxval 255). Channel values are clamped to [0,1] and
// rounded to the nearest 8-bit level.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);

// Nearest-neighbour upscale by an integer factor.
RgbImage upscale(const RgbImage& image, std::size_t factor);

}  // namespace splab
