#pragma once

// Portable graymap / pixmap writers for qualitative renders.

#include <cstdint>
#include <filesystem>
#include <span>

#include "apseg/encoder.hpp"

namespace apseg {

/// Binary PGM of an h×w mask; nonzero pixels are written white.
void write_mask_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    std::span<const std::uint8_t> mask);

/// Binary PPM of a 3×H×W image with values in [0,1].
void write_image_ppm(const std::filesystem::path& path, const ImageSample& image);

/// Image with the predicted mask tinted red and the ground truth outline in
/// green.
void write_overlay_ppm(const std::filesystem::path& path, const ImageSample& image,
                       std::span<const std::uint8_t> pred);

}  // namespace apseg
