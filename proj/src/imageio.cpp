#include "apseg/imageio.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

#include "apseg/errors.hpp"

namespace apseg {

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, std::size_t height,
                  std::size_t width, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << magic << "\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); }

}  // namespace

void write_mask_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
                    std::span<const std::uint8_t> mask) {
  if (mask.size() != height * width) throw DimensionError("mask size does not match H×W");
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = mask[i] ? 255 : 0;
  write_netpbm(path, "P5", height, width, bytes);
}

void write_image_ppm(const std::filesystem::path& path, const ImageSample& image) {
  write_overlay_ppm(path, image, {});
}

void write_overlay_ppm(const std::filesystem::path& path, const ImageSample& image,
                       std::span<const std::uint8_t> pred) {
  const std::size_t h = image.height, w = image.width, hw = h * w;
  if (image.pixels.size() != 3 * hw) throw DimensionError("image pixel buffer does not hold 3×H×W values");
  if (!pred.empty() && pred.size() != hw) throw DimensionError("prediction size does not match the image");
  const bool outline = !pred.empty() && image.mask.size() == hw;
  std::vector<std::uint8_t> bytes(3 * hw);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      double rgb[3] = {image.pixels[p], image.pixels[hw + p], image.pixels[2 * hw + p]};
      if (!pred.empty() && pred[p]) {
        rgb[0] = 0.5 * rgb[0] + 0.5;
        rgb[1] *= 0.5;
        rgb[2] *= 0.5;
      }
      if (outline && image.mask[p]) {
        const bool edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h || !image.mask[p - 1] ||
                          !image.mask[p + 1] || !image.mask[p - w] || !image.mask[p + w];
        if (edge) rgb[0] = 0, rgb[1] = 1, rgb[2] = 0;
      }
      for (int c = 0; c < 3; ++c) bytes[3 * p + static_cast<std::size_t>(c)] = to_byte(rgb[c]);
    }
  write_netpbm(path, "P6", h, w, bytes);
}

}  // namespace apseg
