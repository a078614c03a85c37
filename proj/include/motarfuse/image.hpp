#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace motarfuse {

// Planar RGB frame, values in [0, 1]; pixel (c, y, x) lives at
// pixels[(c * height + y) * width + x].
struct ImageFrame {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static constexpr std::size_t channels = 3;

  ImageFrame() = default;
  ImageFrame(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(3 * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  bool same_size(const ImageFrame& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const ImageFrame&, const ImageFrame&) = default;
};

// Binary P6, 8 bits per channel.
ImageFrame read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const ImageFrame& frame);

// Binary P5 from a row-major [height x width] array in [0, 1].
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               const std::vector<double>& values);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

// Rounds every pixel to the nearest 8-bit level, as a PPM round trip would.
ImageFrame quantize_8bit(const ImageFrame& frame);

ImageFrame flip_horizontal(const ImageFrame& frame);

}  // namespace motarfuse
