#pragma once

#include <filesystem>
#include <string_view>
#include <vector>

namespace caustic {

// Row-major grayscale raster; values are linear intensities (0..255 for 8-bit input).
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0) : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

  double& at(int row, int col) { return pixels[static_cast<size_t>(row) * width + col]; }
  double at(int row, int col) const { return pixels[static_cast<size_t>(row) * width + col]; }
  bool empty() const { return pixels.empty(); }
};

GrayImage read_pgm(const std::filesystem::path& path);
GrayImage read_png(const std::filesystem::path& path);
// Dispatches on the file signature (P2/P5 or PNG).
GrayImage read_image(const std::filesystem::path& path);

// Values are rescaled so the maximum maps to 255 when `normalize` is set,
// otherwise clamped to [0,255].
void write_pgm(const GrayImage& image, const std::filesystem::path& path, bool normalize = true);
void write_png(const GrayImage& image, const std::filesystem::path& path, bool normalize = true);
void write_image(const GrayImage& image, const std::filesystem::path& path, bool normalize = true);

// Built-in test images, size x size, values in [0, 255]:
// "uniform", "gaussian" (centered blob on a dim floor), "rings" (smooth
// concentric rings under a soft vignette, strictly positive).
GrayImage synthetic_image(std::string_view name, int size);

}  // namespace caustic
