#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace vtonsift {

// Single-channel image, row-major, luminance in [0,1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  // Clamp-to-border read.
  float clamped(int x, int y) const;

  bool empty() const { return data.empty(); }
};

// Interleaved 8-bit RGB, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::uint8_t* pixel(int x, int y) { return &data[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* pixel(int x, int y) const {
    return &data[(static_cast<std::size_t>(y) * width + x) * 3];
  }
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Decodes a PNG (8/16-bit gray, gray+alpha, RGB, RGBA, palette; alpha is
// dropped) or binary PPM (P6) stream. Throws MalformedImage.
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_ppm(const RgbImage& img);

// Deterministic PNG: fixed compression settings, no timestamp chunk. Optional
// tEXt entries are written in the order given.
std::vector<std::uint8_t> encode_png(
    const RgbImage& img, const std::vector<std::pair<std::string, std::string>>& text = {});

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// ITU-R 601 luma.
GrayImage to_gray(const RgbImage& img);
RgbImage gray_to_rgb(const GrayImage& img);

// Separable Gaussian, radius ceil(4 sigma), clamp-to-border. Throws
// InvalidSigma for sigma <= 0.
GrayImage gaussian_blur(const GrayImage& img, double sigma);

// Keeps every second pixel starting at (0,0). Throws TooSmall below 2x2.
GrayImage resample_half(const GrayImage& img);

// Normalized 1-D kernel of length 2*ceil(4 sigma)+1.
std::vector<double> gaussian_kernel(double sigma);

// Rasterization helpers used by the overlay and heatmap renderers.
void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, Rgb color);
void blit(RgbImage& dst, const RgbImage& src, int x0, int y0);

}  // namespace vtonsift
