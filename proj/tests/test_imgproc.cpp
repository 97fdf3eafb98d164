#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "fixtures.hpp"
#include "vtonsift/error.hpp"
#include "vtonsift/imgproc.hpp"

using namespace vtonsift;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("ppm decode") {
  const auto white = decode_image(bytes_of(std::string("P6 1 1 255 ") + "\xff\xff\xff"));
  CHECK(white.width == 1);
  CHECK(white.height == 1);
  CHECK(white.data == std::vector<std::uint8_t>{255, 255, 255});

  const auto two = decode_image(bytes_of(std::string("P6\n# comment\n2 1\n255\n") + std::string("\0\0\0\xff\0\0", 6)));
  CHECK(two.width == 2);
  CHECK(two.data == std::vector<std::uint8_t>{0, 0, 0, 255, 0, 0});
}

TEST_CASE("malformed streams are rejected") {
  CHECK(code_of([] { decode_image(bytes_of("\x89PNG\r\n")); }) == ErrorCode::MalformedImage);
  CHECK(code_of([] { decode_image(bytes_of("P6 2 2 255 \x01\x02")); }) == ErrorCode::MalformedImage);
  CHECK(code_of([] { decode_image(bytes_of("")); }) == ErrorCode::MalformedImage);
  CHECK(code_of([] { decode_image(bytes_of("GIF89a")); }) == ErrorCode::MalformedImage);
}

TEST_CASE("ppm and png round trip") {
  std::mt19937_64 rng(1);
  RgbImage img(7, 5);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng());
  CHECK(decode_image(encode_ppm(img)).data == img.data);
  const auto png = decode_image(encode_png(img, {{"k", "v"}}));
  CHECK(png.width == 7);
  CHECK(png.height == 5);
  CHECK(png.data == img.data);
  CHECK(encode_png(img) == encode_png(img));
}

TEST_CASE("grayscale conversion") {
  RgbImage img(3, 1);
  const std::uint8_t px[] = {255, 255, 255, 0, 0, 0, 255, 0, 0};
  std::copy(std::begin(px), std::end(px), img.data.begin());
  const auto g = to_gray(img);
  CHECK(g.data[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(g.data[1] == 0.0f);
  CHECK(g.data[2] == doctest::Approx(0.299).epsilon(1e-6));
  for (float v : g.data) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("blur of a constant image is constant") {
  const GrayImage img(23, 17, 0.37f);
  for (double s : {0.5, 1.6, 4.0}) {
    const auto out = gaussian_blur(img, s);
    for (float v : out.data) CHECK(std::abs(v - 0.37f) <= 1e-6);
  }
}

TEST_CASE("impulse response matches a sampled gaussian") {
  GrayImage img(41, 41, 0.0f);
  img.at(20, 20) = 1.0f;
  const double sigma = 2.0;
  const auto out = gaussian_blur(img, sigma);
  const double peak = 1.0 / (2 * std::numbers::pi * sigma * sigma);
  CHECK(std::abs(out.at(20, 20) - peak) <= 0.02 * peak);
  double mass = 0.0;
  for (float v : out.data) mass += v;
  CHECK(std::abs(mass - 1.0) <= 1e-3);
  // Directly sampled 2-D Gaussian, normalized over the same support.
  const int r = static_cast<int>(std::ceil(4 * sigma));
  double z = 0.0;
  for (int k = -r; k <= r; ++k) z += std::exp(-k * k / (2 * sigma * sigma));
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      const double want = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) / (z * z);
      CHECK(out.at(20 + dx, 20 + dy) == doctest::Approx(want).epsilon(1e-5));
    }
}

TEST_CASE("blur composes in quadrature") {
  const auto img = fixtures::noise_texture(64, 64, 3);
  const auto twice = gaussian_blur(gaussian_blur(img, 1.2), 1.6);
  const auto once = gaussian_blur(img, std::sqrt(1.2 * 1.2 + 1.6 * 1.6));
  double se = 0.0;
  int n = 0;
  for (int y = 12; y < 52; ++y)
    for (int x = 12; x < 52; ++x, ++n) se += std::pow(twice.at(x, y) - once.at(x, y), 2);
  CHECK(std::sqrt(se / n) <= 1e-3);
}

TEST_CASE("invalid sigma") {
  const GrayImage img(4, 4, 0.0f);
  CHECK(code_of([&] { gaussian_blur(img, 0.0); }) == ErrorCode::InvalidSigma);
  CHECK(code_of([&] { gaussian_blur(img, -1.0); }) == ErrorCode::InvalidSigma);
}

TEST_CASE("kernel radius and normalization") {
  const auto k = gaussian_kernel(1.6);
  CHECK(k.size() == 2 * 7 + 1);
  double s = 0.0;
  for (double v : k) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("half resampling") {
  const auto c = resample_half(GrayImage(4, 4, 0.25f));
  CHECK(c.width == 2);
  CHECK(c.height == 2);
  for (float v : c.data) CHECK(v == 0.25f);

  GrayImage corners(2, 2);
  corners.data = {0.1f, 0.2f, 0.3f, 0.4f};
  const auto one = resample_half(corners);
  CHECK(one.width == 1);
  CHECK(one.data[0] == 0.1f);

  GrayImage odd(5, 3);
  for (std::size_t i = 0; i < odd.data.size(); ++i) odd.data[i] = static_cast<float>(i);
  const auto h = resample_half(odd);
  CHECK(h.width == 2);
  CHECK(h.height == 1);
  CHECK(h.at(1, 0) == odd.at(2, 0));

  CHECK(code_of([] { resample_half(GrayImage(1, 1)); }) == ErrorCode::TooSmall);
}

TEST_CASE("line drawing hits both endpoints") {
  RgbImage img(10, 10);
  draw_line(img, 1, 2, 8, 6, {255, 0, 0});
  CHECK(img.pixel(1, 2)[0] == 255);
  CHECK(img.pixel(8, 6)[0] == 255);
  int lit = 0;
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) lit += img.pixel(x, y)[0] == 255;
  CHECK(lit == 8);
  // Off-canvas segments are clipped rather than faulting.
  draw_line(img, -5, -5, 20, 20, {0, 255, 0});
}
