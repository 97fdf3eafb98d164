#pragma once

// Synthetic images and brute-force oracles shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vtonsift/imgproc.hpp"
#include "vtonsift/reference.hpp"
#include "vtonsift/sift.hpp"

namespace fixtures {

using vtonsift::GrayImage;
using vtonsift::RgbImage;

// Random Gaussian blobs over a soft gradient. Produces plenty of stable
// DoG extrema at several scales.
inline GrayImage textured(int w, int h, std::uint64_t seed, int blobs = 400) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), us(1.5, 9.0), ua(-0.5, 0.5);
  std::vector<double> acc(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) acc[static_cast<std::size_t>(y) * w + x] = 0.5 + 0.1 * std::sin(0.02 * x + 0.03 * y);
  for (int b = 0; b < blobs; ++b) {
    const double cx = ux(rng), cy = uy(rng), s = us(rng), a = ua(rng);
    const int r = static_cast<int>(std::ceil(3 * s));
    for (int y = std::max(0, static_cast<int>(cy) - r); y <= std::min(h - 1, static_cast<int>(cy) + r); ++y)
      for (int x = std::max(0, static_cast<int>(cx) - r); x <= std::min(w - 1, static_cast<int>(cx) + r); ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        acc[static_cast<std::size_t>(y) * w + x] += a * std::exp(-d2 / (2 * s * s));
      }
  }
  GrayImage img(w, h);
  for (std::size_t i = 0; i < acc.size(); ++i) img.data[i] = static_cast<float>(std::clamp(acc[i], 0.0, 1.0));
  return img;
}

// Band-limited noise summed over three scales, roughly natural-image
// statistics.
inline GrayImage noise_texture(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  GrayImage acc(w, h, 0.5f);
  for (double s : {1.5, 3.0, 6.0}) {
    GrayImage layer(w, h);
    for (auto& v : layer.data) v = static_cast<float>(n(rng));
    layer = vtonsift::gaussian_blur(layer, s);
    double sd = 0.0;
    for (float v : layer.data) sd += static_cast<double>(v) * v;
    sd = std::sqrt(sd / static_cast<double>(layer.data.size()));
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += static_cast<float>(0.08 * layer.data[i] / sd);
  }
  for (auto& v : acc.data) v = std::clamp(v, 0.0f, 1.0f);
  return acc;
}

inline GrayImage blob(int w, int h, double cx, double cy, double sigma) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
      img.at(x, y) = static_cast<float>(std::exp(-d2 / (2 * sigma * sigma)));
    }
  return img;
}

// Clockwise quarter turn: source (x, y) lands at (h - 1 - y, x).
inline GrayImage rotate90(const GrayImage& src) {
  GrayImage out(src.height, src.width);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) out.at(src.height - 1 - y, x) = src.at(x, y);
  return out;
}

inline RgbImage to_rgb8(const GrayImage& g) {
  RgbImage out(g.width, g.height);
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(std::lround(std::clamp(g.data[i], 0.0f, 1.0f) * 255.0f));
    out.data[3 * i] = out.data[3 * i + 1] = out.data[3 * i + 2] = v;
  }
  return out;
}

// Fraction of the top-half-by-response keypoints of `a` that reappear in
// `b` at the quarter-turned position within `tol` pixels.
inline double rotation_repeatability(const std::vector<vtonsift::Keypoint>& a, const std::vector<vtonsift::Keypoint>& b,
                                     int src_height, double tol) {
  const std::size_t strong = (a.size() + 1) / 2;
  if (strong == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t k = 0; k < strong; ++k) {
    const double ex = src_height - 1 - a[k].y, ey = a[k].x;
    for (const auto& kb : b) {
      if (std::hypot(kb.x - ex, kb.y - ey) <= tol) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(strong);
}

// Straight re-derivation of the binning rule: floor scaling, edge clamp.
inline std::uint32_t oracle_cell(double x, double y, const vtonsift::GridSpec& g) {
  int col = static_cast<int>(std::floor(x * g.grid_w / g.image_w));
  int row = static_cast<int>(std::floor(y * g.grid_h / g.image_h));
  col = std::min(col, g.grid_w - 1);
  row = std::min(row, g.grid_h - 1);
  return static_cast<std::uint32_t>(row * g.grid_w + col);
}

// Dense count matrix then normalization, no sparse bookkeeping.
inline std::map<std::uint32_t, std::vector<double>> oracle_histogram(const std::vector<vtonsift::MatchPair>& matches,
                                                                     const std::vector<vtonsift::Keypoint>& kg,
                                                                     const std::vector<vtonsift::Keypoint>& kp,
                                                                     const vtonsift::GridSpec& qg,
                                                                     const vtonsift::GridSpec& kgrid) {
  std::vector<std::vector<double>> counts(qg.cells(), std::vector<double>(kgrid.cells(), 0.0));
  for (const auto& m : matches) {
    counts[oracle_cell(kp[m.person_kp].x, kp[m.person_kp].y, qg)]
          [oracle_cell(kg[m.garment_kp].x, kg[m.garment_kp].y, kgrid)] += 1.0;
  }
  std::map<std::uint32_t, std::vector<double>> out;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    double n = 0.0;
    for (double c : counts[i]) n += c;
    if (n == 0.0) continue;
    for (double& c : counts[i]) c /= n;
    out[static_cast<std::uint32_t>(i)] = counts[i];
  }
  return out;
}

// Random keypoint sets inside a (w, h) image plus random index pairs.
struct MatchSet {
  std::vector<vtonsift::Keypoint> garment, person;
  std::vector<vtonsift::MatchPair> matches;
};

inline MatchSet random_matches(std::uint64_t seed, int w, int h, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(0.0, w), uy(0.0, h), ud(0.0, 1.0);
  MatchSet s;
  for (std::size_t k = 0; k < n; ++k) {
    vtonsift::Keypoint g, p;
    g.x = static_cast<float>(ux(rng));
    g.y = static_cast<float>(uy(rng));
    p.x = static_cast<float>(ux(rng));
    p.y = static_cast<float>(uy(rng));
    g.x = std::min(g.x, std::nextafter(static_cast<float>(w), 0.0f));
    g.y = std::min(g.y, std::nextafter(static_cast<float>(h), 0.0f));
    p.x = std::min(p.x, std::nextafter(static_cast<float>(w), 0.0f));
    p.y = std::min(p.y, std::nextafter(static_cast<float>(h), 0.0f));
    g.size = p.size = 4.0f;
    s.garment.push_back(g);
    s.person.push_back(p);
  }
  // Reuse some keypoints so several matches share cells.
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t gi = rng() % n, pi = (ud(rng) < 0.5) ? k : rng() % n;
    s.matches.push_back({gi, pi, ud(rng)});
  }
  return s;
}

inline std::string slurp(const std::filesystem::path& p) {
  const auto bytes = vtonsift::read_file(p);
  return {bytes.begin(), bytes.end()};
}

}  // namespace fixtures
