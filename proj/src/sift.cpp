#include "vtonsift/sift.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include "vtonsift/error.hpp"

namespace vtonsift {

namespace {

constexpr int kImageBorder = 5;
constexpr int kMaxRefineSteps = 5;
constexpr int kOrientationBins = 36;
constexpr double kOrientationSigmaFactor = 1.5;
constexpr double kOrientationRadiusFactor = 3.0 * kOrientationSigmaFactor;
constexpr int kDescWidth = 4;
constexpr int kDescBins = 8;
constexpr double kDescScaleFactor = 3.0;
constexpr double kDescClamp = 0.2;

using Octave = std::vector<GrayImage>;

struct Pyramid {
  std::vector<Octave> gaussian;
  std::vector<Octave> dog;
};

GrayImage upsample_double(const GrayImage& img) {
  GrayImage out(img.width * 2, img.height * 2);
  for (int y = 0; y < out.height; ++y) {
    const double sy = 0.5 * y;
    const int y0 = static_cast<int>(sy);
    const double fy = sy - y0;
    for (int x = 0; x < out.width; ++x) {
      const double sx = 0.5 * x;
      const int x0 = static_cast<int>(sx);
      const double fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * img.clamped(x0, y0) + fx * img.clamped(x0 + 1, y0)) +
                       fy * ((1 - fx) * img.clamped(x0, y0 + 1) + fx * img.clamped(x0 + 1, y0 + 1));
      out.at(x, y) = static_cast<float>(v);
    }
  }
  return out;
}

Pyramid build_pyramid(const GrayImage& input, const SiftParams& p) {
  GrayImage base;
  double prior = p.assumed_input_sigma;
  if (p.upsample_input) {
    base = upsample_double(input);
    prior *= 2.0;
  } else {
    base = input;
  }
  const double diff = std::sqrt(std::max(p.initial_sigma * p.initial_sigma - prior * prior, 0.01));
  base = gaussian_blur(base, diff);

  const int s = p.scales_per_octave;
  const int per_octave = s + 3;
  const double k = std::pow(2.0, 1.0 / s);
  std::vector<double> increments(per_octave, 0.0);
  for (int i = 1; i < per_octave; ++i) {
    const double prev = p.initial_sigma * std::pow(k, i - 1);
    const double total = prev * k;
    increments[i] = std::sqrt(total * total - prev * prev);
  }

  Pyramid pyr;
  GrayImage next = std::move(base);
  while (std::min(next.width, next.height) >= p.min_octave_size) {
    Octave oct;
    oct.reserve(per_octave);
    oct.push_back(std::move(next));
    for (int i = 1; i < per_octave; ++i) oct.push_back(gaussian_blur(oct.back(), increments[i]));

    Octave dog;
    dog.reserve(per_octave - 1);
    for (int i = 1; i < per_octave; ++i) {
      GrayImage d(oct[i].width, oct[i].height);
      for (std::size_t j = 0; j < d.data.size(); ++j) d.data[j] = oct[i].data[j] - oct[i - 1].data[j];
      dog.push_back(std::move(d));
    }
    next = (oct[s].width >= 2 && oct[s].height >= 2) ? resample_half(oct[s]) : GrayImage{};
    pyr.gaussian.push_back(std::move(oct));
    pyr.dog.push_back(std::move(dog));
  }
  return pyr;
}

bool is_extremum(const Octave& dog, int layer, int x, int y) {
  const float v = dog[layer].at(x, y);
  if (v > 0) {
    for (int l = layer - 1; l <= layer + 1; ++l)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (dog[l].at(x + dx, y + dy) > v) return false;
    return true;
  }
  if (v < 0) {
    for (int l = layer - 1; l <= layer + 1; ++l)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (dog[l].at(x + dx, y + dy) < v) return false;
    return true;
  }
  return false;
}

// Solves the 3x3 symmetric system H * x = g by Cramer's rule.
bool solve3(const double h[3][3], const double g[3], double x[3]) {
  const double det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) -
                     h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0]) +
                     h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
  if (std::abs(det) < 1e-20) return false;
  for (int c = 0; c < 3; ++c) {
    double m[3][3];
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) m[r][cc] = cc == c ? g[r] : h[r][cc];
    x[c] = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
            m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])) /
           det;
  }
  return true;
}

struct Refined {
  int x, y, layer;
  double xc, yc, lc;  // sub-sample offsets
  double contrast;
};

std::optional<Refined> refine(const Octave& dog, int layer, int x, int y, const SiftParams& p) {
  const int s = p.scales_per_octave;
  const int w = dog[0].width, h = dog[0].height;
  double off[3] = {0, 0, 0};
  double grad[3] = {0, 0, 0};
  int step = 0;
  for (; step < kMaxRefineSteps; ++step) {
    const GrayImage& cur = dog[layer];
    const GrayImage& prv = dog[layer - 1];
    const GrayImage& nxt = dog[layer + 1];
    const double v2 = 2.0 * cur.at(x, y);
    grad[0] = 0.5 * (cur.at(x + 1, y) - cur.at(x - 1, y));
    grad[1] = 0.5 * (cur.at(x, y + 1) - cur.at(x, y - 1));
    grad[2] = 0.5 * (nxt.at(x, y) - prv.at(x, y));
    double hess[3][3];
    hess[0][0] = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
    hess[1][1] = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
    hess[2][2] = nxt.at(x, y) + prv.at(x, y) - v2;
    hess[0][1] = hess[1][0] =
        0.25 * (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1) + cur.at(x - 1, y - 1));
    hess[0][2] = hess[2][0] =
        0.25 * (nxt.at(x + 1, y) - nxt.at(x - 1, y) - prv.at(x + 1, y) + prv.at(x - 1, y));
    hess[1][2] = hess[2][1] =
        0.25 * (nxt.at(x, y + 1) - nxt.at(x, y - 1) - prv.at(x, y + 1) + prv.at(x, y - 1));
    double sol[3];
    if (!solve3(hess, grad, sol)) return std::nullopt;
    off[0] = -sol[0];
    off[1] = -sol[1];
    off[2] = -sol[2];
    if (std::abs(off[0]) < 0.5 && std::abs(off[1]) < 0.5 && std::abs(off[2]) < 0.5) break;
    if (std::abs(off[0]) > 1e6 || std::abs(off[1]) > 1e6 || std::abs(off[2]) > 1e6) return std::nullopt;
    x += static_cast<int>(std::lround(off[0]));
    y += static_cast<int>(std::lround(off[1]));
    layer += static_cast<int>(std::lround(off[2]));
    if (layer < 1 || layer > s || x < kImageBorder || x >= w - kImageBorder || y < kImageBorder ||
        y >= h - kImageBorder) {
      return std::nullopt;
    }
  }
  if (step >= kMaxRefineSteps) return std::nullopt;

  const GrayImage& cur = dog[layer];
  const double contrast = cur.at(x, y) + 0.5 * (grad[0] * off[0] + grad[1] * off[1] + grad[2] * off[2]);
  if (std::abs(contrast) < p.contrast_threshold) return std::nullopt;

  const double v2 = 2.0 * cur.at(x, y);
  const double dxx = cur.at(x + 1, y) + cur.at(x - 1, y) - v2;
  const double dyy = cur.at(x, y + 1) + cur.at(x, y - 1) - v2;
  const double dxy =
      0.25 * (cur.at(x + 1, y + 1) - cur.at(x - 1, y + 1) - cur.at(x + 1, y - 1) + cur.at(x - 1, y - 1));
  const double tr = dxx + dyy;
  const double det = dxx * dyy - dxy * dxy;
  const double r = p.edge_ratio;
  if (det <= 0 || tr * tr * r >= (r + 1) * (r + 1) * det) return std::nullopt;

  return Refined{x, y, layer, off[0], off[1], off[2], contrast};
}

std::vector<double> orientation_histogram(const GrayImage& img, int cx, int cy, double sigma) {
  const int radius = static_cast<int>(std::lround(kOrientationRadiusFactor * sigma));
  const double weight_scale = -1.0 / (2.0 * sigma * sigma);
  std::vector<double> raw(kOrientationBins, 0.0);
  for (int i = -radius; i <= radius; ++i) {
    const int y = cy + i;
    if (y <= 0 || y >= img.height - 1) continue;
    for (int j = -radius; j <= radius; ++j) {
      const int x = cx + j;
      if (x <= 0 || x >= img.width - 1) continue;
      const double dx = img.at(x + 1, y) - img.at(x - 1, y);
      const double dy = img.at(x, y + 1) - img.at(x, y - 1);
      const double mag = std::sqrt(dx * dx + dy * dy);
      double deg = std::atan2(dy, dx) * 180.0 / std::numbers::pi;
      if (deg < 0) deg += 360.0;
      int bin = static_cast<int>(std::lround(deg * kOrientationBins / 360.0));
      if (bin >= kOrientationBins) bin -= kOrientationBins;
      raw[bin] += std::exp((i * i + j * j) * weight_scale) * mag;
    }
  }
  std::vector<double> hist(kOrientationBins);
  const int n = kOrientationBins;
  for (int b = 0; b < n; ++b) {
    hist[b] = (raw[(b - 2 + n) % n] + raw[(b + 2) % n]) * (1.0 / 16) +
              (raw[(b - 1 + n) % n] + raw[(b + 1) % n]) * (4.0 / 16) + raw[b] * (6.0 / 16);
  }
  return hist;
}

// Returns false when the gradient field around the keypoint is empty.
bool compute_descriptor(const GrayImage& img, double cx, double cy, double orientation_deg, double scale,
                        const SiftParams& p, std::array<float, kDescriptorSize>& out) {
  constexpr int d = kDescWidth, n = kDescBins;
  const double theta = orientation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double bins_per_rad = n / (2.0 * std::numbers::pi);
  const double exp_scale = -1.0 / (d * d * 0.5);
  const double hist_width = kDescScaleFactor * scale;
  int radius = static_cast<int>(std::lround(hist_width * std::numbers::sqrt2 * (d + 1) * 0.5));
  radius = std::min(radius, static_cast<int>(std::sqrt(double(img.width) * img.width + double(img.height) * img.height)));
  const int px = static_cast<int>(std::lround(cx)), py = static_cast<int>(std::lround(cy));

  std::vector<double> hist((d + 2) * (d + 2) * (n + 2), 0.0);
  auto at = [&](int r, int c, int o) -> double& { return hist[((r * (d + 2)) + c) * (n + 2) + o]; };

  for (int i = -radius; i <= radius; ++i) {
    for (int j = -radius; j <= radius; ++j) {
      // Rotate the sample offset into the keypoint frame.
      const double c_rot = (j * cos_t + i * sin_t) / hist_width;
      const double r_rot = (-j * sin_t + i * cos_t) / hist_width;
      const double rbin = r_rot + d / 2.0 - 0.5;
      const double cbin = c_rot + d / 2.0 - 0.5;
      const int x = px + j, y = py + i;
      if (rbin <= -1 || rbin >= d || cbin <= -1 || cbin >= d) continue;
      if (x <= 0 || x >= img.width - 1 || y <= 0 || y >= img.height - 1) continue;

      const double dx = img.at(x + 1, y) - img.at(x - 1, y);
      const double dy = img.at(x, y + 1) - img.at(x, y - 1);
      const double mag = std::sqrt(dx * dx + dy * dy) * std::exp((c_rot * c_rot + r_rot * r_rot) * exp_scale);
      double angle = std::atan2(dy, dx) - theta;
      angle = std::fmod(angle, 2.0 * std::numbers::pi);
      if (angle < 0) angle += 2.0 * std::numbers::pi;
      double obin = angle * bins_per_rad;

      const int r0 = static_cast<int>(std::floor(rbin));
      const int c0 = static_cast<int>(std::floor(cbin));
      int o0 = static_cast<int>(std::floor(obin));
      const double fr = rbin - r0, fc = cbin - c0, fo = obin - o0;
      if (o0 >= n) o0 -= n;
      for (int dr = 0; dr <= 1; ++dr) {
        const double wr = dr ? fr : 1 - fr;
        for (int dc = 0; dc <= 1; ++dc) {
          const double wc = dc ? fc : 1 - fc;
          for (int dor = 0; dor <= 1; ++dor) {
            const double wo = dor ? fo : 1 - fo;
            at(r0 + 1 + dr, c0 + 1 + dc, o0 + dor) += mag * wr * wc * wo;
          }
        }
      }
    }
  }

  std::array<double, kDescriptorSize> desc{};
  for (int r = 0; r < d; ++r) {
    for (int c = 0; c < d; ++c) {
      at(r + 1, c + 1, 0) += at(r + 1, c + 1, n);
      at(r + 1, c + 1, 1) += at(r + 1, c + 1, n + 1);
      for (int o = 0; o < n; ++o) desc[(r * d + c) * n + o] = at(r + 1, c + 1, o);
    }
  }

  auto l2 = [&] {
    double s = 0.0;
    for (double v : desc) s += v * v;
    return std::sqrt(s);
  };
  double norm = l2();
  if (!(norm > 0.0)) return false;
  for (double& v : desc) v = std::min(v / norm, kDescClamp);
  if (p.on_clamped_descriptor) {
    std::array<float, kDescriptorSize> clamped;
    for (std::size_t i = 0; i < kDescriptorSize; ++i) clamped[i] = static_cast<float>(desc[i]);
    p.on_clamped_descriptor(clamped);
  }
  norm = l2();
  for (std::size_t i = 0; i < kDescriptorSize; ++i) out[i] = static_cast<float>(desc[i] / norm);
  return true;
}

bool response_order(const Keypoint& a, const Keypoint& b) {
  if (a.response != b.response) return a.response > b.response;
  if (a.octave != b.octave) return a.octave < b.octave;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  if (a.size != b.size) return a.size < b.size;
  return a.orientation < b.orientation;
}

std::string format_g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::vector<Keypoint> detect_and_describe(const GrayImage& img, const SiftParams& params) {
  if (img.width < 16 || img.height < 16) {
    throw Error(ErrorCode::ImageTooSmall,
                "need at least 16x16, got " + std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  if (params.scales_per_octave < 1 || !(params.initial_sigma > 0) || !(params.contrast_threshold >= 0) ||
      !(params.edge_ratio > 0) || params.min_octave_size < 2 * kImageBorder + 3) {
    throw Error(ErrorCode::InvalidArgument, "invalid SIFT parameters");
  }

  const Pyramid pyr = build_pyramid(img, params);
  const int s = params.scales_per_octave;
  const double coord_scale = params.upsample_input ? 0.5 : 1.0;
  const float prefilter = static_cast<float>(0.5 * params.contrast_threshold);

  std::vector<Keypoint> out;
  for (std::size_t o = 0; o < pyr.dog.size(); ++o) {
    const Octave& dog = pyr.dog[o];
    const int w = dog[0].width, h = dog[0].height;
    const double octave_scale = std::ldexp(1.0, static_cast<int>(o));
    for (int layer = 1; layer <= s; ++layer) {
      for (int y = kImageBorder; y < h - kImageBorder; ++y) {
        for (int x = kImageBorder; x < w - kImageBorder; ++x) {
          if (std::abs(dog[layer].at(x, y)) <= prefilter) continue;
          if (!is_extremum(dog, layer, x, y)) continue;
          const auto ref = refine(dog, layer, x, y, params);
          if (!ref) continue;

          const double scl_octv = params.initial_sigma * std::pow(2.0, (ref->layer + ref->lc) / s);
          Keypoint kp;
          kp.x = static_cast<float>((ref->x + ref->xc) * octave_scale * coord_scale);
          kp.y = static_cast<float>((ref->y + ref->yc) * octave_scale * coord_scale);
          kp.size = static_cast<float>(scl_octv * octave_scale * coord_scale * 2.0);
          kp.response = static_cast<float>(std::abs(ref->contrast));
          kp.octave = static_cast<int>(o);
          if (kp.x < 0 || kp.y < 0 || kp.x >= img.width || kp.y >= img.height) continue;

          const GrayImage& gauss = pyr.gaussian[o][ref->layer];
          const auto hist = orientation_histogram(gauss, ref->x, ref->y, kOrientationSigmaFactor * scl_octv);
          const double peak = *std::max_element(hist.begin(), hist.end());
          if (!(peak > 0.0)) continue;

          std::vector<std::pair<double, double>> peaks;  // (value, degrees)
          const int n = kOrientationBins;
          for (int b = 0; b < n; ++b) {
            const double l = hist[(b - 1 + n) % n], r = hist[(b + 1) % n];
            if (hist[b] > l && hist[b] > r && hist[b] >= params.orientation_peak_ratio * peak) {
              double bin = b + 0.5 * (l - r) / (l - 2 * hist[b] + r);
              if (bin < 0) bin += n;
              if (bin >= n) bin -= n;
              double deg = bin * 360.0 / n;
              if (deg >= 360.0) deg -= 360.0;
              peaks.emplace_back(hist[b], deg);
            }
          }
          std::stable_sort(peaks.begin(), peaks.end(), [](auto& a, auto& b) { return a.first > b.first; });
          if (static_cast<int>(peaks.size()) > params.max_orientations) peaks.resize(params.max_orientations);

          for (const auto& [value, deg] : peaks) {
            Keypoint k = kp;
            k.orientation = static_cast<float>(deg);
            if (k.orientation >= 360.0f) k.orientation = 0.0f;
            if (!compute_descriptor(gauss, ref->x + ref->xc, ref->y + ref->yc, deg, scl_octv, params,
                                    k.descriptor)) {
              continue;
            }
            out.push_back(k);
          }
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), response_order);
  return out;
}

double descriptor_distance(const Keypoint& a, const Keypoint& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < kDescriptorSize; ++i) {
    const double d = static_cast<double>(a.descriptor[i]) - b.descriptor[i];
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<MatchPair> match_ratio_test(std::span<const Keypoint> a, std::span<const Keypoint> b, double ratio) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyKeypoints, "match_ratio_test needs two non-empty lists");
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::InvalidArgument, "ratio must be in (0,1)");

  std::vector<MatchPair> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::size_t best = 0;
    double d1 = std::numeric_limits<double>::infinity();
    double d2 = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < b.size(); ++j) {
      const double d = descriptor_distance(a[i], b[j]);
      if (d < d1) {
        d2 = d1;
        d1 = d;
        best = j;
      } else if (d < d2) {
        d2 = d;
      }
    }
    if (b.size() == 1 || d1 < ratio * d2) out.push_back({i, best, d1});
  }
  return out;
}

void write_keypoints(std::ostream& os, std::span<const Keypoint> kps) {
  for (const auto& kp : kps) {
    os << format_g9(kp.x) << ' ' << format_g9(kp.y) << ' ' << format_g9(kp.size) << ' '
       << format_g9(kp.orientation) << ' ' << format_g9(kp.response) << ' ' << kp.octave;
    for (float v : kp.descriptor) os << ' ' << format_g9(v);
    os << '\n';
  }
}

std::vector<Keypoint> read_keypoints(std::istream& is) {
  std::vector<Keypoint> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    Keypoint kp;
    ls >> kp.x >> kp.y >> kp.size >> kp.orientation >> kp.response >> kp.octave;
    for (float& v : kp.descriptor) ls >> v;
    std::string extra;
    if (ls.fail() || (ls >> extra)) {
      throw Error(ErrorCode::ParseError, "keypoint record at line " + std::to_string(lineno));
    }
    out.push_back(kp);
  }
  return out;
}

void write_matches(std::ostream& os, std::span<const MatchPair> matches) {
  for (const auto& m : matches) os << m.garment_kp << ' ' << m.person_kp << ' ' << format_g9(m.distance) << '\n';
}

std::vector<MatchPair> read_matches(std::istream& is) {
  std::vector<MatchPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    long long g = -1, p = -1;
    MatchPair m;
    ls >> g >> p >> m.distance;
    std::string extra;
    if (ls.fail() || g < 0 || p < 0 || m.distance < 0 || (ls >> extra)) {
      throw Error(ErrorCode::ParseError, "match record at line " + std::to_string(lineno));
    }
    m.garment_kp = static_cast<std::size_t>(g);
    m.person_kp = static_cast<std::size_t>(p);
    out.push_back(m);
  }
  return out;
}

}  // namespace vtonsift
