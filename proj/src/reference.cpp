#include "vtonsift/reference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "vtonsift/error.hpp"

namespace vtonsift {

void GridSpec::validate() const {
  if (grid_h < 1 || grid_w < 1 || grid_h > image_h || grid_w > image_w) {
    throw Error(ErrorCode::InvalidArgument, "grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                                                " invalid for image " + std::to_string(image_h) + "x" +
                                                std::to_string(image_w));
  }
}

std::vector<double> ReferenceAttention::dense_row(std::uint32_t query) const {
  std::vector<double> row(key_grid.cells(), 0.0);
  const auto it = entries.find(query);
  if (it == entries.end()) return row;
  for (std::size_t k = 0; k < it->second.bins.size(); ++k) row[it->second.bins[k].first] = it->second.probability(k);
  return row;
}

std::uint32_t image_to_grid(double x, double y, const GridSpec& grid) {
  grid.validate();
  if (!(x >= 0.0 && x <= grid.image_w && y >= 0.0 && y <= grid.image_h)) {
    throw Error(ErrorCode::OutOfBounds, "point (" + std::to_string(x) + ", " + std::to_string(y) +
                                            ") outside image " + std::to_string(grid.image_w) + "x" +
                                            std::to_string(grid.image_h));
  }
  // x * grid_w is exact in double for float-derived coordinates, so the floor
  // of the correctly rounded quotient is the exact floor.
  const long col = std::min<long>(static_cast<long>(std::floor(x * grid.grid_w / grid.image_w)), grid.grid_w - 1);
  const long row = std::min<long>(static_cast<long>(std::floor(y * grid.grid_h / grid.image_h)), grid.grid_h - 1);
  return static_cast<std::uint32_t>(row * grid.grid_w + col);
}

bool PersonMask::contains(double x, double y) const {
  if (mask.empty()) return true;
  const int px = std::clamp(static_cast<int>(std::floor(x)), 0, mask.width - 1);
  const int py = std::clamp(static_cast<int>(std::floor(y)), 0, mask.height - 1);
  return mask.at(px, py) >= 0.5f;
}

ReferenceAttention build_reference(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                   std::span<const Keypoint> kps_p, const GridSpec& query_grid,
                                   const GridSpec& key_grid, const PersonMask* mask) {
  query_grid.validate();
  key_grid.validate();
  std::map<std::uint32_t, std::map<std::uint32_t, std::uint32_t>> hist;
  for (const auto& m : matches) {
    if (m.garment_kp >= kps_g.size() || m.person_kp >= kps_p.size()) {
      throw Error(ErrorCode::IndexOutOfRange, "match keypoint index out of range");
    }
    const Keypoint& p = kps_p[m.person_kp];
    const Keypoint& g = kps_g[m.garment_kp];
    if (mask && !mask->contains(p.x, p.y)) continue;
    ++hist[image_to_grid(p.x, p.y, query_grid)][image_to_grid(g.x, g.y, key_grid)];
  }

  ReferenceAttention ref;
  ref.query_grid = query_grid;
  ref.key_grid = key_grid;
  for (const auto& [i, row] : hist) {
    QueryDistribution dist;
    for (const auto& [j, count] : row) {
      dist.bins.emplace_back(j, count);
      dist.total += count;
    }
    ref.entries.emplace(i, std::move(dist));
  }
  return ref;
}

std::vector<Resolution> default_resolutions() { return {{64, 48}, {32, 24}, {16, 12}, {8, 6}}; }

std::vector<ReferenceAttention> build_multiscale(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                                 std::span<const Keypoint> kps_p, int person_h, int person_w,
                                                 int garment_h, int garment_w, std::span<const Resolution> resolutions,
                                                 const PersonMask* mask) {
  std::vector<ReferenceAttention> out;
  out.reserve(resolutions.size());
  for (const auto& r : resolutions) {
    const GridSpec q{person_h, person_w, r.grid_h, r.grid_w};
    const GridSpec k{garment_h, garment_w, r.grid_h, r.grid_w};
    out.push_back(build_reference(matches, kps_g, kps_p, q, k, mask));
  }
  return out;
}

void write_reference(std::ostream& os, const ReferenceAttention& ref) {
  auto grid = [&](const GridSpec& g) { os << ' ' << g.image_h << ' ' << g.image_w << ' ' << g.grid_h << ' ' << g.grid_w; };
  os << "REFATTN1";
  grid(ref.query_grid);
  grid(ref.key_grid);
  os << ' ' << ref.entries.size() << '\n';
  char buf[32];
  for (const auto& [i, dist] : ref.entries) {
    os << i << ' ' << dist.total;
    for (std::size_t k = 0; k < dist.bins.size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.9g", dist.probability(k));
      os << ' ' << dist.bins[k].first << ' ' << buf;
    }
    os << '\n';
  }
}

ReferenceAttention read_reference(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::ParseError, "reference file is empty");
  std::istringstream hs(line);
  std::string magic;
  ReferenceAttention ref;
  std::size_t count = 0;
  hs >> magic >> ref.query_grid.image_h >> ref.query_grid.image_w >> ref.query_grid.grid_h >> ref.query_grid.grid_w >>
      ref.key_grid.image_h >> ref.key_grid.image_w >> ref.key_grid.grid_h >> ref.key_grid.grid_w >> count;
  if (hs.fail() || magic != "REFATTN1") throw Error(ErrorCode::ParseError, "bad reference header: " + line);
  try {
    ref.query_grid.validate();
    ref.key_grid.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }

  for (std::size_t n = 0; n < count; ++n) {
    if (!std::getline(is, line)) throw Error(ErrorCode::ParseError, "reference truncated");
    std::istringstream ls(line);
    long long i = -1, total = 0;
    ls >> i >> total;
    if (ls.fail() || i < 0 || static_cast<std::size_t>(i) >= ref.query_grid.cells() || total <= 0) {
      throw Error(ErrorCode::ParseError, "bad reference row: " + line);
    }
    QueryDistribution dist;
    dist.total = static_cast<std::uint32_t>(total);
    long long j;
    double p;
    std::uint32_t sum = 0;
    while (ls >> j >> p) {
      if (j < 0 || static_cast<std::size_t>(j) >= ref.key_grid.cells() || !(p > 0.0 && p <= 1.0)) {
        throw Error(ErrorCode::ParseError, "bad reference bin: " + line);
      }
      // Probabilities are multiples of 1/n_i; recover the integer count.
      const double c = std::round(p * total);
      if (std::abs(c - p * total) > 1e-6 * total || c < 1) throw Error(ErrorCode::ParseError, "probability not a multiple of 1/n_i: " + line);
      dist.bins.emplace_back(static_cast<std::uint32_t>(j), static_cast<std::uint32_t>(c));
      sum += static_cast<std::uint32_t>(c);
    }
    if (!ls.eof() || sum != dist.total || dist.bins.empty()) throw Error(ErrorCode::ParseError, "inconsistent reference row: " + line);
    if (!ref.entries.emplace(static_cast<std::uint32_t>(i), std::move(dist)).second) {
      throw Error(ErrorCode::ParseError, "duplicate query index " + std::to_string(i));
    }
  }
  return ref;
}

std::vector<Resolution> parse_resolutions(const std::string& text) {
  std::vector<Resolution> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto x = item.find('x');
    try {
      if (x == std::string::npos) throw std::invalid_argument(item);
      std::size_t used_h = 0, used_w = 0;
      const std::string hs = item.substr(0, x), ws = item.substr(x + 1);
      Resolution r{std::stoi(hs, &used_h), std::stoi(ws, &used_w)};
      if (used_h != hs.size() || used_w != ws.size() || r.grid_h < 1 || r.grid_w < 1) throw std::invalid_argument(item);
      out.push_back(r);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "resolution must look like HxW, got '" + item + "'");
    }
  }
  return out;
}

}  // namespace vtonsift
