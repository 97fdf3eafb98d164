#include "vtonsift/filter.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "vtonsift/error.hpp"

namespace vtonsift {

namespace {

using Point = std::array<double, 2>;

void check_indices(std::span<const MatchPair> matches, std::size_t ng, std::size_t np) {
  for (const auto& m : matches) {
    if (m.garment_kp >= ng || m.person_kp >= np) {
      throw Error(ErrorCode::IndexOutOfRange, "match references keypoint " + std::to_string(m.garment_kp) + "/" +
                                                  std::to_string(m.person_kp) + " beyond list sizes " +
                                                  std::to_string(ng) + "/" + std::to_string(np));
    }
  }
}

std::pair<long, long> rounded_pixel(const Keypoint& kp) { return {std::lround(kp.x), std::lround(kp.y)}; }

// Twice the signed triangle area.
double cross(const Point& a, const Point& b, const Point& c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

bool has_collinear_triple(const std::array<Point, 4>& pts) {
  constexpr double kMinArea = 1e-6;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      for (int k = j + 1; k < 4; ++k)
        if (std::abs(cross(pts[i], pts[j], pts[k])) < kMinArea) return true;
  return false;
}

double squared_dist(const Point& a, const Point& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1];
  return dx * dx + dy * dy;
}

// Forward plus backward squared transfer distance.
double symmetric_error(const Homography& h, const Homography& hinv, const Point& src, const Point& dst) {
  const auto fwd = h.apply(src[0], src[1]);
  const auto bwd = hinv.apply(dst[0], dst[1]);
  const double e = squared_dist(fwd, dst) + squared_dist(bwd, src);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

// Similarity transform that centers the points and scales mean distance to sqrt(2).
Eigen::Matrix3d normalizer(std::span<const Point> pts) {
  double mx = 0, my = 0;
  for (const auto& p : pts) {
    mx += p[0];
    my += p[1];
  }
  mx /= pts.size();
  my /= pts.size();
  double mean = 0;
  for (const auto& p : pts) mean += std::hypot(p[0] - mx, p[1] - my);
  mean /= pts.size();
  const double s = mean > 0 ? std::numbers::sqrt2 / mean : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
  return t;
}

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void FilterConfig::validate() const {
  if (!(angle_max_deg > 0 && angle_max_deg <= 180)) throw Error(ErrorCode::InvalidArgument, "angle_max_deg must be in (0,180]");
  if (!(scale_ratio_min > 0 && scale_ratio_min <= scale_ratio_max)) {
    throw Error(ErrorCode::InvalidArgument, "scale ratio bounds must satisfy 0 < min <= max");
  }
  if (!(ransac_reproj_px > 0)) throw Error(ErrorCode::InvalidArgument, "ransac_reproj_px must be positive");
  if (ransac_iters < 1) throw Error(ErrorCode::InvalidArgument, "ransac_iters must be >= 1");
  if (min_matches_for_ransac < 4) throw Error(ErrorCode::InvalidArgument, "min_matches_for_ransac must be >= 4");
}

std::array<double, 2> Homography::apply(double x, double y) const {
  const double w = h[6] * x + h[7] * y + h[8];
  return {(h[0] * x + h[1] * y + h[2]) / w, (h[3] * x + h[4] * y + h[5]) / w};
}

double Homography::determinant() const {
  return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) + h[2] * (h[3] * h[7] - h[4] * h[6]);
}

Homography Homography::inverse() const {
  Eigen::Matrix3d m;
  m << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  const Eigen::Matrix3d inv = m.inverse();
  Homography out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.h[r * 3 + c] = inv(r, c) / inv(2, 2);
  return out;
}

double circular_diff_deg(double a, double b) {
  double d = std::fmod(std::abs(a - b), 360.0);
  return d > 180.0 ? 360.0 - d : d;
}

std::vector<MatchPair> filter_angle_scale(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                          std::span<const Keypoint> kps_p, const FilterConfig& cfg) {
  check_indices(matches, kps_g.size(), kps_p.size());
  std::vector<MatchPair> out;
  for (const auto& m : matches) {
    const Keypoint& g = kps_g[m.garment_kp];
    const Keypoint& p = kps_p[m.person_kp];
    const double angle = circular_diff_deg(g.orientation, p.orientation);
    const double ratio = static_cast<double>(p.size) / static_cast<double>(g.size);
    if (angle <= cfg.angle_max_deg && ratio >= cfg.scale_ratio_min && ratio <= cfg.scale_ratio_max) out.push_back(m);
  }
  return out;
}

std::vector<MatchPair> dedup_matches(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                     std::span<const Keypoint> kps_p) {
  check_indices(matches, kps_g.size(), kps_p.size());
  std::vector<std::size_t> order(matches.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return matches[a].distance < matches[b].distance; });

  // Greedy claim in (distance, index) order; a match survives only if neither
  // of its rounded locations has been claimed by a better match.
  std::set<std::pair<long, long>> taken_g, taken_p;
  std::vector<bool> keep(matches.size(), false);
  for (std::size_t idx : order) {
    const auto pg = rounded_pixel(kps_g[matches[idx].garment_kp]);
    const auto pp = rounded_pixel(kps_p[matches[idx].person_kp]);
    if (taken_g.contains(pg) || taken_p.contains(pp)) continue;
    taken_g.insert(pg);
    taken_p.insert(pp);
    keep[idx] = true;
  }
  std::vector<MatchPair> out;
  for (std::size_t i = 0; i < matches.size(); ++i)
    if (keep[i]) out.push_back(matches[i]);
  return out;
}

std::optional<Homography> fit_homography(std::span<const Point> src, std::span<const Point> dst) {
  if (src.size() != dst.size() || src.size() < 4) return std::nullopt;
  const Eigen::Matrix3d ts = normalizer(src), td = normalizer(dst);
  const Eigen::Index n = static_cast<Eigen::Index>(src.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d s = ts * Eigen::Vector3d(src[i][0], src[i][1], 1.0);
    const Eigen::Vector3d d = td * Eigen::Vector3d(dst[i][0], dst[i][1], 1.0);
    const double x = s(0), y = s(1), u = d(0), v = d(1);
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::Matrix<double, 9, 1> h;
  if (n == 4) {
    // Minimal case: null space of the 8x9 system.
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    if (lu.rank() < 8) return std::nullopt;
    const Eigen::MatrixXd ker = lu.kernel();
    if (ker.cols() != 1) return std::nullopt;
    h = ker.col(0);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(7) <= 1e-12 * sv(0)) return std::nullopt;
    h = svd.matrixV().col(8);
  }
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d full = td.inverse() * hn * ts;
  if (std::abs(full(2, 2)) < 1e-15) return std::nullopt;
  Homography out;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.h[r * 3 + c] = full(r, c) / full(2, 2);
  if (!(std::abs(out.determinant()) > 1e-12)) return std::nullopt;
  for (double v : out.h)
    if (!std::isfinite(v)) return std::nullopt;
  return out;
}

RansacResult ransac_homography(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                               std::span<const Keypoint> kps_p, const FilterConfig& cfg) {
  cfg.validate();
  check_indices(matches, kps_g.size(), kps_p.size());
  if (matches.size() < cfg.min_matches_for_ransac) return {{matches.begin(), matches.end()}, std::nullopt};

  const std::size_t n = matches.size();
  std::vector<Point> src(n), dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& g = kps_g[matches[i].garment_kp];
    const auto& p = kps_p[matches[i].person_kp];
    src[i] = {g.x, g.y};
    dst[i] = {p.x, p.y};
  }

  const double thresh_sq = 2.0 * cfg.ransac_reproj_px * cfg.ransac_reproj_px;
  std::mt19937_64 rng(cfg.ransac_seed);
  std::vector<bool> best_mask;
  std::size_t best_count = 0;
  double best_err = std::numeric_limits<double>::infinity();
  bool any_valid_sample = false;

  for (int iter = 0; iter < cfg.ransac_iters; ++iter) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      for (;;) {
        const std::size_t c = static_cast<std::size_t>(rng() % n);
        if (std::find(idx.begin(), idx.begin() + k, c) == idx.begin() + k) {
          idx[k] = c;
          break;
        }
      }
    }
    std::array<Point, 4> s{}, d{};
    for (int k = 0; k < 4; ++k) {
      s[k] = src[idx[k]];
      d[k] = dst[idx[k]];
    }
    if (has_collinear_triple(s) || has_collinear_triple(d)) continue;
    const auto h = fit_homography(s, d);
    if (!h) continue;
    any_valid_sample = true;
    const Homography hinv = h->inverse();

    std::vector<bool> mask(n, false);
    std::size_t count = 0;
    double err_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = symmetric_error(*h, hinv, src[i], dst[i]);
      if (e <= thresh_sq) {
        mask[i] = true;
        ++count;
        err_sum += e;
      }
    }
    if (count > best_count || (count == best_count && count > 0 && err_sum < best_err)) {
      best_count = count;
      best_err = err_sum;
      best_mask = std::move(mask);
    }
  }
  if (!any_valid_sample) {
    throw Error(ErrorCode::DegenerateConfiguration,
                "every sampled quadruple of " + std::to_string(n) + " correspondences was collinear");
  }

  RansacResult result;
  std::vector<Point> in_src, in_dst;
  for (std::size_t i = 0; i < n; ++i) {
    if (!best_mask[i]) continue;
    result.inliers.push_back(matches[i]);
    in_src.push_back(src[i]);
    in_dst.push_back(dst[i]);
  }
  result.homography = fit_homography(in_src, in_dst);
  return result;
}

CascadeResult run_filter_cascade(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                 std::span<const Keypoint> kps_p, const FilterConfig& cfg) {
  cfg.validate();
  CascadeResult out;
  out.report.input = matches.size();
  const auto gated = filter_angle_scale(matches, kps_g, kps_p, cfg);
  out.report.after_angle_scale = gated.size();
  const auto unique = dedup_matches(gated, kps_g, kps_p);
  out.report.after_dedup = unique.size();
  auto ransac = ransac_homography(unique, kps_g, kps_p, cfg);
  out.report.after_ransac = ransac.inliers.size();
  out.report.homography = ransac.homography;
  out.matches = std::move(ransac.inliers);
  return out;
}

void write_report(std::ostream& os, const FilterReport& report) {
  os << "input=" << report.input << '\n'
     << "after_angle_scale=" << report.after_angle_scale << '\n'
     << "after_dedup=" << report.after_dedup << '\n'
     << "after_ransac=" << report.after_ransac << '\n'
     << "homography=";
  if (report.homography) {
    for (std::size_t i = 0; i < 9; ++i) os << (i ? " " : "") << g9(report.homography->h[i]);
  } else {
    os << "none";
  }
  os << '\n';
}

FilterReport read_report(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::ParseError, "report line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto count = [&](const std::string& key) -> std::size_t {
    const auto it = kv.find(key);
    if (it == kv.end()) throw Error(ErrorCode::ParseError, "report missing key " + key);
    try {
      return std::stoull(it->second);
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "report key " + key + " is not a count");
    }
  };
  FilterReport r;
  r.input = count("input");
  r.after_angle_scale = count("after_angle_scale");
  r.after_dedup = count("after_dedup");
  r.after_ransac = count("after_ransac");
  const auto it = kv.find("homography");
  if (it != kv.end() && it->second != "none") {
    std::istringstream hs(it->second);
    Homography h;
    for (double& v : h.h) hs >> v;
    if (hs.fail()) throw Error(ErrorCode::ParseError, "report homography needs 9 values");
    r.homography = h;
  }
  return r;
}

}  // namespace vtonsift
