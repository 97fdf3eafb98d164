#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "vtonsift/sift.hpp"

namespace vtonsift {

struct FilterConfig {
  double angle_max_deg = 45.0;
  double scale_ratio_min = 0.44;
  double scale_ratio_max = 2.25;
  double ransac_reproj_px = 3.0;
  int ransac_iters = 2000;
  std::uint64_t ransac_seed = 0;
  std::size_t min_matches_for_ransac = 4;

  // Throws InvalidArgument when a field is out of its documented range.
  void validate() const;
};

// Row-major 3x3 projective transform with h[8] == 1.
struct Homography {
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(int r, int c) const { return h[r * 3 + c]; }
  std::array<double, 2> apply(double x, double y) const;
  Homography inverse() const;
  double determinant() const;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t after_angle_scale = 0;
  std::size_t after_dedup = 0;
  std::size_t after_ransac = 0;
  std::optional<Homography> homography;
};

struct RansacResult {
  std::vector<MatchPair> inliers;
  std::optional<Homography> homography;
};

// Smallest absolute angle between two orientations, in [0, 180].
double circular_diff_deg(double a, double b);

// Keeps a match iff the orientation change is <= angle_max_deg and
// person.size / garment.size lies in [scale_ratio_min, scale_ratio_max].
// Both bounds are inclusive.
std::vector<MatchPair> filter_angle_scale(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                          std::span<const Keypoint> kps_p, const FilterConfig& cfg);

// Among matches sharing a rounded garment pixel or a rounded person pixel,
// only the lowest-distance one survives (ties: lower match index). Input
// order is preserved.
std::vector<MatchPair> dedup_matches(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                     std::span<const Keypoint> kps_p);

// Seeded 4-point RANSAC with symmetric transfer error, followed by a
// least-squares refit on the consensus set. Below min_matches_for_ransac the
// input is returned unchanged without a homography.
RansacResult ransac_homography(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                               std::span<const Keypoint> kps_p, const FilterConfig& cfg);

struct CascadeResult {
  std::vector<MatchPair> matches;
  FilterReport report;
};

CascadeResult run_filter_cascade(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                 std::span<const Keypoint> kps_p, const FilterConfig& cfg);

// Normalized DLT over >= 4 correspondences (src -> dst). Returns nullopt
// when the system is degenerate.
std::optional<Homography> fit_homography(std::span<const std::array<double, 2>> src,
                                         std::span<const std::array<double, 2>> dst);

void write_report(std::ostream& os, const FilterReport& report);
FilterReport read_report(std::istream& is);

}  // namespace vtonsift
