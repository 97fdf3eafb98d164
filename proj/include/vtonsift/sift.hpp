#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "vtonsift/imgproc.hpp"

namespace vtonsift {

inline constexpr std::size_t kDescriptorSize = 128;

struct Keypoint {
  float x = 0.0f;            // column, source-image pixels
  float y = 0.0f;            // row, source-image pixels
  float size = 0.0f;         // diameter in pixels
  float orientation = 0.0f;  // degrees in [0, 360), measured with y pointing down
  float response = 0.0f;     // |DoG| at the refined extremum
  int octave = 0;
  std::array<float, kDescriptorSize> descriptor{};
};

struct SiftParams {
  int scales_per_octave = 3;
  double initial_sigma = 1.6;
  // Blur already present in the input image.
  double assumed_input_sigma = 0.5;
  double contrast_threshold = 0.03;
  double edge_ratio = 10.0;
  int max_orientations = 4;
  double orientation_peak_ratio = 0.8;
  // Octaves are added while the octave image's short side is >= this.
  int min_octave_size = 16;
  bool upsample_input = false;

  // Receives each descriptor after the 0.2 clamp and before the final
  // renormalization. Test instrumentation only.
  std::function<void(std::span<const float>)> on_clamped_descriptor;
};

struct MatchPair {
  std::size_t garment_kp = 0;
  std::size_t person_kp = 0;
  double distance = 0.0;

  friend bool operator==(const MatchPair&, const MatchPair&) = default;
};

// Keypoints sorted by descending response, each with a unit-norm descriptor.
// Throws ImageTooSmall below 16x16.
std::vector<Keypoint> detect_and_describe(const GrayImage& img, const SiftParams& params = {});

// Nearest/second-nearest L2 search of every keypoint in `a` against `b`.
// A match survives iff d1 < ratio * d2, or unconditionally when b has a single
// keypoint. Throws EmptyKeypoints / InvalidArgument.
std::vector<MatchPair> match_ratio_test(std::span<const Keypoint> a, std::span<const Keypoint> b,
                                        double ratio = 0.75);

double descriptor_distance(const Keypoint& a, const Keypoint& b);

// One record per line: x y size orientation response octave d0..d127.
void write_keypoints(std::ostream& os, std::span<const Keypoint> kps);
std::vector<Keypoint> read_keypoints(std::istream& is);

// One record per line: garment_idx person_idx distance.
void write_matches(std::ostream& os, std::span<const MatchPair> matches);
std::vector<MatchPair> read_matches(std::istream& is);

}  // namespace vtonsift
