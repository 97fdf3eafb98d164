#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vtonsift/imgproc.hpp"
#include "vtonsift/sift.hpp"

namespace vtonsift {

// Relationship between an image and the feature grid that attends over it.
struct GridSpec {
  int image_h = 0;
  int image_w = 0;
  int grid_h = 0;
  int grid_w = 0;

  std::size_t cells() const { return static_cast<std::size_t>(grid_h) * static_cast<std::size_t>(grid_w); }
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Histogram of key cells hit by the matches of one supervised query.
struct QueryDistribution {
  std::uint32_t total = 0;                                    // n_i
  std::vector<std::pair<std::uint32_t, std::uint32_t>> bins;  // (key index j, count), ascending j

  double probability(std::size_t k) const { return static_cast<double>(bins[k].second) / total; }

  friend bool operator==(const QueryDistribution&, const QueryDistribution&) = default;
};

// Target attention p_{i,j} for one feature resolution. Only queries with at
// least one match are stored.
struct ReferenceAttention {
  GridSpec query_grid;
  GridSpec key_grid;
  std::map<std::uint32_t, QueryDistribution> entries;

  std::size_t supervised_count() const { return entries.size(); }
  // Dense row over all key cells for query i (zeros when unsupervised).
  std::vector<double> dense_row(std::uint32_t query) const;

  friend bool operator==(const ReferenceAttention&, const ReferenceAttention&) = default;
};

// Floor-maps an image coordinate into a row-major grid cell. Coordinates
// exactly on the right/bottom edge clamp into the last cell; anything
// outside [0, image_w] x [0, image_h] throws OutOfBounds.
std::uint32_t image_to_grid(double x, double y, const GridSpec& grid);

// Optional binary mask over the person image; a match is dropped when its
// person keypoint falls on a mask pixel below 0.5.
struct PersonMask {
  GrayImage mask;
  bool contains(double x, double y) const;
};

ReferenceAttention build_reference(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                   std::span<const Keypoint> kps_p, const GridSpec& query_grid,
                                   const GridSpec& key_grid, const PersonMask* mask = nullptr);

struct Resolution {
  int grid_h = 0;
  int grid_w = 0;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

// 64x48, 32x24, 16x12, 8x6: the halving ladder below an 8x-downsampled
// 512x384 latent.
std::vector<Resolution> default_resolutions();

// One reference per resolution; query grids cover the person image, key
// grids the garment image. An empty resolution list yields an empty result.
std::vector<ReferenceAttention> build_multiscale(std::span<const MatchPair> matches, std::span<const Keypoint> kps_g,
                                                 std::span<const Keypoint> kps_p, int person_h, int person_w,
                                                 int garment_h, int garment_w, std::span<const Resolution> resolutions,
                                                 const PersonMask* mask = nullptr);

// Header "REFATTN1 <query grid> <key grid> <count>", each grid written as
// image_h image_w grid_h grid_w; then per supervised query: i n_i (j p)...
void write_reference(std::ostream& os, const ReferenceAttention& ref);
ReferenceAttention read_reference(std::istream& is);

std::vector<Resolution> parse_resolutions(const std::string& text);

}  // namespace vtonsift
