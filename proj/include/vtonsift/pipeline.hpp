#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vtonsift/filter.hpp"
#include "vtonsift/reference.hpp"
#include "vtonsift/sift.hpp"

namespace vtonsift {

struct Sample {
  std::string id;
  std::filesystem::path garment;
  std::filesystem::path person;
  std::optional<std::filesystem::path> mask;
};

struct DatasetIndex {
  std::vector<Sample> samples;        // sorted by id
  std::vector<std::string> warnings;  // one per skipped stem
};

struct ScanOptions {
  std::string cloth_dir = "cloth";
  std::string image_dir = "image";
  // Optional directory of person-side masks with the same stems.
  std::optional<std::string> mask_dir;
};

// Pairs files by stem across the garment and person directories. Accepts
// .png and .ppm. Throws MissingDirectory when either directory is absent.
DatasetIndex scan_dataset(const std::filesystem::path& root, const ScanOptions& opts = {});

struct PreprocessConfig {
  SiftParams sift;
  double ratio = 0.75;
  FilterConfig filter;
  std::vector<Resolution> resolutions = default_resolutions();
  int workers = 1;
};

struct SampleOutcome {
  std::string id;
  bool ok = false;
  std::string error;
  FilterReport report;
  std::size_t garment_keypoints = 0;
  std::size_t person_keypoints = 0;
  std::size_t ratio_matches = 0;
};

struct PreprocessSummary {
  std::size_t samples = 0;
  std::size_t processed = 0;
  std::size_t failed = 0;
  std::size_t zero_match_samples = 0;  // processed samples with no surviving match
  std::size_t input = 0;
  std::size_t after_angle_scale = 0;
  std::size_t after_dedup = 0;
  std::size_t after_ransac = 0;
  double elapsed_seconds = 0.0;  // not part of the written summary
  std::vector<SampleOutcome> outcomes;
};

// Per-sample RANSAC seed; depends only on the global seed and the sample id,
// so results do not depend on scheduling.
std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& id);

// Runs detect -> match -> filter -> reference for one sample and writes its
// cache directory <out>/<id>/.
SampleOutcome preprocess_sample(const Sample& sample, const PreprocessConfig& cfg, const std::filesystem::path& out);

// Bounded worker pool over samples. Per-sample failures are recorded and do
// not stop the run. Writes <out>/summary.txt.
PreprocessSummary preprocess_all(const DatasetIndex& index, const PreprocessConfig& cfg,
                                 const std::filesystem::path& out);

void write_summary(std::ostream& os, const PreprocessSummary& summary);

// Side-by-side garment|person composite with one line per match; colours
// are keyed by match index.
RgbImage render_overlay(const RgbImage& garment, const RgbImage& person, std::span<const MatchPair> matches,
                        std::span<const Keypoint> kps_g, std::span<const Keypoint> kps_p);
Rgb match_color(std::size_t index);

}  // namespace vtonsift
