#include "vtonsift/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <thread>

#include "vtonsift/error.hpp"

namespace vtonsift {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

std::map<std::string, fs::path> stems_in(const fs::path& dir, std::vector<std::string>& warnings) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    const auto [it, inserted] = out.emplace(stem, entry.path());
    if (!inserted) {
      // Keep the lexicographically first path so the choice is stable.
      if (entry.path() < it->second) it->second = entry.path();
      warnings.push_back("duplicate stem '" + stem + "' in " + dir.string());
    }
  }
  return out;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

template <typename Fn>
void write_text(const fs::path& path, Fn&& body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::IoError, "cannot open for writing: " + path.string());
  body(f);
  if (!f) throw Error(ErrorCode::IoError, "write failed: " + path.string());
}

}  // namespace

DatasetIndex scan_dataset(const fs::path& root, const ScanOptions& opts) {
  const fs::path cloth = root / opts.cloth_dir, image = root / opts.image_dir;
  for (const auto& dir : {cloth, image}) {
    if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingDirectory, dir.string());
  }
  DatasetIndex index;
  const auto garments = stems_in(cloth, index.warnings);
  const auto persons = stems_in(image, index.warnings);
  std::map<std::string, fs::path> masks;
  if (opts.mask_dir) {
    const fs::path mdir = root / *opts.mask_dir;
    if (!fs::is_directory(mdir)) throw Error(ErrorCode::MissingDirectory, mdir.string());
    masks = stems_in(mdir, index.warnings);
  }

  for (const auto& [stem, path] : garments) {
    const auto it = persons.find(stem);
    if (it == persons.end()) {
      index.warnings.push_back("skipped '" + stem + "': no person image");
      continue;
    }
    Sample s{stem, path, it->second, std::nullopt};
    if (const auto m = masks.find(stem); m != masks.end()) s.mask = m->second;
    index.samples.push_back(std::move(s));
  }
  for (const auto& [stem, path] : persons) {
    if (!garments.contains(stem)) index.warnings.push_back("skipped '" + stem + "': no garment image");
  }
  return index;
}

std::uint64_t sample_seed(std::uint64_t global_seed, const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : id) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return splitmix64(global_seed ^ h);
}

SampleOutcome preprocess_sample(const Sample& sample, const PreprocessConfig& cfg, const fs::path& out) {
  SampleOutcome outcome;
  outcome.id = sample.id;
  const fs::path dir = out / sample.id;
  try {
    const RgbImage garment_rgb = read_image(sample.garment);
    const RgbImage person_rgb = read_image(sample.person);
    const GrayImage garment = to_gray(garment_rgb);
    const GrayImage person = to_gray(person_rgb);

    const std::vector<Keypoint> kps_g = detect_and_describe(garment, cfg.sift);
    std::vector<Keypoint> kps_p = detect_and_describe(person, cfg.sift);
    if (sample.mask) {
      PersonMask mask{to_gray(read_image(*sample.mask))};
      if (mask.mask.width != person.width || mask.mask.height != person.height) {
        throw Error(ErrorCode::DimMismatch, "mask size differs from person image");
      }
      std::erase_if(kps_p, [&](const Keypoint& kp) { return !mask.contains(kp.x, kp.y); });
    }
    outcome.garment_keypoints = kps_g.size();
    outcome.person_keypoints = kps_p.size();

    std::vector<MatchPair> raw;
    if (!kps_g.empty() && !kps_p.empty()) raw = match_ratio_test(kps_g, kps_p, cfg.ratio);
    outcome.ratio_matches = raw.size();

    FilterConfig fc = cfg.filter;
    fc.ransac_seed = sample_seed(cfg.filter.ransac_seed, sample.id);
    const CascadeResult filtered = run_filter_cascade(raw, kps_g, kps_p, fc);
    const auto refs = build_multiscale(filtered.matches, kps_g, kps_p, person.height, person.width, garment.height,
                                       garment.width, cfg.resolutions);

    fs::create_directories(dir);
    write_text(dir / "keypoints_garment.txt", [&](std::ostream& os) { write_keypoints(os, kps_g); });
    write_text(dir / "keypoints_person.txt", [&](std::ostream& os) { write_keypoints(os, kps_p); });
    write_text(dir / "matches.txt", [&](std::ostream& os) { write_matches(os, filtered.matches); });
    write_text(dir / "report.txt", [&](std::ostream& os) { write_report(os, filtered.report); });
    for (std::size_t r = 0; r < refs.size(); ++r) {
      const auto name = "ref_" + std::to_string(cfg.resolutions[r].grid_h) + "x" +
                        std::to_string(cfg.resolutions[r].grid_w) + ".txt";
      write_text(dir / name, [&](std::ostream& os) { write_reference(os, refs[r]); });
    }
    outcome.report = filtered.report;
    outcome.ok = true;
  } catch (const std::exception& e) {
    outcome.ok = false;
    outcome.error = e.what();
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  return outcome;
}

PreprocessSummary preprocess_all(const DatasetIndex& index, const PreprocessConfig& cfg, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(out);
  PreprocessSummary summary;
  summary.samples = index.samples.size();
  summary.outcomes.resize(index.samples.size());

  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next.fetch_add(1); i < index.samples.size(); i = next.fetch_add(1)) {
      summary.outcomes[i] = preprocess_sample(index.samples[i], cfg, out);
    }
  };
  const int workers = std::clamp<int>(cfg.workers, 1, static_cast<int>(std::max<std::size_t>(1, index.samples.size())));
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
  }

  for (const auto& o : summary.outcomes) {
    if (!o.ok) {
      ++summary.failed;
      continue;
    }
    ++summary.processed;
    summary.input += o.report.input;
    summary.after_angle_scale += o.report.after_angle_scale;
    summary.after_dedup += o.report.after_dedup;
    summary.after_ransac += o.report.after_ransac;
    if (o.report.after_ransac == 0) ++summary.zero_match_samples;
  }
  write_text(out / "summary.txt", [&](std::ostream& os) { write_summary(os, summary); });
  summary.elapsed_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

void write_summary(std::ostream& os, const PreprocessSummary& s) {
  char frac[32];
  std::snprintf(frac, sizeof(frac), "%.9g",
                s.processed ? static_cast<double>(s.zero_match_samples) / static_cast<double>(s.processed) : 0.0);
  os << "samples=" << s.samples << '\n'
     << "processed=" << s.processed << '\n'
     << "failed=" << s.failed << '\n'
     << "input=" << s.input << '\n'
     << "after_angle_scale=" << s.after_angle_scale << '\n'
     << "after_dedup=" << s.after_dedup << '\n'
     << "after_ransac=" << s.after_ransac << '\n'
     << "zero_match_samples=" << s.zero_match_samples << '\n'
     << "zero_match_fraction=" << frac << '\n';
  for (const auto& o : s.outcomes) {
    if (o.ok) {
      os << "sample " << o.id << " ok keypoints=" << o.garment_keypoints << '/' << o.person_keypoints
         << " ratio=" << o.ratio_matches << " kept=" << o.report.after_ransac << '\n';
    } else {
      os << "sample " << o.id << " error " << o.error << '\n';
    }
  }
}

Rgb match_color(std::size_t index) {
  const std::uint64_t h = splitmix64(index);
  // Keep every colour reasonably bright against dark image content.
  return {static_cast<std::uint8_t>(64 + (h & 0xbf)), static_cast<std::uint8_t>(64 + ((h >> 8) & 0xbf)),
          static_cast<std::uint8_t>(64 + ((h >> 16) & 0xbf))};
}

RgbImage render_overlay(const RgbImage& garment, const RgbImage& person, std::span<const MatchPair> matches,
                        std::span<const Keypoint> kps_g, std::span<const Keypoint> kps_p) {
  RgbImage out(garment.width + person.width, std::max(garment.height, person.height));
  blit(out, garment, 0, 0);
  blit(out, person, garment.width, 0);
  for (std::size_t i = 0; i < matches.size(); ++i) {
    const auto& m = matches[i];
    if (m.garment_kp >= kps_g.size() || m.person_kp >= kps_p.size()) {
      throw Error(ErrorCode::IndexOutOfRange, "overlay match references a missing keypoint");
    }
    const Keypoint& g = kps_g[m.garment_kp];
    const Keypoint& p = kps_p[m.person_kp];
    draw_line(out, static_cast<int>(std::lround(g.x)), static_cast<int>(std::lround(g.y)),
              garment.width + static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y)), match_color(i));
  }
  return out;
}

}  // namespace vtonsift
