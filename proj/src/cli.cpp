#include "vtonsift/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "vtonsift/error.hpp"
#include "vtonsift/filter.hpp"
#include "vtonsift/imgproc.hpp"
#include "vtonsift/loss.hpp"
#include "vtonsift/pipeline.hpp"
#include "vtonsift/reference.hpp"
#include "vtonsift/sift.hpp"
#include "vtonsift/toy.hpp"

namespace vtonsift {

namespace fs = std::filesystem;

namespace {

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot open: " + path.string());
  return f;
}

void save_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<Keypoint> load_keypoints(const fs::path& path) {
  auto f = open_in(path);
  return read_keypoints(f);
}

std::vector<MatchPair> load_matches(const fs::path& path) {
  auto f = open_in(path);
  return read_matches(f);
}

ReferenceAttention load_reference(const fs::path& path) {
  auto f = open_in(path);
  return read_reference(f);
}

std::pair<int, int> parse_size(const std::string& text) {
  const auto r = parse_resolutions(text);
  if (r.size() != 1) throw Error(ErrorCode::ParseError, "expected a single HxW size, got '" + text + "'");
  return {r[0].grid_h, r[0].grid_w};
}

std::vector<std::size_t> parse_index_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "bad index '" + item + "'");
    }
  }
  return out;
}

// key=value lines; '#' starts a comment. Keys use option names with either
// '-' or '_' separators.
std::map<std::string, std::string> read_config(const fs::path& path) {
  auto f = open_in(path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(f, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ValidationError("config line " + std::to_string(lineno) + " lacks '='");
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '_', '-');
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct SiftOptions {
  double contrast = SiftParams{}.contrast_threshold;
  double edge_ratio = SiftParams{}.edge_ratio;
  bool upsample = false;

  void attach(CLI::App* app) {
    app->add_option("--contrast", contrast, "DoG contrast threshold on [0,1] images")->capture_default_str();
    app->add_option("--edge-ratio", edge_ratio, "principal curvature ratio limit")->capture_default_str();
    app->add_option("--upsample", upsample, "double the input before building the pyramid")->capture_default_str();
  }
  SiftParams params() const {
    SiftParams p;
    p.contrast_threshold = contrast;
    p.edge_ratio = edge_ratio;
    p.upsample_input = upsample;
    return p;
  }
};

struct FilterOptions {
  FilterConfig cfg;

  void attach(CLI::App* app) {
    app->add_option("--angle-max", cfg.angle_max_deg, "max orientation change in degrees")->capture_default_str();
    app->add_option("--scale-min", cfg.scale_ratio_min, "min person/garment size ratio")->capture_default_str();
    app->add_option("--scale-max", cfg.scale_ratio_max, "max person/garment size ratio")->capture_default_str();
    app->add_option("--ransac-thresh", cfg.ransac_reproj_px, "RANSAC inlier threshold in pixels")->capture_default_str();
    app->add_option("--ransac-iters", cfg.ransac_iters, "RANSAC iterations")->capture_default_str();
  }
};

struct Globals {
  std::uint64_t seed = 0;
  int workers = 1;
  std::string config;
};

int cmd_detect(const std::string& image, const std::string& out_path, const SiftOptions& so, std::ostream& out) {
  const GrayImage gray = to_gray(read_image(image));
  const auto kps = detect_and_describe(gray, so.params());
  std::ostringstream os;
  write_keypoints(os, kps);
  save_text(out_path, os.str());
  out << "keypoints=" << kps.size() << '\n';
  return 0;
}

int cmd_match(const std::string& a, const std::string& b, const std::string& out_path, double ratio, std::ostream& out) {
  const auto kg = load_keypoints(a);
  const auto kp = load_keypoints(b);
  const auto matches = match_ratio_test(kg, kp, ratio);
  std::ostringstream os;
  write_matches(os, matches);
  save_text(out_path, os.str());
  out << "matches=" << matches.size() << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"SIFT correspondence filtering and cross-attention supervision toolkit", "vtonsift"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.fallthrough();

  Globals globals;
  app.add_option("--seed", globals.seed, "global seed (RANSAC, toy training)")->capture_default_str();
  app.add_option("--workers", globals.workers, "preprocessing worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--config", globals.config, "key=value file overriding defaults");

  // detect
  std::string detect_image, detect_out;
  SiftOptions detect_sift;
  auto* detect = app.add_subcommand("detect", "detect SIFT keypoints in an image");
  detect->add_option("image", detect_image)->required()->check(CLI::ExistingFile);
  detect->add_option("-o,--out", detect_out, "keypoint file")->required();
  detect_sift.attach(detect);

  // match
  std::string match_a, match_b, match_out;
  double match_ratio = 0.75;
  auto* match = app.add_subcommand("match", "ratio-test matching of garment keypoints against person keypoints");
  match->add_option("garment_keypoints", match_a)->required()->check(CLI::ExistingFile);
  match->add_option("person_keypoints", match_b)->required()->check(CLI::ExistingFile);
  match->add_option("-o,--out", match_out, "match file")->required();
  match->add_option("--ratio", match_ratio, "Lowe ratio threshold")->capture_default_str();

  // filter
  std::string filter_matches, filter_kg, filter_kp, filter_out, filter_report;
  FilterOptions filter_opts;
  auto* filter = app.add_subcommand("filter", "angle/scale gate, dedup and RANSAC over a match file");
  filter->add_option("matches", filter_matches)->required()->check(CLI::ExistingFile);
  filter->add_option("garment_keypoints", filter_kg)->required()->check(CLI::ExistingFile);
  filter->add_option("person_keypoints", filter_kp)->required()->check(CLI::ExistingFile);
  filter->add_option("-o,--out", filter_out, "filtered match file")->required();
  filter->add_option("--report", filter_report, "filter report file");
  filter_opts.attach(filter);

  // refattn
  std::string ref_matches, ref_kg, ref_kp, ref_out_dir, ref_person_size = "512x384", ref_garment_size = "512x384",
                                                        ref_resolutions = "64x48,32x24,16x12,8x6", ref_mask;
  auto* refattn = app.add_subcommand("refattn", "build reference attention distributions from filtered matches");
  refattn->add_option("matches", ref_matches)->required()->check(CLI::ExistingFile);
  refattn->add_option("garment_keypoints", ref_kg)->required()->check(CLI::ExistingFile);
  refattn->add_option("person_keypoints", ref_kp)->required()->check(CLI::ExistingFile);
  refattn->add_option("--out-dir", ref_out_dir, "output directory")->required();
  refattn->add_option("--person-size", ref_person_size, "person image HxW")->capture_default_str();
  refattn->add_option("--garment-size", ref_garment_size, "garment image HxW")->capture_default_str();
  refattn->add_option("--resolutions", ref_resolutions, "comma-separated HxW grids")->capture_default_str();
  refattn->add_option("--mask", ref_mask, "person-side binary mask image")->check(CLI::ExistingFile);

  // loss
  std::string loss_attn;
  std::vector<std::string> loss_refs;
  double loss_lambda = 0.0005, loss_denoise = 0.0, loss_floor = 1e-12;
  std::int64_t loss_eta = 500, loss_t = 0;
  auto* loss = app.add_subcommand("loss", "evaluate the SIFT attention loss and the gated combined objective");
  loss->add_option("--attn", loss_attn, "ATN1 attention file")->required()->check(CLI::ExistingFile);
  loss->add_option("--ref", loss_refs, "reference attention file(s)")->required()->check(CLI::ExistingFile)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  loss->add_option("--lambda", loss_lambda, "SIFT loss weight")->capture_default_str();
  loss->add_option("--eta", loss_eta, "timestep threshold (inclusive)")->capture_default_str();
  loss->add_option("--t", loss_t, "diffusion timestep")->capture_default_str();
  loss->add_option("--denoise", loss_denoise, "denoising loss value")->capture_default_str();
  loss->add_option("--floor", loss_floor, "log stabilization floor")->capture_default_str();

  // train-toy
  ToyTrainConfig toy;
  std::string toy_ref, toy_out_dir, toy_grid = "16x12", toy_colormap = "gray";
  std::size_t toy_queries = 8;
  int toy_shift_rows = 1, toy_shift_cols = 2;
  auto* train = app.add_subcommand("train-toy", "train a toy cross-attention layer under SIFT supervision");
  train->add_option("--ref", toy_ref, "reference attention file (default: synthetic one-hot reference)")
      ->check(CLI::ExistingFile);
  train->add_option("--out-dir", toy_out_dir, "output directory")->required();
  train->add_option("--grid", toy_grid, "synthetic reference grid HxW")->capture_default_str();
  train->add_option("--queries", toy_queries, "synthetic supervised queries")->capture_default_str();
  train->add_option("--shift-rows", toy_shift_rows, "synthetic correspondence row shift")->capture_default_str();
  train->add_option("--shift-cols", toy_shift_cols, "synthetic correspondence column shift")->capture_default_str();
  train->add_option("--steps", toy.steps)->capture_default_str();
  train->add_option("--lr", toy.learning_rate)->capture_default_str();
  train->add_option("--lambda", toy.lambda_sift)->capture_default_str();
  train->add_option("--eta", toy.eta)->capture_default_str();
  train->add_option("--t-min", toy.t_min)->capture_default_str();
  train->add_option("--t-max", toy.t_max)->capture_default_str();
  train->add_option("--layers", toy.layers)->capture_default_str();
  train->add_option("--heads", toy.heads)->capture_default_str();
  train->add_option("--width", toy.features.width)->capture_default_str();
  train->add_option("--frequencies", toy.features.frequencies)->capture_default_str();
  train->add_option("--noise", toy.features.noise_std)->capture_default_str();
  train->add_option("--colormap", toy_colormap)->capture_default_str();

  // heatmap
  std::string heat_attn, heat_grid, heat_queries, heat_out_dir, heat_colormap = "gray";
  int heat_cell = 16;
  auto* heatmap = app.add_subcommand("heatmap", "render attention rows of an ATN1 file as PNG heatmaps");
  heatmap->add_option("--attn", heat_attn)->required()->check(CLI::ExistingFile);
  heatmap->add_option("--key-grid", heat_grid, "key grid HxW")->required();
  heatmap->add_option("--queries", heat_queries, "comma-separated query indices")->required();
  heatmap->add_option("--out-dir", heat_out_dir)->required();
  heatmap->add_option("--colormap", heat_colormap)->capture_default_str();
  heatmap->add_option("--cell-px", heat_cell)->capture_default_str();

  // overlay
  std::string ov_garment, ov_person, ov_matches, ov_kg, ov_kp, ov_out;
  auto* overlay = app.add_subcommand("overlay", "draw matches between garment and person images");
  overlay->add_option("garment_image", ov_garment)->required()->check(CLI::ExistingFile);
  overlay->add_option("person_image", ov_person)->required()->check(CLI::ExistingFile);
  overlay->add_option("matches", ov_matches)->required()->check(CLI::ExistingFile);
  overlay->add_option("garment_keypoints", ov_kg)->required()->check(CLI::ExistingFile);
  overlay->add_option("person_keypoints", ov_kp)->required()->check(CLI::ExistingFile);
  overlay->add_option("-o,--out", ov_out)->required();

  // preprocess
  std::string pre_root, pre_out, pre_cloth = "cloth", pre_image = "image", pre_mask,
                                 pre_resolutions = "64x48,32x24,16x12,8x6";
  double pre_ratio = 0.75;
  SiftOptions pre_sift;
  FilterOptions pre_filter;
  auto* preprocess = app.add_subcommand("preprocess", "build the correspondence cache for a dataset");
  preprocess->add_option("root", pre_root)->required()->check(CLI::ExistingDirectory);
  preprocess->add_option("--out", pre_out, "cache directory")->required();
  preprocess->add_option("--cloth-dir", pre_cloth)->capture_default_str();
  preprocess->add_option("--image-dir", pre_image)->capture_default_str();
  preprocess->add_option("--mask-dir", pre_mask);
  preprocess->add_option("--ratio", pre_ratio)->capture_default_str();
  preprocess->add_option("--resolutions", pre_resolutions)->capture_default_str();
  pre_sift.attach(preprocess);
  pre_filter.attach(preprocess);

  // Config values are injected ahead of the user's own flags so explicit
  // flags win under TakeLast.
  std::vector<std::string> argv(args.begin() + (args.empty() ? 0 : 1), args.end());
  try {
    std::string config_path;
    for (std::size_t i = 0; i < argv.size(); ++i) {
      if (argv[i] == "--config" && i + 1 < argv.size()) config_path = argv[i + 1];
      if (argv[i].rfind("--config=", 0) == 0) config_path = argv[i].substr(9);
    }
    if (!config_path.empty()) {
      const auto kv = read_config(config_path);
      const std::vector<CLI::App*> subs = app.get_subcommands({});
      const auto sub_pos = std::find_if(argv.begin(), argv.end(), [&](const std::string& a) {
        return std::any_of(subs.begin(), subs.end(), [&](const CLI::App* s) { return s->get_name() == a; });
      });
      CLI::App* sub = sub_pos == argv.end() ? nullptr : app.get_subcommand(*sub_pos);
      std::vector<std::string> global_inject, sub_inject;
      for (const auto& [key, value] : kv) {
        const std::string flag = "--" + key;
        if (key == "config") continue;
        if (app.get_option_no_throw(flag)) {
          global_inject.insert(global_inject.end(), {flag, value});
        } else if (sub && sub->get_option_no_throw(flag)) {
          sub_inject.insert(sub_inject.end(), {flag, value});
        } else {
          const bool known = std::any_of(subs.begin(), subs.end(),
                                         [&](const CLI::App* s) { return s->get_option_no_throw(flag) != nullptr; });
          if (!known) throw CLI::ValidationError("unknown config key '" + key + "'");
        }
      }
      const auto insert_at = sub_pos == argv.end() ? argv.end() : sub_pos + 1;
      const auto offset = insert_at - argv.begin();
      argv.insert(argv.begin() + offset, sub_inject.begin(), sub_inject.end());
      argv.insert(argv.begin(), global_inject.begin(), global_inject.end());
    }
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*detect) return cmd_detect(detect_image, detect_out, detect_sift, out);
    if (*match) return cmd_match(match_a, match_b, match_out, match_ratio, out);

    if (*filter) {
      const auto matches = load_matches(filter_matches);
      const auto kg = load_keypoints(filter_kg);
      const auto kp = load_keypoints(filter_kp);
      FilterConfig cfg = filter_opts.cfg;
      cfg.ransac_seed = globals.seed;
      const auto result = run_filter_cascade(matches, kg, kp, cfg);
      std::ostringstream ms, rs;
      write_matches(ms, result.matches);
      write_report(rs, result.report);
      save_text(filter_out, ms.str());
      if (!filter_report.empty()) save_text(filter_report, rs.str());
      out << rs.str();
      return 0;
    }

    if (*refattn) {
      const auto matches = load_matches(ref_matches);
      const auto kg = load_keypoints(ref_kg);
      const auto kp = load_keypoints(ref_kp);
      const auto [ph, pw] = parse_size(ref_person_size);
      const auto [gh, gw] = parse_size(ref_garment_size);
      const auto resolutions = parse_resolutions(ref_resolutions);
      std::optional<PersonMask> mask;
      if (!ref_mask.empty()) mask = PersonMask{to_gray(read_image(ref_mask))};
      const auto refs = build_multiscale(matches, kg, kp, ph, pw, gh, gw, resolutions, mask ? &*mask : nullptr);
      fs::create_directories(ref_out_dir);
      for (std::size_t r = 0; r < refs.size(); ++r) {
        std::ostringstream os;
        write_reference(os, refs[r]);
        const auto name = "ref_" + std::to_string(resolutions[r].grid_h) + "x" + std::to_string(resolutions[r].grid_w) + ".txt";
        save_text(fs::path(ref_out_dir) / name, os.str());
        out << name << " supervised=" << refs[r].supervised_count() << '\n';
      }
      return 0;
    }

    if (*loss) {
      const AttentionTensor attn = read_attention(loss_attn);
      std::vector<ReferenceAttention> refs;
      for (const auto& path : loss_refs) refs.push_back(load_reference(path));
      reference_for(refs, attn);
      const double sift = sift_loss_total(refs, std::span(&attn, 1), loss_floor);
      LossConfig cfg;
      cfg.lambda_sift = loss_lambda;
      cfg.eta = loss_eta;
      cfg.epsilon_floor = loss_floor;
      out << "combined=" << g9(combined_loss(loss_denoise, loss_t, sift, cfg)) << '\n'
          << "sift=" << g9(sift) << '\n';
      return 0;
    }

    if (*train) {
      toy.seed = globals.seed;
      ReferenceAttention ref;
      if (!toy_ref.empty()) {
        ref = load_reference(toy_ref);
      } else {
        const auto [gh, gw] = parse_size(toy_grid);
        const GridSpec grid{gh * 32, gw * 32, gh, gw};
        ref = synthetic_reference(grid, grid, toy_queries, toy_shift_rows, toy_shift_cols, globals.seed);
      }
      const auto result = train_toy(toy, ref);
      fs::create_directories(toy_out_dir);
      std::ostringstream diag;
      diag << "supervised_queries=" << ref.supervised_count() << '\n'
           << "steps=" << toy.steps << '\n'
           << "supervised_steps=" << result.supervised_steps << '\n'
           << "initial_loss=" << g9(result.before.sift_loss) << '\n'
           << "final_loss=" << g9(result.after.sift_loss) << '\n'
           << "initial_mean_entropy=" << g9(result.before.mean_supervised_entropy) << '\n'
           << "final_mean_entropy=" << g9(result.after.mean_supervised_entropy) << '\n'
           << "initial_argmax_alignment=" << g9(result.before.argmax_alignment) << '\n'
           << "final_argmax_alignment=" << g9(result.after.argmax_alignment) << '\n';
      save_text(fs::path(toy_out_dir) / "diagnostics.txt", diag.str());
      std::ostringstream hist;
      for (std::size_t s = 0; s < result.loss_history.size(); ++s) hist << s << ' ' << g9(result.loss_history[s]) << '\n';
      save_text(fs::path(toy_out_dir) / "loss.txt", hist.str());

      AttentionTensor attn = forward(result.layers, result.queries, result.keys);
      write_attention(fs::path(toy_out_dir) / "attention.atn", attn);
      std::vector<std::size_t> supervised;
      for (const auto& [i, dist] : ref.entries) supervised.push_back(i);
      emit_heatmaps(attn, supervised, ref.key_grid, fs::path(toy_out_dir) / "heatmaps",
                    HeatmapOptions{16, parse_colormap(toy_colormap)});
      out << diag.str();
      return 0;
    }

    if (*heatmap) {
      const AttentionTensor attn = read_attention(heat_attn);
      const auto [kh, kw] = parse_size(heat_grid);
      const GridSpec key_grid{kh, kw, kh, kw};
      const auto queries = parse_index_list(heat_queries);
      const auto written = emit_heatmaps(attn, queries, key_grid, heat_out_dir,
                                         HeatmapOptions{heat_cell, parse_colormap(heat_colormap)});
      for (const auto& p : written) out << p.string() << '\n';
      return 0;
    }

    if (*overlay) {
      const RgbImage g = read_image(ov_garment);
      const RgbImage p = read_image(ov_person);
      const auto matches = load_matches(ov_matches);
      const auto kg = load_keypoints(ov_kg);
      const auto kp = load_keypoints(ov_kp);
      write_file(ov_out, encode_png(render_overlay(g, p, matches, kg, kp)));
      out << "lines=" << matches.size() << '\n';
      return 0;
    }

    if (*preprocess) {
      ScanOptions scan;
      scan.cloth_dir = pre_cloth;
      scan.image_dir = pre_image;
      if (!pre_mask.empty()) scan.mask_dir = pre_mask;
      const DatasetIndex index = scan_dataset(pre_root, scan);
      for (const auto& w : index.warnings) err << "warning: " << w << '\n';
      PreprocessConfig cfg;
      cfg.sift = pre_sift.params();
      cfg.ratio = pre_ratio;
      cfg.filter = pre_filter.cfg;
      cfg.filter.ransac_seed = globals.seed;
      cfg.resolutions = parse_resolutions(pre_resolutions);
      cfg.workers = globals.workers;
      const auto summary = preprocess_all(index, cfg, pre_out);
      std::ostringstream os;
      write_summary(os, summary);
      out << os.str() << "elapsed_seconds=" << g9(summary.elapsed_seconds) << '\n';
      for (const auto& o : summary.outcomes)
        if (!o.ok) err << "sample " << o.id << " failed: " << o.error << '\n';
      return summary.failed > 0 ? 1 : 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace vtonsift
