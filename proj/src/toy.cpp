#include "vtonsift/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "vtonsift/error.hpp"

namespace vtonsift {

namespace {

// Box-Muller on mt19937_64 output; std::normal_distribution is not
// reproducible across standard libraries.
class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  std::uint64_t raw() { return rng_(); }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

void check_features(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                    const Eigen::MatrixXd& keys) {
  if (layers.empty()) throw Error(ErrorCode::InvalidArgument, "at least one attention layer required");
  for (const auto& layer : layers) {
    layer.validate();
    if (layer.width != layers.front().width || layer.heads != layers.front().heads) {
      throw Error(ErrorCode::DimMismatch, "all layers must share width and head count");
    }
  }
  const int d = layers.front().width;
  if (queries.cols() != d || keys.cols() != d) {
    throw Error(ErrorCode::DimMismatch, "feature width " + std::to_string(queries.cols()) + "/" +
                                            std::to_string(keys.cols()) + " does not match model width " +
                                            std::to_string(d));
  }
  if (queries.rows() == 0 || keys.rows() == 0) throw Error(ErrorCode::DimMismatch, "empty feature matrix");
}

void softmax_rows(Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp();
    m.row(r) /= m.row(r).sum();
  }
}

// Attention of one head as an Nq x Nk matrix.
Eigen::MatrixXd head_attention(const Eigen::MatrixXd& qp, const Eigen::MatrixXd& kp, int head, int dh) {
  const double tau = 1.0 / std::sqrt(static_cast<double>(dh));
  Eigen::MatrixXd logits = qp.middleCols(head * dh, dh) * kp.middleCols(head * dh, dh).transpose() * tau;
  softmax_rows(logits);
  return logits;
}

void check_reference(const ReferenceAttention& ref, const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys) {
  if (ref.query_grid.cells() != static_cast<std::size_t>(queries.rows()) ||
      ref.key_grid.cells() != static_cast<std::size_t>(keys.rows())) {
    throw Error(ErrorCode::ResolutionMismatch, "reference grids do not match feature rows");
  }
}

std::size_t reference_argmax(const QueryDistribution& dist) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < dist.bins.size(); ++k)
    if (dist.bins[k].second > dist.bins[best].second) best = k;
  return dist.bins[best].first;
}

Rgb colorize(double v, Colormap cmap) {
  v = std::clamp(v, 0.0, 1.0);
  auto byte = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
  if (cmap == Colormap::Gray) {
    const auto g = byte(v);
    return {g, g, g};
  }
  // Piecewise-linear jet.
  const double r = std::clamp(1.5 - std::abs(4.0 * v - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::abs(4.0 * v - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::abs(4.0 * v - 1.0), 0.0, 1.0);
  return {byte(r), byte(g), byte(b)};
}

}  // namespace

void ToyAttentionLayer::validate() const {
  if (width <= 0 || heads <= 0 || width % heads != 0) {
    throw Error(ErrorCode::InvalidArgument, "heads must divide width (" + std::to_string(width) + "/" +
                                                std::to_string(heads) + ")");
  }
  if (wq.rows() != width || wq.cols() != width || wk.rows() != width || wk.cols() != width) {
    throw Error(ErrorCode::DimMismatch, "projection matrices must be width x width");
  }
  if (!wq.allFinite() || !wk.allFinite()) throw Error(ErrorCode::InvalidArgument, "non-finite projection weights");
}

ToyAttentionLayer make_layer(int width, int heads, double init_std, std::uint64_t seed) {
  ToyAttentionLayer layer;
  layer.width = width;
  layer.heads = heads;
  layer.wq.resize(width, width);
  layer.wk.resize(width, width);
  Gaussian g(seed);
  for (Eigen::Index i = 0; i < layer.wq.size(); ++i) layer.wq.data()[i] = init_std * g();
  for (Eigen::Index i = 0; i < layer.wk.size(); ++i) layer.wk.data()[i] = init_std * g();
  layer.validate();
  return layer;
}

AttentionTensor forward(const ToyAttentionLayer& layer, const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys) {
  return forward(std::span<const ToyAttentionLayer>(&layer, 1), queries, keys);
}

AttentionTensor forward(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                        const Eigen::MatrixXd& keys) {
  check_features(layers, queries, keys);
  const int heads = layers.front().heads, dh = layers.front().head_dim();
  AttentionTensor out(layers.size(), heads, queries.rows(), keys.rows());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Eigen::MatrixXd qp = queries * layers[l].wq.transpose();
    const Eigen::MatrixXd kp = keys * layers[l].wk.transpose();
    for (int h = 0; h < heads; ++h) {
      const Eigen::MatrixXd a = head_attention(qp, kp, h, dh);
      for (Eigen::Index i = 0; i < a.rows(); ++i) {
        auto row = out.row(l, h, i);
        for (Eigen::Index j = 0; j < a.cols(); ++j) row[j] = a(i, j);
      }
    }
  }
  return out;
}

Eigen::MatrixXd grid_features(const GridSpec& grid, const FeatureSpec& spec, std::uint64_t seed) {
  if (spec.width <= 0 || spec.frequencies < 0 || 4 * spec.frequencies > spec.width) {
    throw Error(ErrorCode::InvalidArgument, "feature width must hold 4 * frequencies encodings");
  }
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.cells()), spec.width);
  Gaussian g(seed);
  for (int r = 0; r < grid.grid_h; ++r) {
    for (int c = 0; c < grid.grid_w; ++c) {
      const Eigen::Index row = static_cast<Eigen::Index>(r) * grid.grid_w + c;
      const double u = (c + 0.5) / grid.grid_w, v = (r + 0.5) / grid.grid_h;
      for (int k = 0; k < spec.frequencies; ++k) {
        const double w = std::numbers::pi * (k + 1);
        f(row, 4 * k + 0) = std::sin(w * u);
        f(row, 4 * k + 1) = std::cos(w * u);
        f(row, 4 * k + 2) = std::sin(w * v);
        f(row, 4 * k + 3) = std::cos(w * v);
      }
      for (int k = 0; k < spec.width; ++k) f(row, k) += spec.noise_std * g();
    }
  }
  return f;
}

double toy_sift_loss(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                     const Eigen::MatrixXd& keys, const ReferenceAttention& ref, double epsilon_floor) {
  check_reference(ref, queries, keys);
  const AttentionTensor attn = forward(layers, queries, keys);
  return sift_loss_total(std::span<const ReferenceAttention>(&ref, 1), std::span<const AttentionTensor>(&attn, 1),
                         epsilon_floor);
}

ToyGradient toy_sift_gradient(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                              const Eigen::MatrixXd& keys, const ReferenceAttention& ref) {
  check_features(layers, queries, keys);
  check_reference(ref, queries, keys);
  const int heads = layers.front().heads, dh = layers.front().head_dim(), d = layers.front().width;
  const double tau = 1.0 / std::sqrt(static_cast<double>(dh));

  ToyGradient grad;
  const std::size_t supervised = ref.supervised_count();
  grad.wq.assign(layers.size(), Eigen::MatrixXd::Zero(d, d));
  grad.wk.assign(layers.size(), Eigen::MatrixXd::Zero(d, d));
  if (supervised == 0) return grad;
  const double scale = 1.0 / (static_cast<double>(layers.size()) * heads * supervised);

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Eigen::MatrixXd qp = queries * layers[l].wq.transpose();
    const Eigen::MatrixXd kp = keys * layers[l].wk.transpose();
    Eigen::MatrixXd dqp = Eigen::MatrixXd::Zero(qp.rows(), d);
    Eigen::MatrixXd dkp = Eigen::MatrixXd::Zero(kp.rows(), d);
    for (int h = 0; h < heads; ++h) {
      const Eigen::MatrixXd a = head_attention(qp, kp, h, dh);
      Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(a.rows(), a.cols());
      for (const auto& [i, dist] : ref.entries) {
        const std::vector<double> p = ref.dense_row(i);
        std::vector<double> q(a.cols());
        for (Eigen::Index j = 0; j < a.cols(); ++j) q[j] = a(i, j);
        const auto g = sift_loss_gradient(p, q, scale);
        for (Eigen::Index j = 0; j < a.cols(); ++j) dlogits(i, j) = g[j];
      }
      dqp.middleCols(h * dh, dh) += dlogits * kp.middleCols(h * dh, dh) * tau;
      dkp.middleCols(h * dh, dh) += dlogits.transpose() * qp.middleCols(h * dh, dh) * tau;
    }
    grad.wq[l] = dqp.transpose() * queries;
    grad.wk[l] = dkp.transpose() * keys;
  }
  return grad;
}

double grad_check(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                  const ReferenceAttention& ref, double step, std::uint64_t seed, std::size_t samples) {
  if (!(step > 0.0) || !std::isfinite(step)) throw Error(ErrorCode::InvalidArgument, "perturbation step must be positive");
  const ToyGradient analytic = toy_sift_gradient(layers, queries, keys, ref);

  const std::size_t per_matrix = static_cast<std::size_t>(layers.front().width) * layers.front().width;
  const std::size_t total = per_matrix * 2 * layers.size();
  std::vector<std::size_t> params(total);
  std::iota(params.begin(), params.end(), 0);
  if (samples < total) {
    Gaussian rng(seed);
    for (std::size_t i = 0; i < samples; ++i) std::swap(params[i], params[i + rng.raw() % (total - i)]);
    params.resize(samples);
  }

  std::vector<ToyAttentionLayer> work(layers.begin(), layers.end());
  double worst = 0.0;
  for (std::size_t p : params) {
    const std::size_t l = p / (2 * per_matrix);
    const bool is_key = (p / per_matrix) % 2 == 1;
    const std::size_t k = p % per_matrix;
    double& w = is_key ? work[l].wk.data()[k] : work[l].wq.data()[k];
    const double a = is_key ? analytic.wk[l].data()[k] : analytic.wq[l].data()[k];
    const double orig = w;
    w = orig + step;
    const double up = toy_sift_loss(work, queries, keys, ref);
    w = orig - step;
    const double down = toy_sift_loss(work, queries, keys, ref);
    w = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

AttentionDiagnostics diagnose(const AttentionTensor& attn, const ReferenceAttention& ref, double epsilon_floor) {
  if (ref.query_grid.cells() != attn.queries || ref.key_grid.cells() != attn.keys) {
    throw Error(ErrorCode::ResolutionMismatch, "reference grids do not match attention shape");
  }
  AttentionDiagnostics diag;
  diag.query_entropy.assign(attn.queries, 0.0);
  const double rows = static_cast<double>(attn.layers * attn.heads);
  for (std::size_t i = 0; i < attn.queries; ++i) {
    double acc = 0.0;
    for (std::size_t l = 0; l < attn.layers; ++l) {
      for (std::size_t h = 0; h < attn.heads; ++h) {
        double e = 0.0;
        for (double q : attn.row(l, h, i))
          if (q > 0.0) e -= q * std::log(q);
        acc += e;
      }
    }
    diag.query_entropy[i] = acc / rows;
  }

  std::size_t aligned = 0;
  double entropy_sum = 0.0;
  for (const auto& [i, dist] : ref.entries) {
    entropy_sum += diag.query_entropy[i];
    std::vector<double> mean(attn.keys, 0.0);
    for (std::size_t l = 0; l < attn.layers; ++l)
      for (std::size_t h = 0; h < attn.heads; ++h) {
        const auto row = attn.row(l, h, i);
        for (std::size_t j = 0; j < attn.keys; ++j) mean[j] += row[j];
      }
    const auto argmax = static_cast<std::size_t>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    if (argmax == reference_argmax(dist)) ++aligned;
  }
  if (!ref.entries.empty()) {
    diag.mean_supervised_entropy = entropy_sum / ref.entries.size();
    diag.argmax_alignment = static_cast<double>(aligned) / ref.entries.size();
  }
  diag.sift_loss = sift_loss_total(std::span<const ReferenceAttention>(&ref, 1),
                                   std::span<const AttentionTensor>(&attn, 1), epsilon_floor);
  return diag;
}

void ToyTrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning rate must be positive");
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "step count must be >= 1");
  if (!(lambda_sift >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda_sift must be >= 0");
  if (t_min < 0 || t_max < t_min) throw Error(ErrorCode::InvalidArgument, "timestep range must satisfy 0 <= t_min <= t_max");
  if (layers < 1) throw Error(ErrorCode::InvalidArgument, "at least one layer required");
  if (heads < 1 || features.width % heads != 0) throw Error(ErrorCode::InvalidArgument, "heads must divide feature width");
}

ToyTrainResult train_toy(const ToyTrainConfig& cfg, const ReferenceAttention& ref) {
  cfg.validate();
  if (ref.entries.empty()) throw Error(ErrorCode::NoSupervisedQueries, "reference has no supervised queries");

  // Independent seed streams: features, per-layer init, timestep sampling.
  ToyTrainResult result;
  result.queries = grid_features(ref.query_grid, cfg.features, cfg.seed * 4 + 1);
  result.keys = grid_features(ref.key_grid, cfg.features, cfg.seed * 4 + 2);
  for (int l = 0; l < cfg.layers; ++l) {
    result.layers.push_back(make_layer(cfg.features.width, cfg.heads, cfg.init_std, cfg.seed * 4 + 3 + 1000003ull * l));
  }
  Gaussian timesteps(cfg.seed * 4 + 4);
  const auto t_span = static_cast<std::uint64_t>(cfg.t_max - cfg.t_min) + 1;

  result.before = diagnose(forward(result.layers, result.queries, result.keys), ref);
  for (int step = 0; step < cfg.steps; ++step) {
    result.loss_history.push_back(toy_sift_loss(result.layers, result.queries, result.keys, ref));
    const std::int64_t t = cfg.t_min + static_cast<std::int64_t>(timesteps.raw() % t_span);
    if (t > cfg.eta || cfg.lambda_sift == 0.0) continue;
    ++result.supervised_steps;
    const ToyGradient g = toy_sift_gradient(result.layers, result.queries, result.keys, ref);
    const double rate = cfg.learning_rate * cfg.lambda_sift;
    for (std::size_t l = 0; l < result.layers.size(); ++l) {
      result.layers[l].wq -= rate * g.wq[l];
      result.layers[l].wk -= rate * g.wk[l];
    }
  }
  const AttentionTensor final_attn = forward(result.layers, result.queries, result.keys);
  result.after = diagnose(final_attn, ref);
  result.loss_history.push_back(result.after.sift_loss);
  return result;
}

ReferenceAttention synthetic_reference(const GridSpec& query_grid, const GridSpec& key_grid, std::size_t count,
                                       int shift_rows, int shift_cols, std::uint64_t seed) {
  query_grid.validate();
  key_grid.validate();
  if (count > query_grid.cells()) throw Error(ErrorCode::InvalidArgument, "more supervised queries than query cells");
  std::vector<std::uint32_t> cells(query_grid.cells());
  std::iota(cells.begin(), cells.end(), 0u);
  Gaussian rng(seed);
  for (std::size_t i = 0; i < count; ++i) std::swap(cells[i], cells[i + rng.raw() % (cells.size() - i)]);

  ReferenceAttention ref;
  ref.query_grid = query_grid;
  ref.key_grid = key_grid;
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint32_t i = cells[n];
    const int qr = static_cast<int>(i) / query_grid.grid_w, qc = static_cast<int>(i) % query_grid.grid_w;
    const int kr = std::clamp(qr * key_grid.grid_h / query_grid.grid_h + shift_rows, 0, key_grid.grid_h - 1);
    const int kc = std::clamp(qc * key_grid.grid_w / query_grid.grid_w + shift_cols, 0, key_grid.grid_w - 1);
    QueryDistribution dist;
    dist.total = 1;
    dist.bins.emplace_back(static_cast<std::uint32_t>(kr * key_grid.grid_w + kc), 1u);
    ref.entries.emplace(i, std::move(dist));
  }
  return ref;
}

std::string to_string(Colormap cmap) { return cmap == Colormap::Gray ? "gray" : "jet"; }

Colormap parse_colormap(const std::string& name) {
  if (name == "gray") return Colormap::Gray;
  if (name == "jet") return Colormap::Jet;
  throw Error(ErrorCode::InvalidArgument, "unknown colormap '" + name + "'");
}

RgbImage render_heatmap(const AttentionTensor& attn, std::size_t query, const GridSpec& key_grid,
                        const HeatmapOptions& opts) {
  if (query >= attn.queries) {
    throw Error(ErrorCode::IndexOutOfRange, "query " + std::to_string(query) + " >= " + std::to_string(attn.queries));
  }
  if (key_grid.cells() != attn.keys) throw Error(ErrorCode::ResolutionMismatch, "key grid does not match attention keys");
  if (opts.cell_px < 1) throw Error(ErrorCode::InvalidArgument, "cell_px must be >= 1");

  std::vector<double> mean(attn.keys, 0.0);
  for (std::size_t l = 0; l < attn.layers; ++l)
    for (std::size_t h = 0; h < attn.heads; ++h) {
      const auto row = attn.row(l, h, query);
      for (std::size_t j = 0; j < attn.keys; ++j) mean[j] += row[j];
    }
  const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
  const double min = *lo, range = *hi - *lo;

  RgbImage img(key_grid.grid_w * opts.cell_px, key_grid.grid_h * opts.cell_px);
  for (int r = 0; r < key_grid.grid_h; ++r) {
    for (int c = 0; c < key_grid.grid_w; ++c) {
      const double v = range > 0.0 ? (mean[static_cast<std::size_t>(r) * key_grid.grid_w + c] - min) / range : 0.5;
      const Rgb color = colorize(v, opts.colormap);
      for (int y = r * opts.cell_px; y < (r + 1) * opts.cell_px; ++y)
        for (int x = c * opts.cell_px; x < (c + 1) * opts.cell_px; ++x) {
          auto* p = img.pixel(x, y);
          p[0] = color.r;
          p[1] = color.g;
          p[2] = color.b;
        }
    }
  }
  return img;
}

std::vector<std::filesystem::path> emit_heatmaps(const AttentionTensor& attn, std::span<const std::size_t> queries,
                                                 const GridSpec& key_grid, const std::filesystem::path& out_dir,
                                                 const HeatmapOptions& opts) {
  for (std::size_t q : queries)
    if (q >= attn.queries) throw Error(ErrorCode::IndexOutOfRange, "query " + std::to_string(q) + " out of range");
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t q : queries) {
    const RgbImage img = render_heatmap(attn, q, key_grid, opts);
    const auto path = out_dir / ("query_" + std::to_string(q) + ".png");
    write_file(path, encode_png(img, {{"colormap", to_string(opts.colormap)}, {"query", std::to_string(q)}}));
    written.push_back(path);
  }
  return written;
}

}  // namespace vtonsift
