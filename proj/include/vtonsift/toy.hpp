#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vtonsift/loss.hpp"
#include "vtonsift/reference.hpp"

namespace vtonsift {

// Cross-attention without a value path: only the attention weights are
// supervised, so only the query/key projections exist.
struct ToyAttentionLayer {
  int width = 0;  // d
  int heads = 1;  // H, divides d
  Eigen::MatrixXd wq;  // d x d
  Eigen::MatrixXd wk;  // d x d

  int head_dim() const { return width / heads; }
  void validate() const;
};

ToyAttentionLayer make_layer(int width, int heads, double init_std, std::uint64_t seed);

// Softmax attention of every query row over every key row, per head.
// queries: Nq x d, keys: Nk x d. Returns a tensor with one layer.
AttentionTensor forward(const ToyAttentionLayer& layer, const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys);
AttentionTensor forward(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                        const Eigen::MatrixXd& keys);

struct FeatureSpec {
  int width = 32;
  int frequencies = 8;  // sin/cos pairs per axis; 4 * frequencies must not exceed width
  double noise_std = 0.05;
};

// Sinusoidal encoding of each cell centre plus seeded Gaussian noise; rows
// are cells in row-major order.
Eigen::MatrixXd grid_features(const GridSpec& grid, const FeatureSpec& spec, std::uint64_t seed);

struct ToyGradient {
  std::vector<Eigen::MatrixXd> wq;
  std::vector<Eigen::MatrixXd> wk;
};

// Unweighted L_SIFT of the stacked layers against a single reference.
double toy_sift_loss(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                     const Eigen::MatrixXd& keys, const ReferenceAttention& ref, double epsilon_floor = 1e-12);

// Analytic parameter gradient of toy_sift_loss, chained from (q - p).
ToyGradient toy_sift_gradient(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries,
                              const Eigen::MatrixXd& keys, const ReferenceAttention& ref);

// Central-difference check over a seeded subset of at least `samples`
// parameters (all parameters when fewer). Relative error uses the
// denominator max(|analytic|, |numeric|, 1e-8). Throws InvalidArgument for
// step <= 0.
double grad_check(std::span<const ToyAttentionLayer> layers, const Eigen::MatrixXd& queries, const Eigen::MatrixXd& keys,
                  const ReferenceAttention& ref, double step, std::uint64_t seed = 0, std::size_t samples = 50);

struct AttentionDiagnostics {
  std::vector<double> query_entropy;  // per query, mean over layers and heads
  double mean_supervised_entropy = 0.0;
  double argmax_alignment = 0.0;      // fraction of supervised queries
  double sift_loss = 0.0;
};

AttentionDiagnostics diagnose(const AttentionTensor& attn, const ReferenceAttention& ref, double epsilon_floor = 1e-12);

struct ToyTrainConfig {
  double learning_rate = 2.0;
  int steps = 500;
  std::uint64_t seed = 0;
  double lambda_sift = 1.0;
  std::int64_t eta = 500;
  std::int64_t t_min = 0;
  std::int64_t t_max = 999;
  int layers = 1;
  int heads = 2;
  double init_std = 0.1;
  FeatureSpec features;

  void validate() const;
};

struct ToyTrainResult {
  std::vector<ToyAttentionLayer> layers;
  Eigen::MatrixXd queries;
  Eigen::MatrixXd keys;
  AttentionDiagnostics before;
  AttentionDiagnostics after;
  std::vector<double> loss_history;  // L_SIFT before each step, then after the last
  int supervised_steps = 0;          // steps whose sampled t passed the gate
};

// Plain gradient descent on lambda * L_SIFT with the t <= eta gate; the
// denoising term is absent. Throws NoSupervisedQueries on an empty reference.
ToyTrainResult train_toy(const ToyTrainConfig& cfg, const ReferenceAttention& ref);

// One-hot reference: `count` distinct query cells, each pointing at the key
// cell displaced by (shift_rows, shift_cols), clamped into the key grid.
ReferenceAttention synthetic_reference(const GridSpec& query_grid, const GridSpec& key_grid, std::size_t count,
                                       int shift_rows, int shift_cols, std::uint64_t seed);

enum class Colormap { Gray, Jet };

std::string to_string(Colormap cmap);
Colormap parse_colormap(const std::string& name);

struct HeatmapOptions {
  int cell_px = 16;
  Colormap colormap = Colormap::Gray;
};

// Row averaged over layers and heads, min-max normalized; a flat row renders
// as a uniform 0.5.
RgbImage render_heatmap(const AttentionTensor& attn, std::size_t query, const GridSpec& key_grid,
                        const HeatmapOptions& opts = {});

// Writes query_<i>.png per index; the colormap name is stored in a tEXt chunk.
std::vector<std::filesystem::path> emit_heatmaps(const AttentionTensor& attn, std::span<const std::size_t> queries,
                                                 const GridSpec& key_grid, const std::filesystem::path& out_dir,
                                                 const HeatmapOptions& opts = {});

}  // namespace vtonsift
