#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "vtonsift/error.hpp"
#include "vtonsift/toy.hpp"

using namespace vtonsift;
namespace fs = std::filesystem;

namespace {

const GridSpec kGrid{512, 384, 16, 12};

ToyAttentionLayer identity_layer(int d, int heads) {
  ToyAttentionLayer l{d, heads, Eigen::MatrixXd::Identity(d, d), Eigen::MatrixXd::Identity(d, d)};
  return l;
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

TEST_CASE("identical keys give uniform rows") {
  const Eigen::MatrixXd q = Eigen::MatrixXd::Random(3, 4);
  const Eigen::MatrixXd k = Eigen::MatrixXd::Ones(5, 4);
  const auto attn = forward(identity_layer(4, 2), q, k);
  CHECK(attn.layers == 1);
  CHECK(attn.heads == 2);
  for (double w : attn.weights) CHECK(w == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("large logit margin saturates") {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(1, 4), k = Eigen::MatrixXd::Zero(3, 4);
  q(0, 0) = 1;
  k(1, 0) = 40;  // logit 40 / sqrt(4) = 20 above the rest
  const auto attn = forward(identity_layer(4, 1), q, k);
  CHECK(attn.row(0, 0, 0)[1] >= 0.999);
}

TEST_CASE("single key") {
  const auto attn = forward(identity_layer(2, 1), Eigen::MatrixXd::Random(1, 2), Eigen::MatrixXd::Random(1, 2));
  CHECK(attn.weights == std::vector<double>{1.0});
}

TEST_CASE("forward rows sum to one and dims are checked") {
  const auto layer = make_layer(8, 2, 1.0, 3);
  const auto attn = forward(layer, Eigen::MatrixXd::Random(7, 8), Eigen::MatrixXd::Random(9, 8));
  CHECK(attn.max_row_deviation() <= 1e-12);
  CHECK_THROWS_AS(forward(layer, Eigen::MatrixXd::Random(7, 6), Eigen::MatrixXd::Random(9, 8)), Error);
  CHECK_THROWS_AS(make_layer(6, 4, 0.1, 0), Error);
}

TEST_CASE("features are deterministic and sized by the grid") {
  const FeatureSpec spec;
  const auto a = grid_features(kGrid, spec, 5), b = grid_features(kGrid, spec, 5);
  CHECK(a.rows() == 192);
  CHECK(a.cols() == spec.width);
  CHECK(a == b);
  CHECK(a != grid_features(kGrid, spec, 6));
}

TEST_CASE("gradient check on random instances") {
  FeatureSpec fs{8, 2, 0.3};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const GridSpec g{32, 32, 3, 3};
    const auto q = grid_features(g, fs, s), k = grid_features(g, fs, s + 100);
    const std::vector<ToyAttentionLayer> layers{make_layer(8, 2, 0.7, s), make_layer(8, 2, 0.7, s + 50)};
    const auto ref = synthetic_reference(g, g, 3, 0, 1, s);
    CHECK(grad_check(layers, q, k, ref, 1e-5, s) <= 1e-4);
  }
}

TEST_CASE("stationary symmetric point") {
  const GridSpec g{4, 4, 2, 2};
  ReferenceAttention ref;
  ref.query_grid = ref.key_grid = g;
  ref.entries[0] = QueryDistribution{4, {{0, 1}, {1, 1}, {2, 1}, {3, 1}}};
  ToyAttentionLayer zero{4, 1, Eigen::MatrixXd::Zero(4, 4), Eigen::MatrixXd::Zero(4, 4)};
  const std::vector<ToyAttentionLayer> layers{zero};
  const Eigen::MatrixXd q = Eigen::MatrixXd::Random(4, 4), k = Eigen::MatrixXd::Random(4, 4);
  const auto grad = toy_sift_gradient(layers, q, k, ref);
  CHECK(grad.wq[0].norm() <= 1e-12);
  CHECK(grad.wk[0].norm() <= 1e-12);
  CHECK(grad_check(layers, q, k, ref, 1e-5) <= 1e-4);
  CHECK_THROWS_AS(grad_check(layers, q, k, ref, 0.0), Error);
}

TEST_CASE("zero lambda leaves parameters untouched") {
  ToyTrainConfig cfg;
  cfg.steps = 40;
  cfg.lambda_sift = 0;
  const auto ref = synthetic_reference(kGrid, kGrid, 4, 1, 1, 0);
  const auto r = train_toy(cfg, ref);
  const auto init = make_layer(cfg.features.width, cfg.heads, cfg.init_std, cfg.seed * 4 + 3);
  CHECK(r.layers[0].wq == init.wq);
  CHECK(r.layers[0].wk == init.wk);
  CHECK(r.supervised_steps == 0);
}

TEST_CASE("singleton reference concentrates") {
  ToyTrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.steps = 500;
  const auto ref = synthetic_reference(kGrid, kGrid, 1, 2, -1, 3);
  const auto r = train_toy(cfg, ref);
  CHECK(r.after.argmax_alignment == 1.0);
  CHECK(r.after.mean_supervised_entropy < r.before.mean_supervised_entropy);
}

TEST_CASE("training is deterministic and gated") {
  ToyTrainConfig cfg;
  cfg.steps = 60;
  const auto ref = synthetic_reference(kGrid, kGrid, 5, 0, 1, 2);
  const auto a = train_toy(cfg, ref), b = train_toy(cfg, ref);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.after.query_entropy == b.after.query_entropy);
  CHECK(a.layers[0].wq == b.layers[0].wq);
  CHECK(a.supervised_steps > 0);
  CHECK(a.supervised_steps < cfg.steps);
  cfg.t_min = 501;
  CHECK(train_toy(cfg, ref).supervised_steps == 0);
}

TEST_CASE("loss falls across seeds and attention aligns") {
  int improved = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    ToyTrainConfig cfg;
    cfg.seed = s;
    cfg.steps = 200;
    const auto ref = synthetic_reference(kGrid, kGrid, 6, 1, 2, s);
    const auto r = train_toy(cfg, ref);
    improved += r.after.sift_loss < r.before.sift_loss;
    if (s == 0) {
      CHECK(r.after.argmax_alignment >= 0.9);
      CHECK(r.after.mean_supervised_entropy < r.before.mean_supervised_entropy);
    }
  }
  CHECK(improved >= 9);
}

TEST_CASE("multi-layer training averages over layers") {
  ToyTrainConfig cfg;
  cfg.layers = 2;
  cfg.steps = 150;
  const auto ref = synthetic_reference(kGrid, kGrid, 5, -1, 0, 9);
  const auto r = train_toy(cfg, ref);
  CHECK(r.layers.size() == 2);
  CHECK(r.after.sift_loss < r.before.sift_loss);
}

TEST_CASE("empty reference") {
  ReferenceAttention ref;
  ref.query_grid = ref.key_grid = kGrid;
  CHECK_THROWS_AS(train_toy(ToyTrainConfig{}, ref), Error);
}

TEST_CASE("diagnostics ranges") {
  const auto ref = synthetic_reference(kGrid, kGrid, 8, 1, 1, 4);
  const auto attn = forward(make_layer(32, 2, 0.1, 1), grid_features(kGrid, FeatureSpec{}, 1), grid_features(kGrid, FeatureSpec{}, 2));
  const auto d = diagnose(attn, ref);
  CHECK(d.query_entropy.size() == 192);
  for (double h : d.query_entropy) CHECK((h >= 0 && h <= std::log(192.0) + 1e-12));
  CHECK((d.argmax_alignment >= 0 && d.argmax_alignment <= 1));
}

TEST_CASE("heatmap rendering") {
  const GridSpec g{4, 4, 2, 3};
  AttentionTensor uniform(1, 1, 2, 6, 1.0 / 6);
  const auto flat = render_heatmap(uniform, 0, g, {2, Colormap::Gray});
  CHECK(flat.width == 6);
  CHECK(flat.height == 4);
  for (auto v : flat.data) CHECK(v == flat.data[0]);
  CHECK(std::abs(flat.data[0] - 128) <= 1);

  AttentionTensor hot(1, 2, 1, 6, 0.0);
  hot.row(0, 0, 0)[4] = 1;
  hot.row(0, 1, 0)[4] = 1;
  const auto img = render_heatmap(hot, 0, g, {1, Colormap::Gray});
  int bright = 0;
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) bright += img.pixel(x, y)[0] == 255;
  CHECK(bright == 1);
  CHECK(img.pixel(1, 1)[0] == 255);
  CHECK(img.pixel(0, 0)[0] == 0);

  CHECK_THROWS_AS(render_heatmap(hot, 1, g), Error);
  CHECK(parse_colormap("jet") == Colormap::Jet);
  CHECK_THROWS_AS(parse_colormap("viridis"), Error);
}

TEST_CASE("trained heatmap peaks at the reference cell") {
  ToyTrainConfig cfg;
  const auto ref = synthetic_reference(kGrid, kGrid, 8, 1, 2, 0);
  const auto r = train_toy(cfg, ref);
  const auto attn = forward(r.layers, r.queries, r.keys);
  const fs::path dir = fs::temp_directory_path() / "vtonsift_toy_heatmaps";
  fs::remove_all(dir);
  std::vector<std::size_t> qs;
  for (const auto& [i, d] : ref.entries) qs.push_back(i);
  const auto written = emit_heatmaps(attn, qs, kGrid, dir, {1, Colormap::Gray});
  REQUIRE(written.size() == qs.size());
  std::size_t agree = 0;
  for (std::size_t n = 0; n < qs.size(); ++n) {
    const auto img = read_image(written[n]);
    std::size_t best = 0;
    for (std::size_t c = 0; c < kGrid.cells(); ++c)
      if (img.data[3 * c] > img.data[3 * best]) best = c;
    agree += best == ref.entries.at(static_cast<std::uint32_t>(qs[n])).bins[0].first;
    CHECK(argmax(attn.row(0, 0, qs[n])) < kGrid.cells());
  }
  CHECK(agree >= 7);
  const std::string png = fixtures::slurp(written[0]);
  CHECK(png.find("colormap") != std::string::npos);
  const std::vector<std::size_t> bad{9999};
  CHECK_THROWS_AS(emit_heatmaps(attn, bad, kGrid, dir), Error);
  fs::remove_all(dir);
}
