#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "vtonsift/cli.hpp"
#include "vtonsift/loss.hpp"

using namespace vtonsift;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "vtonsift");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "vtonsift_cli";
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

// One supervised query (cell 0) pointing at key 0; attention uniform over 4 keys.
void loss_fixture(const Workspace& w, int key_cells = 4) {
  std::ofstream(w / "ref.txt") << "REFATTN1 1 1 1 1 1 4 1 4 1\n0 1 0 1\n";
  write_attention(w / "attn.atn", AttentionTensor(1, 1, 1, key_cells, 1.0 / key_cells));
}

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"loss"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("loss of a one-hot reference under uniform attention") {
  Workspace w;
  loss_fixture(w);
  const auto r = cli({"loss", "--attn", w / "attn.atn", "--ref", w / "ref.txt", "--lambda", "1", "--t", "0"});
  REQUIRE(r.code == 0);
  CHECK(value_of(r.out, "sift") == "1.38629436");
  CHECK(std::stod(value_of(r.out, "combined")) == doctest::Approx(std::log(4.0)).epsilon(1e-8));

  const auto gated = cli({"loss", "--attn", w / "attn.atn", "--ref", w / "ref.txt", "--lambda", "1", "--t", "501",
                          "--eta", "500", "--denoise", "0.75"});
  REQUIRE(gated.code == 0);
  CHECK(value_of(gated.out, "combined") == "0.75");
}

TEST_CASE("loss rejects mismatched grids and bad files") {
  Workspace w;
  loss_fixture(w, 6);
  const auto r = cli({"loss", "--attn", w / "attn.atn", "--ref", w / "ref.txt"});
  CHECK(r.code == 1);
  CHECK(r.err.find("ResolutionMismatch") != std::string::npos);
  std::ofstream(w / "garbage.atn") << "nope";
  CHECK(cli({"loss", "--attn", w / "garbage.atn", "--ref", w / "ref.txt"}).err.find("ParseError") != std::string::npos);
}

TEST_CASE("config file supplies defaults, flags win") {
  Workspace w;
  loss_fixture(w);
  std::ofstream(w / "cfg.txt") << "# loss settings\nlambda = 2\neta=10\nt=5\n";
  const auto a = cli({"--config", w / "cfg.txt", "loss", "--attn", w / "attn.atn", "--ref", w / "ref.txt"});
  REQUIRE(a.code == 0);
  CHECK(std::stod(value_of(a.out, "combined")) == doctest::Approx(2 * std::log(4.0)));
  const auto b = cli({"--config", w / "cfg.txt", "loss", "--attn", w / "attn.atn", "--ref", w / "ref.txt", "--t", "11"});
  REQUIRE(b.code == 0);
  CHECK(value_of(b.out, "combined") == "0");

  std::ofstream(w / "bad.txt") << "no_such_option=1\n";
  CHECK(cli({"--config", w / "bad.txt", "loss", "--attn", w / "attn.atn", "--ref", w / "ref.txt"}).code == 2);
}

TEST_CASE("detect, match, filter, refattn and overlay chain") {
  Workspace w;
  const auto img = fixtures::to_rgb8(fixtures::noise_texture(96, 128, 3));
  write_file(w / "g.png", encode_png(img));
  write_file(w / "p.ppm", encode_ppm(img));
  REQUIRE(cli({"detect", w / "g.png", "-o", w / "kg.txt"}).code == 0);
  REQUIRE(cli({"detect", w / "p.ppm", "--out", w / "kp.txt", "--contrast", "0.03"}).code == 0);
  CHECK(fixtures::slurp(w / "kg.txt") == fixtures::slurp(w / "kp.txt"));

  const auto m = cli({"match", w / "kg.txt", w / "kp.txt", "-o", w / "m.txt", "--ratio", "0.8"});
  REQUIRE(m.code == 0);
  const auto f = cli({"--seed", "3", "filter", w / "m.txt", w / "kg.txt", w / "kp.txt", "-o", w / "f.txt", "--report",
                      w / "rep.txt", "--angle-max", "30"});
  REQUIRE(f.code == 0);
  CHECK(value_of(f.out, "after_angle_scale") == value_of(f.out, "input"));
  CHECK(fs::exists(w / "rep.txt"));

  const auto r = cli({"refattn", w / "f.txt", w / "kg.txt", w / "kp.txt", "--out-dir", w / "refs", "--person-size",
                      "128x96", "--garment-size", "128x96", "--resolutions", "16x12,8x6"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(w / "refs/ref_16x12.txt"));
  CHECK(fs::exists(w / "refs/ref_8x6.txt"));

  REQUIRE(cli({"overlay", w / "g.png", w / "p.ppm", w / "f.txt", w / "kg.txt", w / "kp.txt", "-o", w / "ov.png"}).code == 0);
  const auto ov = read_image(w / "ov.png");
  CHECK(ov.width == 192);
  CHECK(ov.height == 128);
}

TEST_CASE("train-toy and heatmap outputs") {
  Workspace w;
  const auto r = cli({"--seed", "1", "train-toy", "--out-dir", w / "toy", "--steps", "120", "--queries", "5"});
  REQUIRE(r.code == 0);
  for (const char* f : {"diagnostics.txt", "loss.txt", "attention.atn"}) CHECK(fs::exists(w.dir / "toy" / f));
  CHECK(std::stod(value_of(r.out, "final_loss")) < std::stod(value_of(r.out, "initial_loss")));
  std::size_t maps = 0;
  for (const auto& e : fs::directory_iterator(w.dir / "toy" / "heatmaps")) maps += e.path().extension() == ".png";
  CHECK(maps == 5);

  const auto h = cli({"heatmap", "--attn", w / "toy/attention.atn", "--key-grid", "16x12", "--queries", "0,5",
                      "--out-dir", w / "hm", "--colormap", "jet", "--cell-px", "4"});
  REQUIRE(h.code == 0);
  const auto img = read_image(w / "hm/query_5.png");
  CHECK(img.width == 48);
  CHECK(img.height == 64);
  CHECK(cli({"heatmap", "--attn", w / "toy/attention.atn", "--key-grid", "16x12", "--queries", "999", "--out-dir",
             w / "hm"}).code == 1);
}

TEST_CASE("preprocess exit status reflects sample failures") {
  Workspace w;
  const auto img = fixtures::to_rgb8(fixtures::noise_texture(96, 96, 2));
  fs::create_directories(w.dir / "ds/cloth");
  fs::create_directories(w.dir / "ds/image");
  write_file(w / "ds/cloth/a.png", encode_png(img));
  write_file(w / "ds/image/a.png", encode_png(img));
  const auto ok = cli({"--workers", "2", "preprocess", w / "ds", "--out", w / "cache"});
  CHECK(ok.code == 0);
  CHECK(value_of(ok.out, "processed") == "1");
  CHECK(!value_of(ok.out, "elapsed_seconds").empty());

  std::ofstream(w / "ds/cloth/b.png") << "broken";
  write_file(w / "ds/image/b.png", encode_png(img));
  const auto bad = cli({"preprocess", w / "ds", "--out", w / "cache2"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("sample b failed") != std::string::npos);
  CHECK(cli({"preprocess", w / "missing", "--out", w / "c3"}).code == 2);
}
