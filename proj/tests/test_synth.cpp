#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "attrcenter/synth/dataset.hpp"
#include "attrcenter/synth/png_io.hpp"
#include "attrcenter/synth/tps.hpp"
#include "test_util.hpp"

using namespace attrcenter;
using ad::Shape;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attrcenter_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Direct (non-separable) 2-D Gaussian with clamped borders.
Tensor blur_direct(const Tensor& img, double sigma) {
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  const long H = static_cast<long>(img.dim(0)), W = static_cast<long>(img.dim(1));
  Tensor out(img.shape(), 0.0);
  double norm = 0.0;
  for (long i = -r; i <= r; ++i) norm += std::exp(-0.5 * i * i / (sigma * sigma));
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double acc = 0.0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = std::clamp(y + dy, 0L, H - 1), xx = std::clamp(x + dx, 0L, W - 1);
          acc += std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma)) * img.at(yy, xx);
        }
      out.at(y, x) = acc / (norm * norm);
    }
  return out;
}

lattice::AttributeCombination desk_combo(std::size_t hair, std::size_t skin, std::size_t glasses) {
  const auto schema = lattice::AttributeSchema::desk_preset();
  const std::vector<std::size_t> s{hair, skin, glasses};
  return schema.combination(s);
}

}  // namespace

TEST_CASE("xdog on a constant image is constant") {
  for (double v : {0.0, 0.3, 0.7, 1.0}) {
    const Tensor img(Shape{12, 9}, v);
    const Tensor out = synth::xdog_filter(img, {});
    for (std::size_t i = 1; i < out.numel(); ++i) CHECK(out[i] == doctest::Approx(out[0]).epsilon(1e-12));
  }
}

TEST_CASE("xdog step edge matches a direct two-pass oracle") {
  Tensor img(Shape{16, 16}, 0.9);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 8; x < 16; ++x) img.at(y, x) = 0.2;
  const synth::XdogParams p;
  const Tensor g1 = blur_direct(img, p.sigma), g2 = blur_direct(img, p.k * p.sigma);
  const Tensor out = synth::xdog_filter(img, p);
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double d = g1[i] - p.tau * g2[i];
    const double expected = std::clamp(d >= p.epsilon ? 1.0 : 1.0 + std::tanh(p.phi * (d - p.epsilon)), 0.0, 1.0);
    CHECK(out[i] == doctest::Approx(expected).epsilon(1e-9));
  }
  // The darkest column is within a pixel of the 7|8 boundary; far columns stay white.
  double darkest = 2.0;
  std::size_t at = 0;
  for (std::size_t x = 0; x < 16; ++x)
    if (out.at(8, x) < darkest) darkest = out.at(8, x), at = x;
  CHECK(darkest < 0.5);
  CHECK((at >= 7 && at <= 9));
  CHECK(out.at(8, 0) == 1.0);
  CHECK(out.at(8, 15) > 0.9);
}

TEST_CASE("xdog output range and parameter checks") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Tensor out = synth::xdog_filter(testutil::random_tensor(rng, {10, 10}, 0, 1), {0.8, 1.6, 0.98, 30, 0.0});
    for (double v : out.data()) CHECK((v >= 0.0 && v <= 1.0));
  }
  CHECK_THROWS(synth::xdog_filter(Tensor(Shape{4, 4}, 0.0), {0.0, 1.6, 0.98, 10, 0.01}));
  CHECK_THROWS(synth::xdog_filter(Tensor(Shape{4, 4}, 0.0), {1.0, 1.0, 0.98, 10, 0.01}));
}

TEST_CASE("tps with zero displacement is the identity") {
  std::mt19937_64 rng(2);
  const Tensor img = testutil::random_tensor(rng, {3, 20, 24}, 0, 1);
  const auto ctrl = synth::control_grid(20, 24);
  CHECK(ctrl.size() == 25);
  const Tensor out = synth::tps_deform(img, ctrl, std::vector<synth::Point>(25));
  CHECK(max_abs_diff(out, img) < 1e-9);
}

TEST_CASE("tps with equal displacements translates the image") {
  std::mt19937_64 rng(3);
  const Tensor img = testutil::random_tensor(rng, {20, 20}, 0, 1);
  const auto ctrl = synth::control_grid(20, 20);
  const std::vector<synth::Point> shift(25, synth::Point{2.0, -1.0});
  const Tensor out = synth::tps_deform(img, ctrl, shift);
  for (std::size_t y = 0; y < 19; ++y)
    for (std::size_t x = 2; x < 20; ++x) CHECK(std::abs(out.at(y, x) - img.at(y + 1, x - 2)) < 1e-6);

  // Fractional translation is still affine: compare against bilinear sampling.
  const std::vector<synth::Point> frac(25, synth::Point{0.4, 0.7});
  const Tensor out2 = synth::tps_deform(img, ctrl, frac);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      CHECK(std::abs(out2.at(y, x) - synth::sample_bilinear(img, 0, static_cast<double>(x) - 0.4,
                                                            static_cast<double>(y) - 0.7)) < 1e-6);
    }
}

TEST_CASE("tps interpolates its control points") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 10; ++t) {
    const auto from = synth::control_grid(40, 30);
    std::vector<synth::Point> to = from;
    for (auto& p : to) p = {p.x + u(rng), p.y + u(rng)};
    const synth::ThinPlateSpline f(from, to);
    for (std::size_t i = 0; i < from.size(); ++i) {
      const auto q = f(from[i]);
      CHECK(std::abs(q.x - to[i].x) < 1e-6);
      CHECK(std::abs(q.y - to[i].y) < 1e-6);
    }
  }
}

TEST_CASE("tps rejects degenerate input") {
  const std::vector<synth::Point> line{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  CHECK_THROWS_AS(synth::ThinPlateSpline(line, line), synth::TpsError);
  const Tensor img(Shape{8, 8}, 0.5);
  CHECK_THROWS_AS(synth::tps_deform(img, {{-1, 2}, {3, 3}, {5, 1}}, std::vector<synth::Point>(3)), synth::TpsError);
}

TEST_CASE("random tps respects its displacement bound") {
  std::mt19937_64 rng(5);
  const auto d = synth::random_displacements(1000, 2.5, rng);
  for (const auto& p : d) CHECK(std::hypot(p.x, p.y) <= 2.5 + 1e-12);
  const Tensor img = testutil::random_tensor(rng, {3, 16, 16}, 0, 1);
  std::mt19937_64 a(9), b(9);
  CHECK(synth::random_tps(img, a) == synth::random_tps(img, b));
}

TEST_CASE("scale_crop contract") {
  std::mt19937_64 rng(6);
  const Tensor img = testutil::random_tensor(rng, {3, 250, 200}, 0, 1);
  CHECK(synth::scale_crop(img, 1.0, 1.0, 250, 200) == img);

  const synth::ScaleCropConfig cfg{250, 200, 1.15};
  for (int t = 0; t < 5; ++t) CHECK(synth::scale_crop(img, rng, cfg).shape() == Shape{3, 250, 200});
  const Tensor small = testutil::random_tensor(rng, {20, 30}, 0, 1);
  for (int t = 0; t < 20; ++t) CHECK(synth::scale_crop(small, rng, {24, 30, 1.1}).shape() == Shape{24, 30});

  CHECK_THROWS(synth::scale_crop(small, 1.0, 1.0, 21, 30));
}

TEST_CASE("unequal axis factors change the aspect ratio") {
  Tensor img(Shape{60, 60}, 0.0);
  for (std::size_t y = 20; y < 40; ++y)
    for (std::size_t x = 20; x < 40; ++x) img.at(y, x) = 1.0;
  auto extents = [](const Tensor& t) {
    double rows = 0.0, cols = 0.0;
    for (std::size_t y = 0; y < t.dim(0); ++y) rows += t.at(y, t.dim(1) / 2);
    for (std::size_t x = 0; x < t.dim(1); ++x) cols += t.at(t.dim(0) / 2, x);
    return std::make_pair(rows, cols);
  };
  const auto [h0, w0] = extents(img);
  const auto [h1, w1] = extents(synth::scale_crop(img, 1.2, 1.0, 60, 60));
  CHECK(h0 == doctest::Approx(20.0));
  CHECK(w0 == doctest::Approx(20.0));
  CHECK(w1 == doctest::Approx(20.0));
  CHECK((h1 / w1) / (h0 / w0) == doctest::Approx(1.2).epsilon(1e-6));
}

TEST_CASE("horizontal flip") {
  std::mt19937_64 rng(7);
  const Tensor img = testutil::random_tensor(rng, {3, 5, 7}, 0, 1);
  const Tensor f = synth::flip_horizontal(img);
  CHECK(synth::flip_horizontal(f) == img);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 7; ++x) CHECK(f[(c * 5 + y) * 7 + x] == img[(c * 5 + y) * 7 + (6 - x)]);
  for (int t = 0; t < 20; ++t) {
    CHECK(synth::hflip(img, rng, 0.0) == img);
    CHECK(synth::hflip(img, rng, 1.0) == f);
  }
}

TEST_CASE("rendering is deterministic and hides colour attributes from the sketch") {
  const auto schema = lattice::AttributeSchema::desk_preset();
  const auto cfg = synth::RenderConfig::style_a();
  const auto a = synth::make_identity(17, desk_combo(1, 1, 0), 42);
  const auto a2 = synth::make_identity(17, desk_combo(1, 1, 0), 42);
  const auto fa = synth::render_identity(a, schema, cfg), fa2 = synth::render_identity(a2, schema, cfg);
  CHECK(fa.photo == fa2.photo);
  CHECK(fa.sketch == fa2.sketch);
  CHECK(fa.photo.shape() == Shape{3, 32, 32});
  CHECK(fa.sketch.shape() == Shape{32, 32});

  // Same identity, different hair colour and skin tone.
  for (const auto& combo : {desk_combo(2, 1, 0), desk_combo(3, 2, 0), desk_combo(0, 0, 0)}) {
    const auto b = synth::make_identity(17, combo, 42);
    const auto fb = synth::render_identity(b, schema, cfg);
    CHECK(fb.sketch == fa.sketch);
    CHECK_FALSE(fb.photo == fa.photo);
  }

  // Glasses are geometric: both modalities change.
  const auto g = synth::make_identity(17, desk_combo(1, 1, 1), 42);
  const auto fg = synth::render_identity(g, schema, cfg);
  CHECK_FALSE(fg.sketch == fa.sketch);
  CHECK_FALSE(fg.photo == fa.photo);
}

TEST_CASE("hair differences are confined to the hair region of the photo") {
  const auto schema = lattice::AttributeSchema::desk_preset();
  auto cfg = synth::RenderConfig::style_a(48, 48);
  cfg.photo_noise = 0.0;
  const auto a = synth::render_identity(synth::make_identity(3, desk_combo(1, 1, 0), 8), schema, cfg);
  const auto b = synth::render_identity(synth::make_identity(3, desk_combo(2, 1, 0), 8), schema, cfg);
  std::size_t differing = 0, lower_half = 0;
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 48; ++x) {
      if (a.photo[y * 48 + x] != b.photo[y * 48 + x]) {
        ++differing;
        if (y > 40) ++lower_half;
      }
    }
  CHECK(differing > 0);
  CHECK(lower_half == 0);
}

TEST_CASE("degenerate geometry is rejected") {
  const auto schema = lattice::AttributeSchema::desk_preset();
  auto id = synth::make_identity(1, desk_combo(0, 0, 0), 1);
  id.geometry[synth::FaceGeometry::RadiusX] = 0.0;
  CHECK_THROWS(synth::render_identity(id, schema, synth::RenderConfig::style_a()));
}

TEST_CASE("png round trip") {
  const auto dir = scratch_dir("png");
  std::mt19937_64 rng(8);
  Tensor rgb = testutil::random_tensor(rng, {3, 7, 5}, 0, 1), gray = testutil::random_tensor(rng, {6, 9}, 0, 1);
  synth::quantize_u8(rgb);
  synth::quantize_u8(gray);
  synth::write_png(dir / "rgb.png", rgb);
  synth::write_png(dir / "gray.png", gray);
  CHECK(max_abs_diff(synth::read_png(dir / "rgb.png"), rgb) < 1e-12);
  CHECK(max_abs_diff(synth::read_png(dir / "gray.png"), gray) < 1e-12);
  CHECK_THROWS_AS(synth::read_png(dir / "missing.png"), synth::IoError);
  std::ofstream(dir / "junk.png") << "not a png";
  CHECK_THROWS_AS(synth::read_png(dir / "junk.png"), synth::IoError);
}

TEST_CASE("combination assignment coverage") {
  for (std::size_t n : {2u, 10u, 24u, 48u, 100u, 200u}) {
    const auto c = synth::assign_combinations(n, 24, 5);
    std::map<std::size_t, std::size_t> counts;
    for (auto v : c) ++counts[v];
    CHECK(counts.size() == std::min<std::size_t>(n, 24));
    if (n >= 48)
      for (const auto& [combo, count] : counts) CHECK(count >= 2);
  }
}

TEST_CASE("generate_dataset with the paper schema") {
  const auto dir = scratch_dir("gen_paper");
  const auto schema = lattice::AttributeSchema::paper_preset();
  const auto m = synth::generate_dataset(200, schema, 11, dir, synth::RenderConfig::style_a(24, 24));
  CHECK(m.rows.size() == 200);
  for (const auto& r : m.rows) CHECK(r.combo < 180);
  const auto back = synth::read_manifest(dir / "manifest.csv");
  REQUIRE(back.rows.size() == 200);
  CHECK(back.rows[7].photo == m.rows[7].photo);
  CHECK_NOTHROW(synth::validate_manifest(back, schema, dir));
  const auto samples = synth::load_samples(back, dir);
  const auto direct = synth::synthesize(200, schema, 11, synth::RenderConfig::style_a(24, 24));
  CHECK(samples[42].photo == direct[42].photo);
  CHECK(samples[42].sketch == direct[42].sketch);
}

TEST_CASE("generated datasets are a pure function of the seed") {
  const auto schema = lattice::AttributeSchema::desk_preset();
  const auto d1 = scratch_dir("gen_a"), d2 = scratch_dir("gen_b"), d3 = scratch_dir("gen_c");
  const auto cfg = synth::RenderConfig::style_a(16, 16);
  synth::generate_dataset(60, schema, 3, d1, cfg);
  synth::generate_dataset(60, schema, 3, d2, cfg);
  synth::generate_dataset(60, schema, 4, d3, cfg);
  CHECK(slurp(d1 / "manifest.csv") == slurp(d2 / "manifest.csv"));
  CHECK(slurp(d1 / "sketches/5.png") == slurp(d2 / "sketches/5.png"));
  CHECK_FALSE(slurp(d1 / "manifest.csv") == slurp(d3 / "manifest.csv"));

  const auto m = synth::read_manifest(d1 / "manifest.csv");
  std::map<std::size_t, std::size_t> counts;
  for (const auto& r : m.rows) ++counts[r.combo];
  CHECK(counts.size() == 24);
  for (const auto& [c, n] : counts) CHECK(n >= 2);
}

TEST_CASE("manifest validation") {
  const auto schema = lattice::AttributeSchema::desk_preset();
  const auto dir = scratch_dir("manifest");
  synth::DatasetManifest m;
  m.rows = {{0, "p.png", "s.png", 3}};
  CHECK_THROWS_AS(synth::validate_manifest(m, schema, dir), synth::IoError);
  m.rows = {{0, "p.png", "s.png", 24}};
  CHECK_THROWS_AS(synth::validate_manifest(m, schema, dir), std::invalid_argument);
  m.rows = {{0, "p.png", "s.png", 1}, {0, "p.png", "s.png", 1}};
  CHECK_THROWS_AS(synth::validate_manifest(m, schema, dir), std::invalid_argument);
  std::ofstream(dir / "bad.csv") << "id,photo\n1,x\n";
  CHECK_THROWS_AS(synth::read_manifest(dir / "bad.csv"), synth::IoError);
  CHECK_THROWS_AS(synth::generate_dataset(1, schema, 1, dir, {}), std::invalid_argument);
}
