#include "attrcenter/synth/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "attrcenter/util/rng.hpp"

namespace attrcenter::synth {

namespace {

struct Range {
  double lo, hi;
};

constexpr std::array<Range, FaceGeometry::Count> kRanges{{
    {0.47, 0.53},    // CenterX
    {0.50, 0.56},    // CenterY
    {0.22, 0.38},    // RadiusX
    {0.28, 0.42},    // RadiusY
    {-0.16, -0.03},  // EyeDy
    {0.07, 0.16},    // EyeDx
    {0.025, 0.06},   // EyeRadius
    {0.04, 0.10},    // BrowGap
    {0.05, 0.17},    // NoseLength
    {0.04, 0.12},    // NoseWidth
    {0.11, 0.25},    // MouthDy
    {0.07, 0.21},    // MouthWidth
    {-0.85, -0.35},  // Hairline, in units of RadiusY
    {-1.0, 1.0},     // HairPart
    {0.0, 0.12},     // HairVolume
    {-0.15, 0.20},   // HairSide
}};

enum class Region { Background, Hair, Skin, Nose, Mouth, Eye, Brow, Frame, Lens };

using Rgb = std::array<double, 3>;

struct Look {
  bool hair = true;
  Rgb hair_color{0.60, 0.30, 0.20};
  Rgb skin{0.80, 0.62, 0.50};
  Rgb lips{0.80, 0.20, 0.30};
  enum { None, Frames, Shades } glasses = None;
};

const std::string& state_name(const lattice::AttributeSchema& schema, const lattice::AttributeCombination& combo,
                              const std::string& category) {
  static const std::string empty;
  const std::size_t c = schema.find_category(category);
  if (c == schema.category_count()) return empty;
  return schema.category(c).states[combo.state(c)];
}

Look look_for(const lattice::AttributeSchema& schema, const lattice::AttributeCombination& combo) {
  Look look;
  const auto& hair = state_name(schema, combo, "hair");
  if (hair == "black") look.hair_color = {0.08, 0.07, 0.07};
  else if (hair == "brown") look.hair_color = {0.40, 0.25, 0.12};
  else if (hair == "blond") look.hair_color = {0.92, 0.80, 0.45};
  else if (hair == "gray") look.hair_color = {0.70, 0.70, 0.72};
  else if (hair == "bald") look.hair = false;

  const auto& skin = state_name(schema, combo, "skin");
  if (skin == "light") look.skin = {0.98, 0.85, 0.75};
  else if (skin == "dark") look.skin = {0.40, 0.27, 0.18};
  const auto& race = state_name(schema, combo, "race");
  if (race == "asian") look.skin = {0.95, 0.80, 0.62};
  else if (race == "indian") look.skin = {0.62, 0.45, 0.32};
  else if (race == "white") look.skin = {0.98, 0.86, 0.78};
  else if (race == "black") look.skin = {0.32, 0.22, 0.15};

  if (state_name(schema, combo, "gender") == "male") look.lips = {0.60, 0.40, 0.35};

  const auto& glasses = state_name(schema, combo, "glasses");
  if (glasses == "eyeglasses") look.glasses = Look::Frames;
  else if (glasses == "sunglasses") look.glasses = Look::Shades;
  return look;
}

double sq(double x) { return x * x; }

Region classify(double u, double v, const FaceGeometry& g, const Look& look) {
  using P = FaceGeometry;
  const double cx = g[P::CenterX], cy = g[P::CenterY], rx = g[P::RadiusX], ry = g[P::RadiusY];
  const double ex = g[P::EyeDx], ey = cy + g[P::EyeDy], er = g[P::EyeRadius];

  if (look.glasses != Look::None) {
    const double R = er * 2.0;
    for (double side : {-1.0, 1.0}) {
      const double d = std::hypot(u - (cx + side * ex), v - ey);
      if (look.glasses == Look::Shades && d <= R) return Region::Lens;
      if (d <= R && d >= R - 0.025) return Region::Frame;
    }
    if (std::abs(v - ey) < 0.013 && std::abs(u - cx) < ex - R + 0.01) return Region::Frame;
  }
  for (double side : {-1.0, 1.0}) {
    const double bx = cx + side * ex;
    if (std::abs(u - bx) < er * 1.7 && std::abs(v - (ey - g[P::BrowGap])) < 0.017) return Region::Brow;
    if (sq((u - bx) / (er * 1.4)) + sq((v - ey) / (er * 0.8)) <= 1.0) return Region::Eye;
  }
  const double my = cy + g[P::MouthDy];
  if (sq((u - cx) / (0.5 * g[P::MouthWidth])) + sq((v - my) / 0.022) <= 1.0) return Region::Mouth;
  const double nose_top = ey + 0.03, nose_bottom = nose_top + g[P::NoseLength];
  if (v >= nose_top && v <= nose_bottom && std::abs(u - cx) < 0.25 * g[P::NoseWidth]) return Region::Nose;
  if (sq((u - cx) / (0.5 * g[P::NoseWidth])) + sq((v - nose_bottom) / 0.02) <= 1.0) return Region::Nose;

  const bool in_face = sq((u - cx) / rx) + sq((v - cy) / ry) <= 1.0;
  if (in_face) {
    const double t = (u - cx) / rx;
    const double fringe = cy + g[P::Hairline] * ry + 0.1 * ry * t * t + 0.08 * ry * g[P::HairPart] * t;
    if (look.hair && v < fringe) return Region::Hair;
    return Region::Skin;
  }
  if (look.hair) {
    const double vol = g[P::HairVolume];
    const bool in_hair = sq((u - cx) / (rx + vol)) + sq((v - (cy - 0.5 * vol)) / (ry + vol)) <= 1.0;
    if (in_hair && v < cy + g[P::HairSide]) return Region::Hair;
  }
  return Region::Background;
}

double structure_tone(Region r) {
  switch (r) {
    case Region::Background: return 1.0;
    case Region::Hair: return 0.45;
    case Region::Skin: return 0.85;
    case Region::Nose: return 0.70;
    case Region::Mouth: return 0.45;
    case Region::Eye: return 0.15;
    case Region::Brow: return 0.25;
    case Region::Frame: return 0.10;
    case Region::Lens: return 0.15;
  }
  return 1.0;
}

Rgb photo_color(Region r, const Look& look) {
  switch (r) {
    case Region::Background: return {0.75, 0.78, 0.82};
    case Region::Hair: return look.hair_color;
    case Region::Skin: return look.skin;
    case Region::Nose: return {look.skin[0] * 0.85, look.skin[1] * 0.85, look.skin[2] * 0.85};
    case Region::Mouth: return look.lips;
    case Region::Eye: return {0.15, 0.12, 0.10};
    case Region::Brow: return {0.20, 0.15, 0.10};
    case Region::Frame: return {0.10, 0.10, 0.10};
    case Region::Lens: return {0.10, 0.10, 0.12};
  }
  return {1, 1, 1};
}

void check_geometry(const FaceGeometry& g) {
  for (std::size_t i = 0; i < FaceGeometry::Count; ++i) {
    if (!std::isfinite(g.p[i])) throw std::invalid_argument("face geometry has a non-finite parameter");
  }
  if (!(g[FaceGeometry::RadiusX] > 0.0) || !(g[FaceGeometry::RadiusY] > 0.0)) {
    throw std::invalid_argument("degenerate face geometry: face radii must be positive");
  }
}

void check_config(const RenderConfig& cfg) {
  if (cfg.height < 4 || cfg.width < 4) throw std::invalid_argument("render size must be at least 4x4");
  if (cfg.supersample == 0) throw std::invalid_argument("supersample must be positive");
}

// Supersampled region map, averaged down to the target size.
template <class Shade>
Tensor rasterise(const FaceGeometry& g, const Look& look, const RenderConfig& cfg, std::size_t channels, Shade shade) {
  const std::size_t f = cfg.supersample, H = cfg.height, W = cfg.width;
  const std::size_t sh = H * f, sw = W * f;
  Tensor out(channels == 1 ? ad::Shape{H, W} : ad::Shape{channels, H, W}, 0.0);
  const double norm = 1.0 / static_cast<double>(f * f);
  for (std::size_t y = 0; y < sh; ++y)
    for (std::size_t x = 0; x < sw; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(sw);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(sh);
      const Region r = classify(u, v, g, look);
      for (std::size_t c = 0; c < channels; ++c) out[(c * H + y / f) * W + x / f] += norm * shade(r, c);
    }
  return out;
}

}  // namespace

FaceGeometry FaceGeometry::sample(std::mt19937_64& rng) {
  FaceGeometry g;
  for (std::size_t i = 0; i < Count; ++i) {
    std::uniform_real_distribution<double> u(kRanges[i].lo, kRanges[i].hi);
    g.p[i] = u(rng);
  }
  return g;
}

FaceGeometry FaceGeometry::jittered(double amount, std::mt19937_64& rng) const {
  FaceGeometry g = *this;
  if (amount <= 0.0) return g;
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t i = 0; i < Count; ++i) {
    const double span = kRanges[i].hi - kRanges[i].lo;
    g.p[i] = std::clamp(g.p[i] + amount * span * n(rng), kRanges[i].lo, kRanges[i].hi);
  }
  return g;
}

SyntheticIdentity make_identity(std::size_t id, const lattice::AttributeCombination& combo, std::uint64_t seed) {
  auto rng = make_rng(seed, {stream::kGeometry, id});
  return {id, combo, FaceGeometry::sample(rng), derive_seed(seed, {id})};
}

RenderConfig RenderConfig::style_a(std::size_t h, std::size_t w) {
  RenderConfig c;
  c.height = h;
  c.width = w;
  return c;
}

RenderConfig RenderConfig::style_b(std::size_t h, std::size_t w) {
  RenderConfig c = style_a(h, w);
  c.xdog.sigma = 0.7;
  c.xdog.k = 2.0;
  c.xdog.tau = 0.99;
  c.xdog.phi = 25.0;
  c.xdog.epsilon = 0.005;
  return c;
}

Tensor render_structure(const FaceGeometry& g, const lattice::AttributeSchema& schema,
                        const lattice::AttributeCombination& combo, const RenderConfig& cfg) {
  check_geometry(g);
  check_config(cfg);
  const Look look = look_for(schema, combo);
  return rasterise(g, look, cfg, 1, [](Region r, std::size_t) { return structure_tone(r); });
}

RenderedFace render_identity(const SyntheticIdentity& identity, const lattice::AttributeSchema& schema,
                             const RenderConfig& cfg) {
  if (identity.combo.schema_hash() != schema.hash()) {
    throw lattice::SchemaError("identity " + std::to_string(identity.id) + " carries a combination from another schema");
  }
  check_geometry(identity.geometry);
  check_config(cfg);
  const Look look = look_for(schema, identity.combo);

  RenderedFace face;
  face.photo = rasterise(identity.geometry, look, cfg, 3, [&](Region r, std::size_t c) { return photo_color(r, look)[c]; });
  auto noise_rng = make_rng(identity.render_seed, {stream::kPhotoNoise});
  std::normal_distribution<double> noise(0.0, cfg.photo_noise > 0.0 ? cfg.photo_noise : 1.0);
  if (cfg.photo_noise > 0.0)
    for (auto& v : face.photo.data()) v += noise(noise_rng);
  quantize_u8(face.photo);

  // The sketch is drawn from a slightly different memory of the face.
  auto jitter_rng = make_rng(identity.render_seed, {stream::kSketchJitter});
  const FaceGeometry drawn = identity.geometry.jittered(cfg.sketch_jitter, jitter_rng);
  face.sketch = xdog_filter(render_structure(drawn, schema, identity.combo, cfg), cfg.xdog);
  quantize_u8(face.sketch);
  return face;
}

}  // namespace attrcenter::synth
