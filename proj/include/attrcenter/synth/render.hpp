#pragma once

#include <array>
#include <cstdint>
#include <random>

#include "attrcenter/lattice/schema.hpp"
#include "attrcenter/synth/image.hpp"

namespace attrcenter::synth {

/// Procedural face layout in normalised image coordinates (u right, v down).
struct FaceGeometry {
  enum Param : std::size_t {
    CenterX,
    CenterY,
    RadiusX,
    RadiusY,
    EyeDy,
    EyeDx,
    EyeRadius,
    BrowGap,
    NoseLength,
    NoseWidth,
    MouthDy,
    MouthWidth,
    Hairline,
    HairPart,
    HairVolume,
    HairSide,
    Count
  };
  std::array<double, Count> p{};

  double operator[](Param i) const { return p[i]; }
  double& operator[](Param i) { return p[i]; }

  static FaceGeometry sample(std::mt19937_64& rng);
  /// Gaussian perturbation with std `amount` times each parameter's range,
  /// clamped back into range.
  FaceGeometry jittered(double amount, std::mt19937_64& rng) const;
};

struct SyntheticIdentity {
  std::size_t id = 0;
  lattice::AttributeCombination combo;
  FaceGeometry geometry;
  std::uint64_t render_seed = 0;
};

/// Geometry and render seed both derive from (seed, id) alone.
SyntheticIdentity make_identity(std::size_t id, const lattice::AttributeCombination& combo, std::uint64_t seed);

struct RenderConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t supersample = 3;
  double sketch_jitter = 0.15;
  double photo_noise = 0.02;
  XdogParams xdog;

  static RenderConfig style_a(std::size_t h = 32, std::size_t w = 32);
  /// Thinner, harder lines: the unseen style for the cross-style protocol.
  static RenderConfig style_b(std::size_t h = 32, std::size_t w = 32);
};

struct RenderedFace {
  Tensor photo;   // 3 x H x W
  Tensor sketch;  // H x W
};

/// Photo colours follow the attribute states; the sketch is an xDoG line
/// drawing of a fixed-tone rendering, so colour-borne states leave it
/// untouched. Both images are quantised to 8 bits.
RenderedFace render_identity(const SyntheticIdentity& identity, const lattice::AttributeSchema& schema,
                             const RenderConfig& cfg);

/// Fixed-tone grayscale rendering the sketch is drawn from (before xDoG).
Tensor render_structure(const FaceGeometry& g, const lattice::AttributeSchema& schema,
                        const lattice::AttributeCombination& combo, const RenderConfig& cfg);

}  // namespace attrcenter::synth
