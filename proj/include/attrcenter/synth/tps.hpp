#pragma once

#include <random>
#include <stdexcept>
#include <vector>

#include "attrcenter/synth/image.hpp"

namespace attrcenter::synth {

struct Point {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

class TpsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 2-D thin-plate spline f: R^2 -> R^2 with kernel U(r) = r^2 log r plus an
/// affine part, interpolating from[i] -> to[i].
class ThinPlateSpline {
 public:
  ThinPlateSpline(std::vector<Point> from, const std::vector<Point>& to);

  Point operator()(Point p) const;

 private:
  std::vector<Point> centers_;
  std::vector<double> wx_, wy_;  // n kernel weights + 3 affine terms each
};

/// rows x cols lattice spanning the central 80% of a height x width image.
std::vector<Point> control_grid(std::size_t height, std::size_t width, std::size_t rows = 5, std::size_t cols = 5);

/// Output pixel p takes the input value at f^-1(p), where f moves each control
/// point by its displacement. Bilinear sampling, border replicated.
Tensor tps_deform(const Tensor& img, const std::vector<Point>& control, const std::vector<Point>& displacements);

struct TpsConfig {
  std::size_t grid = 5;
  // Displacement magnitude bound as a fraction of the image diagonal.
  double max_displacement = 0.05;
};

/// Random direction and U[0, bound] magnitude per control point.
std::vector<Point> random_displacements(std::size_t count, double bound, std::mt19937_64& rng);
Tensor random_tps(const Tensor& img, std::mt19937_64& rng, const TpsConfig& cfg = {});

}  // namespace attrcenter::synth
