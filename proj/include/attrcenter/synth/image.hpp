#pragma once

#include <cstddef>
#include <random>

#include "attrcenter/autodiff/tensor.hpp"

// Images are ad::Tensor values in [0,1]: H x W for grayscale, 3 x H x W for
// color. All filters replicate the border.
namespace attrcenter::synth {

using ad::Tensor;

std::size_t image_height(const Tensor& img);
std::size_t image_width(const Tensor& img);
std::size_t image_channels(const Tensor& img);

/// Normalised Gaussian taps with radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);
/// Separable blur of each channel.
Tensor gaussian_blur(const Tensor& img, double sigma);

struct XdogParams {
  double sigma = 1.0;
  double k = 1.6;
  double tau = 0.98;
  double phi = 10.0;
  double epsilon = 0.01;
};

/// D = G_sigma(I) - tau G_{k sigma}(I); 1 where D >= eps, else
/// 1 + tanh(phi (D - eps)), clamped to [0,1]. Grayscale only.
Tensor xdog_filter(const Tensor& gray, const XdogParams& p);

/// Bilinear sample at fractional pixel coordinates (x = column, y = row),
/// border replicated.
double sample_bilinear(const Tensor& img, std::size_t channel, double x, double y);

/// Pixel-centre aligned bilinear resize.
Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w);

Tensor flip_horizontal(const Tensor& img);
/// Mirrors with probability p (one Bernoulli draw from rng).
Tensor hflip(const Tensor& img, std::mt19937_64& rng, double p = 0.5);

/// Rescales rows by scale_y and columns by scale_x (independently), then
/// takes the centred crop_h x crop_w window.
Tensor scale_crop(const Tensor& img, double scale_y, double scale_x, std::size_t crop_h, std::size_t crop_w);

struct ScaleCropConfig {
  std::size_t crop_h = 32;
  std::size_t crop_w = 32;
  double max_scale = 1.15;
};
/// Both axis factors are drawn independently from U[1, max_scale], chosen so
/// the scaled image is never smaller than the crop.
Tensor scale_crop(const Tensor& img, std::mt19937_64& rng, const ScaleCropConfig& cfg);

/// Rounds to the nearest multiple of 1/255 (what an 8-bit PNG can hold).
void quantize_u8(Tensor& img);

/// Average of non-overlapping f x f blocks.
Tensor box_downsample(const Tensor& img, std::size_t f);

}  // namespace attrcenter::synth
