#include "attrcenter/synth/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace attrcenter::synth {

using ad::Shape;

std::size_t image_height(const Tensor& img) { return img.dim(img.rank() - 2); }
std::size_t image_width(const Tensor& img) { return img.dim(img.rank() - 1); }

std::size_t image_channels(const Tensor& img) {
  if (img.rank() == 2) return 1;
  if (img.rank() == 3) return img.dim(0);
  throw ad::ShapeError("image must be H x W or C x H x W, got " + ad::shape_str(img.shape()));
}

namespace {

std::size_t clamp_index(long i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<long>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

Shape with_hw(const Tensor& like, std::size_t h, std::size_t w) {
  if (like.rank() == 2) return {h, w};
  return {like.dim(0), h, w};
}

}  // namespace

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian sigma must be positive, got " + std::to_string(sigma));
  const long r = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (long i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

Tensor gaussian_blur(const Tensor& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const long r = static_cast<long>(k.size() / 2);
  const std::size_t C = image_channels(img), H = image_height(img), W = image_width(img);
  Tensor tmp(img.shape(), 0.0), out(img.shape(), 0.0);
  const auto src = img.data();
  auto t = tmp.data();
  auto o = out.data();
  for (std::size_t c = 0; c < C; ++c) {
    const std::size_t base = c * H * W;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * src[base + y * W + clamp_index(static_cast<long>(x) + i, W)];
        t[base + y * W + x] = acc;
      }
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (long i = -r; i <= r; ++i)
          acc += k[static_cast<std::size_t>(i + r)] * t[base + clamp_index(static_cast<long>(y) + i, H) * W + x];
        o[base + y * W + x] = acc;
      }
  }
  return out;
}

Tensor xdog_filter(const Tensor& gray, const XdogParams& p) {
  if (gray.rank() != 2) throw ad::ShapeError("xdog_filter expects H x W, got " + ad::shape_str(gray.shape()));
  if (!(p.sigma > 0.0)) throw std::invalid_argument("xdog: sigma must be positive");
  if (!(p.k > 1.0)) throw std::invalid_argument("xdog: k must exceed 1");
  const Tensor g1 = gaussian_blur(gray, p.sigma);
  const Tensor g2 = gaussian_blur(gray, p.k * p.sigma);
  Tensor out(gray.shape(), 0.0);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double d = g1[i] - p.tau * g2[i];
    const double v = d >= p.epsilon ? 1.0 : 1.0 + std::tanh(p.phi * (d - p.epsilon));
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

double sample_bilinear(const Tensor& img, std::size_t channel, double x, double y) {
  const std::size_t H = image_height(img), W = image_width(img);
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double ax = x - fx0, ay = y - fy0;
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  const std::size_t xa = clamp_index(x0, W), xb = clamp_index(x0 + 1, W);
  const std::size_t ya = clamp_index(y0, H), yb = clamp_index(y0 + 1, H);
  const auto d = img.data();
  const std::size_t base = channel * H * W;
  const double top = d[base + ya * W + xa] * (1.0 - ax) + d[base + ya * W + xb] * ax;
  const double bottom = d[base + yb * W + xa] * (1.0 - ax) + d[base + yb * W + xb] * ax;
  return top * (1.0 - ay) + bottom * ay;
}

Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  const std::size_t C = image_channels(img), H = image_height(img), W = image_width(img);
  if (out_h == 0 || out_w == 0) throw std::invalid_argument("resize to an empty image");
  Tensor out(with_hw(img, out_h, out_w), 0.0);
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const double u = (static_cast<double>(x) + 0.5) * sx - 0.5;
        const double v = (static_cast<double>(y) + 0.5) * sy - 0.5;
        out[(c * out_h + y) * out_w + x] = sample_bilinear(img, c, u, v);
      }
  return out;
}

Tensor flip_horizontal(const Tensor& img) {
  const std::size_t C = image_channels(img), H = image_height(img), W = image_width(img);
  Tensor out(img.shape(), 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
  return out;
}

Tensor hflip(const Tensor& img, std::mt19937_64& rng, double p) {
  std::bernoulli_distribution coin(std::clamp(p, 0.0, 1.0));
  return coin(rng) ? flip_horizontal(img) : img;
}

Tensor scale_crop(const Tensor& img, double scale_y, double scale_x, std::size_t crop_h, std::size_t crop_w) {
  const std::size_t C = image_channels(img), H = image_height(img), W = image_width(img);
  if (!(scale_y > 0.0) || !(scale_x > 0.0)) throw std::invalid_argument("scale_crop: scale factors must be positive");
  const auto sh = static_cast<std::size_t>(std::lround(static_cast<double>(H) * scale_y));
  const auto sw = static_cast<std::size_t>(std::lround(static_cast<double>(W) * scale_x));
  if (sh < crop_h || sw < crop_w) {
    throw std::invalid_argument("scale_crop: scaled image " + std::to_string(sh) + "x" + std::to_string(sw) +
                                " is smaller than the crop " + std::to_string(crop_h) + "x" + std::to_string(crop_w));
  }
  const Tensor scaled = (sh == H && sw == W) ? img : resize_bilinear(img, sh, sw);
  const std::size_t top = (sh - crop_h) / 2, left = (sw - crop_w) / 2;
  Tensor out(with_hw(img, crop_h, crop_w), 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < crop_h; ++y)
      for (std::size_t x = 0; x < crop_w; ++x) out[(c * crop_h + y) * crop_w + x] = scaled[(c * sh + top + y) * sw + left + x];
  return out;
}

Tensor scale_crop(const Tensor& img, std::mt19937_64& rng, const ScaleCropConfig& cfg) {
  const double lo_y = std::max(1.0, static_cast<double>(cfg.crop_h) / static_cast<double>(image_height(img)));
  const double lo_x = std::max(1.0, static_cast<double>(cfg.crop_w) / static_cast<double>(image_width(img)));
  std::uniform_real_distribution<double> uy(lo_y, std::max(lo_y, cfg.max_scale));
  std::uniform_real_distribution<double> ux(lo_x, std::max(lo_x, cfg.max_scale));
  const double sy = uy(rng);
  const double sx = ux(rng);
  return scale_crop(img, sy, sx, cfg.crop_h, cfg.crop_w);
}

void quantize_u8(Tensor& img) {
  for (auto& v : img.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
}

Tensor box_downsample(const Tensor& img, std::size_t f) {
  const std::size_t C = image_channels(img), H = image_height(img), W = image_width(img);
  if (f == 0 || H % f || W % f) throw std::invalid_argument("box_downsample: factor must divide the image size");
  const std::size_t h = H / f, w = W / f;
  Tensor out(with_hw(img, h, w), 0.0);
  const double norm = 1.0 / static_cast<double>(f * f);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < f; ++i)
          for (std::size_t j = 0; j < f; ++j) acc += img[(c * H + y * f + i) * W + x * f + j];
        out[(c * h + y) * w + x] = acc * norm;
      }
  return out;
}

}  // namespace attrcenter::synth
