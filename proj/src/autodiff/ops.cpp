#include "attrcenter/autodiff/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace attrcenter::ad {

namespace {

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid()) throw std::logic_error(std::string(op) + ": unbound operand");
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(t.shape()));
  }
}

Var emit(Tape& tape, const char* op, Tensor value, std::vector<std::size_t> inputs, Tape::BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite result of shape " + shape_str(value.shape()));
  }
  return tape.record(std::move(value), std::move(inputs), std::move(fn));
}

// Accumulates `scale * g` into the gradient of node `id` if it needs one.
void accumulate(Tape& tape, std::size_t id, std::span<const double> g, double scale = 1.0) {
  if (!tape.requires_grad(id)) return;
  auto& buf = tape.grad_buffer(id).storage();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += scale * g[i];
}

// Valid output columns [lo, hi) such that ow*stride + kw - pad lies in [0, width).
std::pair<std::size_t, std::size_t> column_range(std::size_t out_w, std::size_t width, std::size_t stride,
                                                 std::size_t kw, std::size_t pad) {
  long lo = 0;
  if (static_cast<long>(kw) < static_cast<long>(pad)) {
    const long need = static_cast<long>(pad) - static_cast<long>(kw);
    lo = (need + static_cast<long>(stride) - 1) / static_cast<long>(stride);
  }
  // Largest ow with ow*stride + kw - pad <= width - 1.
  const long top = static_cast<long>(width) - 1 + static_cast<long>(pad) - static_cast<long>(kw);
  long hi = top < 0 ? 0 : top / static_cast<long>(stride) + 1;
  hi = std::min<long>(hi, static_cast<long>(out_w));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}


using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<Mat>;
using ConstMat = Eigen::Map<const Mat>;

struct ConvGeom {
  std::size_t C, H, W, K, S, P, Ho, Wo;
};

// Row (c, kh, kw) of `patches` holds the input pixel under that tap for every
// output position; out-of-bounds taps read zero.
void im2col(const ConvGeom& g, const double* in, Mat& patches) {
  patches.setZero();
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t kh = 0; kh < g.K; ++kh)
      for (std::size_t kw = 0; kw < g.K; ++kw) {
        double* dst = patches.data() + ((c * g.K + kh) * g.K + kw) * g.Ho * g.Wo;
        const auto [lo, hi] = column_range(g.Wo, g.W, g.S, kw, g.P);
        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
          const long ih = static_cast<long>(oh * g.S + kh) - static_cast<long>(g.P);
          if (ih < 0 || ih >= static_cast<long>(g.H)) continue;
          const double* row = in + (c * g.H + static_cast<std::size_t>(ih)) * g.W;
          for (std::size_t ow = lo; ow < hi; ++ow) dst[oh * g.Wo + ow] = row[ow * g.S + kw - g.P];
        }
      }
}

void col2im_add(const ConvGeom& g, const Mat& patches, double* out) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t kh = 0; kh < g.K; ++kh)
      for (std::size_t kw = 0; kw < g.K; ++kw) {
        const double* src = patches.data() + ((c * g.K + kh) * g.K + kw) * g.Ho * g.Wo;
        const auto [lo, hi] = column_range(g.Wo, g.W, g.S, kw, g.P);
        for (std::size_t oh = 0; oh < g.Ho; ++oh) {
          const long ih = static_cast<long>(oh * g.S + kh) - static_cast<long>(g.P);
          if (ih < 0 || ih >= static_cast<long>(g.H)) continue;
          double* row = out + (c * g.H + static_cast<std::size_t>(ih)) * g.W;
          for (std::size_t ow = lo; ow < hi; ++ow) row[ow * g.S + kw - g.P] += src[oh * g.Wo + ow];
        }
      }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b, "add");
  if (a.shape() != b.shape()) shape_mismatch("add", a.shape(), b.shape());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return emit(tape, "add", std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b, "sub");
  if (a.shape() != b.shape()) shape_mismatch("sub", a.shape(), b.shape());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return emit(tape, "sub", std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    accumulate(t, ia, g);
    accumulate(t, ib, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "mul");
  if (a.shape() != b.shape()) shape_mismatch("mul", a.shape(), b.shape());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return emit(tape, "mul", std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto av = t.value(ia).data();
    const auto bv = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).storage();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).storage();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var div(Var a, Var b) {
  Tape& tape = same_tape(a, b, "div");
  if (a.shape() != b.shape()) shape_mismatch("div", a.shape(), b.shape());
  Tensor out = a.value();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] /= bv[i];
  return emit(tape, "div", std::move(out), {a.id(), b.id()}, [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto av = t.value(ia).data();
    const auto bv = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).storage();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).storage();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

Var scale(Var a, double s) {
  Tape& tape = a.tape();
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return emit(tape, "scale", std::move(out), {a.id()}, [ia = a.id(), s](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad(self).data(), s);
  });
}

Var add_scalar(Var a, double s) {
  Tape& tape = a.tape();
  Tensor out = a.value();
  for (auto& v : out.data()) v += s;
  return emit(tape, "add_scalar", std::move(out), {a.id()}, [ia = a.id()](Tape& t, std::size_t self) {
    accumulate(t, ia, t.grad(self).data());
  });
}

Var add_row(Var x, Var bias) {
  Tape& tape = same_tape(x, bias, "add_row");
  require_rank("add_row", x.value(), 2);
  require_rank("add_row", bias.value(), 1);
  const std::size_t n = x.shape()[0], f = x.shape()[1];
  if (bias.shape()[0] != f) shape_mismatch("add_row", x.shape(), bias.shape());
  Tensor out = x.value();
  const auto bv = bias.value().data();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < f; ++c) out[r * f + c] += bv[c];
  return emit(tape, "add_row", std::move(out), {x.id(), bias.id()},
              [ix = x.id(), ib = bias.id(), n, f](Tape& t, std::size_t self) {
                const auto g = t.grad(self).data();
                accumulate(t, ix, g);
                if (t.requires_grad(ib)) {
                  auto& gb = t.grad_buffer(ib).storage();
                  for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t c = 0; c < f; ++c) gb[c] += g[r * f + c];
                }
              });
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  require_rank("matmul", a.value(), 2);
  require_rank("matmul", b.value(), 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) shape_mismatch("matmul", a.shape(), b.shape());
  Tensor out(Shape{m, n}, 0.0);
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  return emit(tape, "matmul", std::move(out), {a.id(), b.id()},
              [ia = a.id(), ib = b.id(), m, k, n](Tape& t, std::size_t self) {
                const auto g = t.grad(self).data();
                const auto av = t.value(ia).data();
                const auto bv = t.value(ib).data();
                if (t.requires_grad(ia)) {
                  auto& ga = t.grad_buffer(ia).storage();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
                      ga[i * k + p] += acc;
                    }
                }
                if (t.requires_grad(ib)) {
                  auto& gb = t.grad_buffer(ib).storage();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                      const double aip = av[i * k + p];
                      for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
                }
              });
}

Var conv2d(Var x, Var weight, Conv2dOptions opts) {
  Tape& tape = same_tape(x, weight, "conv2d");
  require_rank("conv2d", x.value(), 4);
  require_rank("conv2d", weight.value(), 4);
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const std::size_t O = ws[0], K = ws[2];
  if (ws[1] != C || ws[3] != K) shape_mismatch("conv2d", xs, ws);
  if (opts.stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (H + 2 * opts.padding < K || W + 2 * opts.padding < K) shape_mismatch("conv2d", xs, ws);
  const std::size_t S = opts.stride, P = opts.padding;
  const std::size_t Ho = (H + 2 * P - K) / S + 1;
  const std::size_t Wo = (W + 2 * P - K) / S + 1;

  const ConvGeom geom{C, H, W, K, S, P, Ho, Wo};
  const std::size_t rows = C * K * K, cols = Ho * Wo;
  Tensor out(Shape{N, O, Ho, Wo}, 0.0);
  const auto xv = x.value().data();
  const ConstMat wm(weight.value().data().data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(rows));
  Mat patches(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t n = 0; n < N; ++n) {
    im2col(geom, xv.data() + n * C * H * W, patches);
    MatMap(out.data().data() + n * O * cols, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(cols)).noalias() =
        wm * patches;
  }

  return emit(tape, "conv2d", std::move(out), {x.id(), weight.id()},
              [ix = x.id(), iw = weight.id(), N, O, geom, rows, cols](Tape& t, std::size_t self) {
                const bool need_x = t.requires_grad(ix);
                const bool need_w = t.requires_grad(iw);
                if (!need_x && !need_w) return;
                const auto g = t.grad(self).data();
                const auto xv = t.value(ix).data();
                const ConstMat wm(t.value(iw).data().data(), static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(rows));
                const std::size_t in_size = geom.C * geom.H * geom.W;
                Mat patches(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
                Mat gw = Mat::Zero(static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(rows));
                for (std::size_t n = 0; n < N; ++n) {
                  const ConstMat gn(g.data() + n * O * cols, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(cols));
                  if (need_w) {
                    im2col(geom, xv.data() + n * in_size, patches);
                    gw.noalias() += gn * patches.transpose();
                  }
                  if (need_x) {
                    patches.noalias() = wm.transpose() * gn;
                    col2im_add(geom, patches, t.grad_buffer(ix).storage().data() + n * in_size);
                  }
                }
                if (need_w) {
                  double* dst = t.grad_buffer(iw).storage().data();
                  for (std::size_t i = 0; i < O * rows; ++i) dst[i] += gw.data()[i];
                }
              });
}

Var channel_affine(Var x, Var scale_v, Var shift_v) {
  Tape& tape = same_tape(x, scale_v, "channel_affine");
  same_tape(x, shift_v, "channel_affine");
  require_rank("channel_affine", x.value(), 4);
  const auto& xs = x.shape();
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  if (scale_v.shape() != Shape{C}) shape_mismatch("channel_affine", xs, scale_v.shape());
  if (shift_v.shape() != Shape{C}) shape_mismatch("channel_affine", xs, shift_v.shape());
  Tensor out = x.value();
  const auto sv = scale_v.value().data();
  const auto bv = shift_v.value().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* p = out.data().data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) p[i] = sv[c] * p[i] + bv[c];
    }
  return emit(tape, "channel_affine", std::move(out), {x.id(), scale_v.id(), shift_v.id()},
              [ix = x.id(), is = scale_v.id(), ib = shift_v.id(), N, C, HW](Tape& t, std::size_t self) {
                const auto g = t.grad(self).data();
                const auto xv = t.value(ix).data();
                const auto sv = t.value(is).data();
                const bool nx = t.requires_grad(ix), ns = t.requires_grad(is), nb = t.requires_grad(ib);
                double* gx = nx ? t.grad_buffer(ix).storage().data() : nullptr;
                double* gs = ns ? t.grad_buffer(is).storage().data() : nullptr;
                double* gb = nb ? t.grad_buffer(ib).storage().data() : nullptr;
                for (std::size_t n = 0; n < N; ++n)
                  for (std::size_t c = 0; c < C; ++c) {
                    const std::size_t base = (n * C + c) * HW;
                    double ds = 0.0, db = 0.0;
                    for (std::size_t i = 0; i < HW; ++i) {
                      ds += g[base + i] * xv[base + i];
                      db += g[base + i];
                      if (nx) gx[base + i] += g[base + i] * sv[c];
                    }
                    if (ns) gs[c] += ds;
                    if (nb) gb[c] += db;
                  }
              });
}

Var batch_norm(Var x, double eps, Tensor* mean_out, Tensor* var_out) {
  require_rank("batch_norm", x.value(), 4);
  if (!(eps > 0.0)) throw std::invalid_argument("batch_norm: eps must be positive");
  Tape& tape = x.tape();
  const auto& xs = x.shape();
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  const double M = static_cast<double>(N * HW);
  Tensor out = x.value();
  std::vector<double> mean(C, 0.0), var(C, 0.0), inv(C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) mean[c] += out[(n * C + c) * HW + i] / M;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        const double dv = out[(n * C + c) * HW + i] - mean[c];
        var[c] += dv * dv / M;
      }
  for (std::size_t c = 0; c < C; ++c) inv[c] = 1.0 / std::sqrt(var[c] + eps);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < HW; ++i) {
        double& v = out[(n * C + c) * HW + i];
        v = (v - mean[c]) * inv[c];
      }
  if (mean_out) *mean_out = Tensor(Shape{C}, mean);
  if (var_out) *var_out = Tensor(Shape{C}, var);
  return emit(tape, "batch_norm", std::move(out), {x.id()}, [ix = x.id(), inv, N, C, HW, M](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    const auto y = t.value(self).data();
    auto& gx = t.grad_buffer(ix).storage();
    // dx = inv * (g - mean(g) - y * mean(g * y)), per channel.
    for (std::size_t c = 0; c < C; ++c) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          mg += g[k];
          mgy += g[k] * y[k];
        }
      mg /= M;
      mgy /= M;
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t i = 0; i < HW; ++i) {
          const std::size_t k = (n * C + c) * HW + i;
          gx[k] += inv[c] * (g[k] - mg - y[k] * mgy);
        }
    }
  });
}

Var relu(Var x) {
  Tape& tape = x.tape();
  Tensor out = x.value();
  {
    KinkRecorder kinks(tape);
    for (auto& v : out.data()) {
      const bool on = v > 0.0;
      kinks.push(on);
      if (!on) v = 0.0;
    }
  }
  return emit(tape, "relu", std::move(out), {x.id()}, [ix = x.id()](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    const auto xv = t.value(ix).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

Var clamp_min(Var x, double c) {
  Tape& tape = x.tape();
  Tensor out = x.value();
  {
    KinkRecorder kinks(tape);
    for (auto& v : out.data()) {
      const bool on = v > c;
      kinks.push(on);
      if (!on) v = c;
    }
  }
  return emit(tape, "clamp_min", std::move(out), {x.id()}, [ix = x.id(), c](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    const auto xv = t.value(ix).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > c) gx[i] += g[i];
  });
}

Var max_pool2d(Var x, std::size_t k) {
  Tape& tape = x.tape();
  require_rank("max_pool2d", x.value(), 4);
  const auto& xs = x.shape();
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (k == 0 || H < k || W < k) throw ShapeError("max_pool2d: window " + std::to_string(k) + " too large for " + shape_str(xs));
  const std::size_t Ho = H / k, Wo = W / k;
  Tensor out(Shape{N, C, Ho, Wo}, 0.0);
  std::vector<std::size_t> argmax(out.numel());
  const auto xv = x.value().data();
  {
    KinkRecorder kinks(tape);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t oh = 0; oh < Ho; ++oh)
        for (std::size_t ow = 0; ow < Wo; ++ow) {
          std::size_t best = nc * H * W + (oh * k) * W + ow * k;
          for (std::size_t dh = 0; dh < k; ++dh)
            for (std::size_t dw = 0; dw < k; ++dw) {
              const std::size_t idx = nc * H * W + (oh * k + dh) * W + ow * k + dw;
              if (xv[idx] > xv[best]) best = idx;
            }
          const std::size_t o = (nc * Ho + oh) * Wo + ow;
          out[o] = xv[best];
          argmax[o] = best;
          kinks.push_value(best);
        }
  }
  return emit(tape, "max_pool2d", std::move(out), {x.id()},
              [ix = x.id(), argmax = std::move(argmax)](Tape& t, std::size_t self) {
                if (!t.requires_grad(ix)) return;
                const auto g = t.grad(self).data();
                auto& gx = t.grad_buffer(ix).storage();
                for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
              });
}

Var avg_pool2d(Var x, std::size_t k) {
  Tape& tape = x.tape();
  require_rank("avg_pool2d", x.value(), 4);
  const auto& xs = x.shape();
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  if (k == 0 || H < k || W < k) throw ShapeError("avg_pool2d: window " + std::to_string(k) + " too large for " + shape_str(xs));
  const std::size_t Ho = H / k, Wo = W / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out(Shape{N, C, Ho, Wo}, 0.0);
  const auto xv = x.value().data();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        double acc = 0.0;
        for (std::size_t dh = 0; dh < k; ++dh)
          for (std::size_t dw = 0; dw < k; ++dw) acc += xv[nc * H * W + (oh * k + dh) * W + ow * k + dw];
        out[(nc * Ho + oh) * Wo + ow] = acc * inv;
      }
  return emit(tape, "avg_pool2d", std::move(out), {x.id()},
              [ix = x.id(), N, C, H, W, Ho, Wo, k, inv](Tape& t, std::size_t self) {
                if (!t.requires_grad(ix)) return;
                const auto g = t.grad(self).data();
                auto& gx = t.grad_buffer(ix).storage();
                for (std::size_t nc = 0; nc < N * C; ++nc)
                  for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                      const double go = g[(nc * Ho + oh) * Wo + ow] * inv;
                      for (std::size_t dh = 0; dh < k; ++dh)
                        for (std::size_t dw = 0; dw < k; ++dw) gx[nc * H * W + (oh * k + dh) * W + ow * k + dw] += go;
                    }
              });
}

Var global_avg_pool(Var x) {
  Tape& tape = x.tape();
  require_rank("global_avg_pool", x.value(), 4);
  const auto& xs = x.shape();
  const std::size_t N = xs[0], C = xs[1], HW = xs[2] * xs[3];
  const double inv = 1.0 / static_cast<double>(HW);
  Tensor out(Shape{N, C}, 0.0);
  const auto xv = x.value().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += xv[nc * HW + i];
    out[nc] = acc * inv;
  }
  return emit(tape, "global_avg_pool", std::move(out), {x.id()}, [ix = x.id(), N, C, HW, inv](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const double go = g[nc] * inv;
      for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += go;
    }
  });
}

Var sum(Var x) {
  Tape& tape = x.tape();
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return emit(tape, "sum", Tensor::scalar(acc), {x.id()}, [ix = x.id()](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(ix).storage()) v += g;
  });
}

Var sq_norm(Var x) {
  Tape& tape = x.tape();
  double acc = 0.0;
  for (double v : x.value().data()) acc += v * v;
  return emit(tape, "sq_norm", Tensor::scalar(acc), {x.id()}, [ix = x.id()](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const double g = t.grad(self)[0];
    const auto xv = t.value(ix).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g * xv[i];
  });
}

Var row_sum(Var x) {
  Tape& tape = x.tape();
  require_rank("row_sum", x.value(), 2);
  const std::size_t m = x.shape()[0], k = x.shape()[1];
  Tensor out(Shape{m}, 0.0);
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += xv[i * k + j];
    out[i] = acc;
  }
  return emit(tape, "row_sum", std::move(out), {x.id()}, [ix = x.id(), m, k](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < k; ++j) gx[i * k + j] += g[i];
  });
}

Var row_sq_norm(Var x) {
  Tape& tape = x.tape();
  require_rank("row_sq_norm", x.value(), 2);
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  Tensor out(Shape{m}, 0.0);
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += xv[i * d + j] * xv[i * d + j];
    out[i] = acc;
  }
  return emit(tape, "row_sq_norm", std::move(out), {x.id()}, [ix = x.id(), m, d](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    const auto xv = t.value(ix).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += 2.0 * g[i] * xv[i * d + j];
  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Tape& tape = logits.tape();
  require_rank("softmax_cross_entropy", logits.value(), 2);
  const std::size_t m = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != m) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) +
                     " rows");
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  for (auto l : lab)
    if (l >= k) throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " >= " + std::to_string(k));
  const auto z = logits.value().data();
  Tensor probs(Shape{m, k}, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[i * k + j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(z[i * k + j] - mx) / denom;
    loss += -(z[i * k + lab[i]] - mx - std::log(denom));
  }
  return emit(tape, "softmax_cross_entropy", Tensor::scalar(loss), {logits.id()},
              [iz = logits.id(), probs = std::move(probs), lab = std::move(lab), m, k](Tape& t, std::size_t self) {
                if (!t.requires_grad(iz)) return;
                const double g = t.grad(self)[0];
                auto& gz = t.grad_buffer(iz).storage();
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < k; ++j)
                    gz[i * k + j] += g * (probs[i * k + j] - (j == lab[i] ? 1.0 : 0.0));
              });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape& tape = table.tape();
  require_rank("gather_rows", table.value(), 2);
  const std::size_t n = table.shape()[0], d = table.shape()[1], m = indices.size();
  if (m == 0) throw ShapeError("gather_rows: empty index list");
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  for (auto i : idx)
    if (i >= n) throw std::out_of_range("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(n));
  Tensor out(Shape{m, d}, 0.0);
  const auto tv = table.value().data();
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(tv.data() + idx[r] * d, d, out.data().data() + r * d);
  return emit(tape, "gather_rows", std::move(out), {table.id()},
              [it = table.id(), idx = std::move(idx), d](Tape& t, std::size_t self) {
                if (!t.requires_grad(it)) return;
                const auto g = t.grad(self).data();
                auto& gt = t.grad_buffer(it).storage();
                for (std::size_t r = 0; r < idx.size(); ++r)
                  for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += g[r * d + j];
              });
}

Var sq_dist_matrix(Var x, Var c) {
  Tape& tape = same_tape(x, c, "sq_dist_matrix");
  require_rank("sq_dist_matrix", x.value(), 2);
  require_rank("sq_dist_matrix", c.value(), 2);
  const std::size_t m = x.shape()[0], d = x.shape()[1], k = c.shape()[0];
  if (c.shape()[1] != d) shape_mismatch("sq_dist_matrix", x.shape(), c.shape());
  Tensor out(Shape{m, k}, 0.0);
  const auto xv = x.value().data();
  const auto cv = c.value().data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        const double diff = xv[i * d + q] - cv[j * d + q];
        acc += diff * diff;
      }
      out[i * k + j] = acc;
    }
  return emit(tape, "sq_dist_matrix", std::move(out), {x.id(), c.id()},
              [ix = x.id(), ic = c.id(), m, d, k](Tape& t, std::size_t self) {
                const auto g = t.grad(self).data();
                const auto xv = t.value(ix).data();
                const auto cv = t.value(ic).data();
                const bool nx = t.requires_grad(ix), nc = t.requires_grad(ic);
                double* gx = nx ? t.grad_buffer(ix).storage().data() : nullptr;
                double* gc = nc ? t.grad_buffer(ic).storage().data() : nullptr;
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < k; ++j) {
                    const double gij = 2.0 * g[i * k + j];
                    for (std::size_t q = 0; q < d; ++q) {
                      const double diff = xv[i * d + q] - cv[j * d + q];
                      if (nx) gx[i * d + q] += gij * diff;
                      if (nc) gc[j * d + q] -= gij * diff;
                    }
                  }
              });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = x.tape();
  Tensor out = x.value().reshaped(std::move(shape));
  return emit(tape, "reshape", std::move(out), {x.id()}, [ix = x.id()](Tape& t, std::size_t self) {
    accumulate(t, ix, t.grad(self).data());
  });
}

Var slice_rows(Var x, std::size_t begin, std::size_t end) {
  Tape& tape = x.tape();
  const auto& xs = x.shape();
  if (xs.empty() || begin >= end || end > xs[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(xs));
  }
  const std::size_t row = x.value().numel() / xs[0];
  Shape os = xs;
  os[0] = end - begin;
  const auto xv = x.value().data();
  Tensor out(os, std::vector<double>(xv.begin() + static_cast<long>(begin * row), xv.begin() + static_cast<long>(end * row)));
  return emit(tape, "slice_rows", std::move(out), {x.id()}, [ix = x.id(), begin, row](Tape& t, std::size_t self) {
    if (!t.requires_grad(ix)) return;
    const auto g = t.grad(self).data();
    auto& gx = t.grad_buffer(ix).storage();
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * row + i] += g[i];
  });
}

Var concat_rows(Var a, Var b) {
  Tape& tape = same_tape(a, b, "concat_rows");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.empty() || as.size() != bs.size() || !std::equal(as.begin() + 1, as.end(), bs.begin() + 1)) {
    shape_mismatch("concat_rows", as, bs);
  }
  Shape os = as;
  os[0] = as[0] + bs[0];
  std::vector<double> data(a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  const std::size_t na = a.value().numel();
  return emit(tape, "concat_rows", Tensor(os, std::move(data)), {a.id(), b.id()},
              [ia = a.id(), ib = b.id(), na](Tape& t, std::size_t self) {
                const auto g = t.grad(self).data();
                accumulate(t, ia, g.subspan(0, na));
                accumulate(t, ib, g.subspan(na));
              });
}

}  // namespace attrcenter::ad
