#include "attrcenter/encoders/encoder.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace attrcenter::encoders {

using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

std::size_t conv_out(std::size_t n, const ConvStage& s) {
  const std::size_t pad = s.kernel / 2;
  return (n + 2 * pad - s.kernel) / s.stride + 1;
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = dist(rng);
  ad::round_to_f32(t);
  return t;
}

}  // namespace

void EncoderConfig::validate() const {
  if (input_channels == 0 || input_height == 0 || input_width == 0) {
    throw std::invalid_argument("encoder: input dims must be positive");
  }
  if (embedding_dim == 0) throw std::invalid_argument("encoder: embedding_dim must be positive");
  if (stages.empty()) throw std::invalid_argument("encoder: needs at least one conv stage");
  for (const auto& s : stages) {
    if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) {
      throw std::invalid_argument("encoder: stage channels, kernel and stride must be positive");
    }
    if (s.kernel % 2 == 0) throw std::invalid_argument("encoder: kernels must be odd for same padding");
  }
  if (!projection && stages.back().out_channels != embedding_dim) {
    throw std::invalid_argument("encoder: without projection the last stage must have embedding_dim channels (" +
                                std::to_string(stages.back().out_channels) + " vs " + std::to_string(embedding_dim) +
                                ")");
  }
  feature_size();
}

std::pair<std::size_t, std::size_t> EncoderConfig::feature_size() const {
  std::size_t h = input_height, w = input_width;
  for (const auto& s : stages) {
    h = conv_out(h, s);
    w = conv_out(w, s);
    if (s.pool > 1) {
      h /= s.pool;
      w /= s.pool;
    }
    if (h == 0 || w == 0) throw std::invalid_argument("encoder: input too small for the configured stages");
  }
  return {h, w};
}

EncoderPair desk_preset(const lattice::AttributeSchema& schema, std::size_t dim, std::size_t height,
                        std::size_t width) {
  EncoderConfig photo;
  photo.input_channels = 3;
  photo.input_height = height;
  photo.input_width = width;
  photo.stages = {{8, 3, 1, 2}, {16, 3, 1, 2}, {32, 3, 1, 2}, {32, 3, 1, 2}};
  photo.embedding_dim = dim;
  photo.pool = PoolKind::Avg;
  photo.projection = true;
  photo.preset = "desk";
  EncoderConfig sketch = photo;
  sketch.input_channels = 1 + schema.binary_attribute_count();
  return {photo, sketch};
}

EncoderPair paper_preset() {
  EncoderConfig photo;
  photo.input_channels = 3;
  photo.input_height = 250;
  photo.input_width = 200;
  auto conv = [](std::size_t c, std::size_t pool = 1) { return ConvStage{c, 3, 1, pool}; };
  photo.stages = {conv(64),  conv(64, 2),  conv(128), conv(128, 2), conv(256), conv(256), conv(256, 2),
                  conv(512), conv(512), conv(512, 2), conv(256), conv(256), conv(64)};
  photo.embedding_dim = 64;
  photo.pool = PoolKind::Max;
  photo.projection = false;
  photo.preset = "paper";
  EncoderConfig sketch = photo;
  sketch.input_channels = 1 + lattice::AttributeSchema::paper_preset().binary_attribute_count();
  return {photo, sketch};
}

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = config_.input_channels;
  auto add_stats = [&](const std::string& p, std::size_t c) {
    if (!config_.batch_norm) return;
    buffers_.push_back({p + "running_mean", Tensor(Shape{c}, 0.0)});
    buffers_.push_back({p + "running_var", Tensor(Shape{c}, 1.0)});
  };
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    const auto& s = config_.stages[i];
    const std::string p = "stage" + std::to_string(i) + ".";
    const double fan_in = static_cast<double>(in * s.kernel * s.kernel);
    params_.push_back({p + "weight", normal_tensor({s.out_channels, in, s.kernel, s.kernel}, std::sqrt(2.0 / fan_in), rng)});
    params_.push_back({p + "scale", Tensor(Shape{s.out_channels}, 1.0)});
    params_.push_back({p + "shift", Tensor(Shape{s.out_channels}, 0.0)});
    add_stats(p, s.out_channels);
    in = s.out_channels;
  }
  if (config_.projection) {
    // Standardised pooled features would give unit spread per coordinate;
    // start the embedding smaller than the margins.
    double stddev = std::sqrt(1.0 / static_cast<double>(in));
    if (config_.batch_norm) {
      params_.push_back({"pooled.scale", Tensor(Shape{in}, 1.0)});
      params_.push_back({"pooled.shift", Tensor(Shape{in}, 0.0)});
      add_stats("pooled.", in);
      stddev *= 0.5;
    }
    params_.push_back({"proj.weight", normal_tensor({in, config_.embedding_dim}, stddev, rng)});
    params_.push_back({"proj.bias", Tensor(Shape{config_.embedding_dim}, 0.0)});
  }
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

std::vector<Var> Encoder::bind(ad::Tape& tape, bool requires_grad) const {
  std::vector<Var> vars;
  vars.reserve(params_.size());
  for (const auto& p : params_) vars.push_back(tape.leaf(p.value, requires_grad));
  return vars;
}

void Encoder::check_input(const Shape& s) const {
  if (s.size() != 4 || s[1] != config_.input_channels || s[2] != config_.input_height ||
      s[3] != config_.input_width) {
    throw ad::ShapeError("encoder: expected N x " + std::to_string(config_.input_channels) + " x " +
                         std::to_string(config_.input_height) + " x " + std::to_string(config_.input_width) +
                         " input, got " + ad::shape_str(s));
  }
}

Var Encoder::normalise(Var h, std::size_t site, BatchStats* batch) const {
  constexpr double kEps = 1e-5;
  if (batch) {
    Tensor mean, var;
    h = ad::batch_norm(h, kEps, &mean, &var);
    batch->mean.push_back(std::move(mean));
    batch->var.push_back(std::move(var));
    return h;
  }
  const Tensor& mean = buffers_[2 * site].value;
  const Tensor& var = buffers_[2 * site + 1].value;
  Tensor scale(mean.shape(), 0.0), shift(mean.shape(), 0.0);
  for (std::size_t c = 0; c < mean.numel(); ++c) {
    scale[c] = 1.0 / std::sqrt(var[c] + kEps);
    shift[c] = -mean[c] * scale[c];
  }
  ad::Tape& tape = h.tape();
  return ad::channel_affine(h, tape.constant(std::move(scale)), tape.constant(std::move(shift)));
}

Var Encoder::forward(Var x, std::span<const Var> params, BatchStats* batch) const {
  check_input(x.shape());
  if (params.size() != params_.size()) {
    throw std::invalid_argument("encoder: expected " + std::to_string(params_.size()) + " bound parameters, got " +
                                std::to_string(params.size()));
  }
  if (batch) *batch = {};
  const bool bn = config_.batch_norm;
  std::size_t k = 0, site = 0;
  Var h = x;
  const std::size_t last = config_.stages.size() - 1;
  for (std::size_t i = 0; i < config_.stages.size(); ++i) {
    const auto& s = config_.stages[i];
    h = ad::conv2d(h, params[k], {s.stride, s.kernel / 2});
    if (bn) h = normalise(h, site++, batch);
    h = ad::channel_affine(h, params[k + 1], params[k + 2]);
    k += 3;
    // The final stage of a projection-free encoder is the embedding itself;
    // keep it signed.
    if (config_.projection || i != last) h = ad::relu(h);
    if (s.pool > 1) h = config_.pool == PoolKind::Max ? ad::max_pool2d(h, s.pool) : ad::avg_pool2d(h, s.pool);
  }
  h = ad::global_avg_pool(h);
  if (config_.projection) {
    if (bn) {
      const std::size_t N = h.shape()[0], F = h.shape()[1];
      Var q = normalise(ad::reshape(h, {N, F, 1, 1}), site++, batch);
      h = ad::reshape(ad::channel_affine(q, params[k], params[k + 1]), {N, F});
      k += 2;
    }
    h = ad::add_row(ad::matmul(h, params[k]), params[k + 1]);
  }
  return h;
}

void Encoder::update_running_stats(const BatchStats& batch, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw std::invalid_argument("encoder: momentum must be in [0, 1]");
  if (batch.mean.size() * 2 != buffers_.size() || batch.var.size() != batch.mean.size()) {
    throw std::invalid_argument("encoder: batch statistics do not match this encoder");
  }
  for (std::size_t i = 0; i < batch.mean.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      Tensor& run = buffers_[2 * i + static_cast<std::size_t>(which)].value;
      const Tensor& b = which == 0 ? batch.mean[i] : batch.var[i];
      if (b.shape() != run.shape()) throw ad::ShapeError("encoder: batch statistic shape mismatch");
      for (std::size_t c = 0; c < run.numel(); ++c) run[c] = (1.0 - momentum) * run[c] + momentum * b[c];
      ad::round_to_f32(run);
    }
  }
}

Tensor Encoder::encode_batch(const Tensor& inputs) const {
  check_input(inputs.shape());
  ad::Tape tape;
  const auto params = bind(tape, false);
  return forward(tape.constant(inputs), params).value();
}

Tensor Encoder::encode(const Tensor& input) const {
  const auto& s = input.shape();
  if (s.size() != 3) throw ad::ShapeError("encoder: expected C x H x W input, got " + ad::shape_str(s));
  Tensor out = encode_batch(input.reshaped({1, s[0], s[1], s[2]}));
  return out.reshaped({config_.embedding_dim});
}

Tensor assemble_blind_input(const Tensor& sketch, std::size_t binary_attributes) {
  if (sketch.rank() != 2) throw ad::ShapeError("sketch must be H x W, got " + ad::shape_str(sketch.shape()));
  const std::size_t H = sketch.dim(0), W = sketch.dim(1);
  Tensor out(Shape{1 + binary_attributes, H, W}, 0.0);
  std::copy(sketch.data().begin(), sketch.data().end(), out.data().begin());
  return out;
}

Tensor assemble_sketch_input(const Tensor& sketch, const lattice::AttributeSchema& schema,
                             const lattice::AttributeCombination& combo) {
  if (combo.schema_hash() != schema.hash()) throw lattice::SchemaError("combination belongs to another schema");
  const auto ind = schema.indicators(combo);
  Tensor out = assemble_blind_input(sketch, ind.size());
  const std::size_t plane = sketch.numel();
  for (std::size_t a = 0; a < ind.size(); ++a) {
    auto first = out.data().begin() + static_cast<std::ptrdiff_t>((a + 1) * plane);
    std::fill(first, first + static_cast<std::ptrdiff_t>(plane), ind[a]);
  }
  return out;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ad::ShapeError("stack: no items");
  const Shape& s = items[0].shape();
  Shape out_shape{items.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  Tensor out(out_shape, 0.0);
  const std::size_t n = items[0].numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != s) {
      throw ad::ShapeError("stack: item " + std::to_string(i) + " has shape " + ad::shape_str(items[i].shape()) +
                           ", expected " + ad::shape_str(s));
    }
    std::copy(items[i].data().begin(), items[i].data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
  }
  return out;
}

}  // namespace attrcenter::encoders
