#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "attrcenter/autodiff/ops.hpp"
#include "attrcenter/lattice/schema.hpp"

namespace attrcenter::encoders {

enum class PoolKind { Max, Avg };

/// conv(kernel, stride, same padding) -> [batch norm] -> channel affine ->
/// relu -> pool.
/// pool <= 1 means no pooling after this stage.
struct ConvStage {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pool = 2;
};

struct EncoderConfig {
  std::size_t input_channels = 3;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::vector<ConvStage> stages;
  std::size_t embedding_dim = 16;
  PoolKind pool = PoolKind::Avg;
  // Linear layer after global pooling. Without it the last stage must emit
  // embedding_dim channels.
  bool projection = true;
  // Batch statistics ahead of every affine (and on the pooled features when
  // projecting). Off leaves a bare per-channel affine.
  bool batch_norm = true;
  std::string preset;

  /// Throws std::invalid_argument describing the first problem found.
  void validate() const;
  /// Spatial size after all stages; throws if some stage would empty it.
  std::pair<std::size_t, std::size_t> feature_size() const;
};

struct EncoderPair {
  EncoderConfig photo;
  EncoderConfig sketch;
};

/// Four stages (8, 16, 32, 32 channels), 3x3 kernels, 2x2 average pooling,
/// GAP and a projection to `dim`. Sketch side takes 1 + n channels. Inputs
/// must be at least 16x16.
EncoderPair desk_preset(const lattice::AttributeSchema& schema, std::size_t dim = 16, std::size_t height = 32,
                        std::size_t width = 32);

/// VGG16 trunk with the tail swapped for 256-256-64 convolutions, global
/// average pooling, 250x200 inputs, 64-d output and 13 sketch channels.
EncoderPair paper_preset();

struct Parameter {
  std::string name;
  ad::Tensor value;
};

/// Per-channel batch statistics collected by a training-mode forward pass,
/// one entry per normalisation site.
struct BatchStats {
  std::vector<ad::Tensor> mean;
  std::vector<ad::Tensor> var;
};

class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  /// Running means and variances, two per normalisation site; not trained.
  std::vector<Parameter>& buffers() { return buffers_; }
  const std::vector<Parameter>& buffers() const { return buffers_; }

  /// Puts every parameter on the tape, as gradient leaves or as constants.
  std::vector<ad::Var> bind(ad::Tape& tape, bool requires_grad) const;

  /// x: N x C x H x W -> N x d, using externally bound parameters (same order
  /// as parameters()). With `batch` set, normalisation uses the batch's own
  /// statistics and records them; otherwise the running ones.
  ad::Var forward(ad::Var x, std::span<const ad::Var> params, BatchStats* batch = nullptr) const;

  /// running = (1 - momentum) * running + momentum * batch.
  void update_running_stats(const BatchStats& batch, double momentum);

  /// Single-input inference: C x H x W -> d.
  ad::Tensor encode(const ad::Tensor& input) const;
  /// Batched inference: N x C x H x W -> N x d.
  ad::Tensor encode_batch(const ad::Tensor& inputs) const;

 private:
  void check_input(const ad::Shape& shape) const;
  ad::Var normalise(ad::Var h, std::size_t site, BatchStats* batch) const;

  EncoderConfig config_;
  std::vector<Parameter> params_;
  std::vector<Parameter> buffers_;
};

/// Channel 0 is the sketch, channels 1..n are constant 0/1 indicator planes
/// in schema order. sketch: H x W.
ad::Tensor assemble_sketch_input(const ad::Tensor& sketch, const lattice::AttributeSchema& schema,
                                 const lattice::AttributeCombination& combo);
/// Same layout with every attribute plane zeroed (attribute-unaware input).
ad::Tensor assemble_blind_input(const ad::Tensor& sketch, std::size_t binary_attributes);

/// Stacks equally shaped C x H x W tensors into N x C x H x W.
ad::Tensor stack(std::span<const ad::Tensor> items);

}  // namespace attrcenter::encoders
