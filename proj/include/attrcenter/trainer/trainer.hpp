#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "attrcenter/encoders/encoder.hpp"
#include "attrcenter/lattice/centers.hpp"
#include "attrcenter/losses/losses.hpp"
#include "attrcenter/synth/dataset.hpp"
#include "attrcenter/synth/tps.hpp"

namespace attrcenter::trainer {

enum class Optimizer { Sgd, Momentum };

/// Where impostor sketches come from: the photo's own attribute combination,
/// or any other identity (the attribute-unaware baseline).
enum class ImpostorPolicy { SameCombination, AnyIdentity };

struct AugmentConfig {
  bool enabled = true;
  synth::TpsConfig tps;
  double max_scale = 1.15;
  double flip_probability = 0.5;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 0.01;
  // Plain gradient step on the separation term, applied to the centers
  // after the averaged pull toward their embeddings.
  double separation_lr = 0.05;
  double center_alpha = 0.5;
  double center_init_scale = 0.5;
  lattice::MarginConfig margins;
  losses::LossWeights weights;
  std::size_t epochs = 80;
  // 0 means ceil(train identities / batch size).
  std::size_t steps_per_epoch = 0;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::Sgd;
  double momentum = 0.9;
  bool use_attributes = true;
  ImpostorPolicy impostors = ImpostorPolicy::SameCombination;
  AugmentConfig augment;
  std::size_t embedding_dim = 16;
  std::size_t image_height = 32;
  std::size_t image_width = 32;

  // Global gradient-norm ceiling across both encoders; 0 disables it.
  double grad_clip = 10.0;
  bool encoder_batch_norm = true;
  // Running batch-norm statistics follow each batch with this weight.
  double bn_momentum = 0.1;

  std::size_t pretrain_identities = 0;
  std::size_t pretrain_max_epochs = 30;
  std::size_t pretrain_patience = 5;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// Contrastive-only comparison arm: blind sketch input, L_id only and
  /// impostors drawn from any identity.
  static TrainConfig baseline_from(TrainConfig cfg);
};

struct TrainState {
  lattice::CenterRegistry registry;
  encoders::Encoder photo;
  encoders::Encoder sketch;
  // Momentum buffers, parallel to each encoder's parameters(). Empty for plain SGD.
  std::vector<ad::Tensor> photo_velocity;
  std::vector<ad::Tensor> sketch_velocity;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
};

/// Encoders are desk-scale presets sized from the config; weights and centers
/// are seeded from cfg.seed.
TrainState init_state(const lattice::AttributeSchema& schema, const TrainConfig& cfg);

struct Triplet {
  std::size_t photo = 0;     // index into the sample list; also the genuine sketch
  std::size_t impostor = 0;  // index of the impostor sketch
  std::size_t combo = 0;
};

class TripletSampler {
 public:
  /// Combinations with fewer than two identities are excluded. Throws if no
  /// usable combination is left.
  TripletSampler(std::span<const synth::Sample> samples, ImpostorPolicy policy = ImpostorPolicy::SameCombination);

  std::vector<Triplet> sample(std::size_t m, std::mt19937_64& rng) const;
  std::size_t eligible_samples() const { return eligible_.size(); }
  std::size_t eligible_combinations() const { return by_combo_.size(); }

 private:
  std::span<const synth::Sample> samples_;
  ImpostorPolicy policy_;
  std::vector<std::size_t> eligible_;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> by_combo_;  // sorted by combo
};

/// Averaged center rule over the given embeddings (rows) and labels:
/// c_j -= alpha * sum_i [y_i = j](c_j - e_i) / (1 + n_j).
void update_centers(lattice::CenterRegistry& registry, const ad::Tensor& embeddings, std::span<const std::size_t> labels,
                    double alpha);

/// TPS, scale/crop back to the input size, then a random flip.
ad::Tensor augment(const ad::Tensor& img, const AugmentConfig& cfg, std::mt19937_64& rng);

/// One optimisation step on the given triplets. Returns the loss breakdown
/// computed before the update. Throws ad::NumericError naming the term when
/// a loss goes non-finite.
losses::LossBreakdown train_step(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples,
                                 std::span<const Triplet> batch);

struct TraceRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  losses::LossBreakdown loss;
};

/// epoch,step,total,attr,id,cen with a header line.
void write_trace(const std::filesystem::path& path, std::span<const TraceRow> rows);

using StepCallback = std::function<void(const TraceRow&)>;

/// Runs cfg.epochs epochs from the state's current epoch. Batches and
/// augmentation draw from streams keyed on (seed, epoch, step), so the run is
/// a pure function of (config, seed, data).
std::vector<TraceRow> train(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples,
                            const StepCallback& on_step = {});

struct PretrainReport {
  std::size_t epochs_run = 0;
  double best_loss = 0.0;
  std::vector<double> epoch_losses;
};

/// Trains on `pool` one epoch at a time and stops once the mean epoch loss has
/// not improved for cfg.pretrain_patience consecutive epochs.
PretrainReport pretrain(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> pool);

/// Replaces both encoders' running batch-norm statistics with exact ones from
/// a single full-batch pass over the given samples (unaugmented photos and
/// their own sketches).
void recalibrate_batch_norm(TrainState& state, const TrainConfig& cfg, std::span<const synth::Sample> samples);

/// Full pipeline: pretraining on `pool` when it is non-empty, then training
/// on `samples`, then batch-norm recalibration on `samples`.
TrainState fit(const lattice::AttributeSchema& schema, const TrainConfig& cfg, std::span<const synth::Sample> samples,
               std::span<const synth::Sample> pool = {}, std::vector<TraceRow>* trace = nullptr);

// Inference helpers (batched, no tape kept).
ad::Tensor embed_photos(const encoders::Encoder& photo, std::span<const synth::Sample> samples);
/// combos overrides the manifest combination per sample (probe-side
/// attribute noise); empty means use each sample's own.
ad::Tensor embed_sketches(const encoders::Encoder& sketch, const lattice::AttributeSchema& schema,
                          std::span<const synth::Sample> samples, bool use_attributes,
                          std::span<const std::size_t> combos = {});

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Rebuilds the whole state. The schema must hash to the stored value.
TrainState load_checkpoint(const std::filesystem::path& path, const lattice::AttributeSchema& schema,
                           const lattice::MarginConfig& margins = {});

}  // namespace attrcenter::trainer
