#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "attrcenter/autodiff/tensor.hpp"
#include "attrcenter/trainer/trainer.hpp"

namespace attrcenter::eval {

using ad::Tensor;

/// Gallery of (identity id, embedding) rows.
class GalleryIndex {
 public:
  /// embeddings: N x d, finite; ids unique.
  GalleryIndex(std::vector<std::size_t> ids, Tensor embeddings);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return embeddings_.dim(1); }
  std::span<const std::size_t> ids() const { return ids_; }
  const Tensor& embeddings() const { return embeddings_; }

 private:
  std::vector<std::size_t> ids_;
  Tensor embeddings_;
};

GalleryIndex build_gallery(const encoders::Encoder& photo, std::span<const synth::Sample> mugshots);

struct RankedList {
  std::size_t probe_id = 0;
  std::vector<std::size_t> ids;     // best first
  std::vector<double> distances;    // squared Euclidean, parallel to ids
};

/// Ascending squared distance, ties by ascending id.
RankedList rank_embedding(const GalleryIndex& gallery, std::span<const double> probe, std::size_t probe_id = 0);

/// Encodes sketch (+ attribute planes of combo unless blind) and ranks it.
RankedList rank_probe(const GalleryIndex& gallery, const Tensor& sketch, const lattice::AttributeSchema& schema,
                      const lattice::AttributeCombination& combo, const encoders::Encoder& sketch_encoder,
                      bool use_attributes = true);

/// 1-based position of true_id; throws std::invalid_argument if absent
/// (closed-set protocol).
std::size_t rank_of(const RankedList& list, std::size_t true_id);

struct Cmc {
  std::vector<double> accuracy;  // accuracy[k - 1] for k = 1..gallery size
  double at(std::size_t k) const;
};

Cmc cmc(std::span<const RankedList> lists, std::span<const std::size_t> true_ids);
Cmc cmc_from_ranks(std::span<const std::size_t> ranks, std::size_t gallery_size);

struct EvalReport {
  std::vector<std::size_t> probe_ids;
  std::vector<std::size_t> mate_ranks;
  std::size_t gallery_size = 0;
  Cmc curve;
  // Probes' top-5 entries whose combination contradicts the probe's in two or
  // more categories, summed over probes.
  std::size_t top5_contradictions = 0;
};

struct ProbeSet {
  std::span<const synth::Sample> probes;
  /// Probe-side attribute combinations (may differ from the truth under
  /// attribute noise); empty means each probe's own.
  std::span<const std::size_t> probe_combos;
};

/// Ranks every probe sketch against the gallery photos. The gallery samples'
/// combinations feed the contradiction count.
EvalReport evaluate(const trainer::TrainState& model, bool use_attributes, std::span<const synth::Sample> gallery,
                    const ProbeSet& probes);

void write_rank_csv(const std::filesystem::path& path, const EvalReport& report);
void write_cmc_csv(const std::filesystem::path& path, const Cmc& curve, std::span<const std::size_t> ks = {});
/// Reads probe_id,rank_of_mate rows back.
std::vector<std::size_t> read_rank_csv(const std::filesystem::path& path);

/// Replaces each category's state with a different, uniformly chosen state
/// with probability q.
std::vector<std::size_t> perturb_attributes(std::span<const synth::Sample> probes, const lattice::AttributeSchema& schema,
                                            double q, std::uint64_t seed);

// ---- protocols -----------------------------------------------------------

enum class Protocol { P1, P2, P3 };
Protocol parse_protocol(const std::string& name);
std::string protocol_name(Protocol p);

struct ProtocolConfig {
  std::size_t identities = 200;
  std::size_t folds = 10;
  // Training share of identities (48 of 123).
  double train_ratio = 48.0 / 123.0;
  // Extended gallery size as a multiple of the number of probe mates.
  std::size_t gallery_factor = 10;
  std::vector<std::size_t> ks{1, 5, 10, 20};
  double attr_noise = 0.0;
  std::uint64_t seed = 1;
  synth::RenderConfig render = synth::RenderConfig::style_a();
  synth::RenderConfig unseen_style = synth::RenderConfig::style_b();

  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;  // indices into the identity list
  std::vector<std::size_t> test;
};

/// Random train/test partition for one fold, keyed on (seed, fold).
Split split_identities(std::size_t n, double train_ratio, std::uint64_t seed, std::size_t fold);

struct FoldResult {
  std::size_t fold = 0;
  EvalReport report;
};

struct ProtocolReport {
  Protocol protocol = Protocol::P1;
  std::vector<std::size_t> ks;
  std::vector<FoldResult> folds;
  std::vector<double> mean;  // parallel to ks
  std::vector<double> stddev;
};

/// Synthesises the benchmark, then for each fold trains a fresh model and
/// evaluates it under the given protocol.
ProtocolReport run_protocol(Protocol protocol, const ProtocolConfig& proto, const trainer::TrainConfig& train,
                            const lattice::AttributeSchema& schema);

/// protocol,fold,k,accuracy rows plus mean/std rows (fold = "mean" / "std").
void write_protocol_csv(const std::filesystem::path& path, const ProtocolReport& report);

// ---- ablation ------------------------------------------------------------

struct ArmResult {
  std::vector<double> rank_k;           // standard gallery, parallel to ks
  std::vector<double> extended_rank_k;  // gallery extended by gallery_factor
  std::size_t top5_contradictions = 0;
  double min_center_sq_distance = 0.0;
};

struct AblationRow {
  std::uint64_t seed = 0;
  ArmResult attribute;
  ArmResult baseline;
};

struct AblationReport {
  std::vector<std::size_t> ks;
  std::vector<AblationRow> rows;
};

/// Paired arms per seed: identical data, split and training budget; only the
/// model differs (attribute-centered vs attribute-blind contrastive).
AblationReport ablate_attributes(const ProtocolConfig& proto, const trainer::TrainConfig& train,
                                 const lattice::AttributeSchema& schema, std::span<const std::uint64_t> seeds);

/// seed,arm,gallery,k,accuracy rows plus per-seed delta rows.
void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);

// ---- shared data plumbing ------------------------------------------------

struct Benchmark {
  std::vector<synth::Sample> train;
  std::vector<synth::Sample> test;         // probes; their photos form the gallery
  std::vector<synth::Sample> distractors;  // extra gallery photos for the extended gallery
  std::vector<synth::Sample> pretrain_pool;
};

// Distractor and pretraining identities live in their own id ranges.
inline constexpr std::size_t kDistractorIdBase = 1'000'000;
inline constexpr std::size_t kPretrainIdBase = 2'000'000;

/// Pretraining identities starting at kPretrainIdBase.
std::vector<synth::Sample> pretrain_pool(std::size_t n, const lattice::AttributeSchema& schema, std::uint64_t seed,
                                         const synth::RenderConfig& render);

/// Deterministic benchmark for one (seed, fold): identity ids 0..n-1 split by
/// split_identities, distractor and pretraining identities drawn from
/// disjoint id ranges.
Benchmark make_benchmark(const ProtocolConfig& proto, const trainer::TrainConfig& train,
                         const lattice::AttributeSchema& schema, std::size_t fold, bool unseen_style_probes = false,
                         bool with_distractors = false);

}  // namespace attrcenter::eval
