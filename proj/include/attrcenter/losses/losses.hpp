#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "attrcenter/autodiff/ops.hpp"
#include "attrcenter/lattice/centers.hpp"

// Center-loss baselines and the attribute-centered loss family, expressed as
// tape expressions over embeddings and a center matrix. Batch sums are not
// normalised by the batch size.
namespace attrcenter::losses {

/// Photo, genuine-sketch and impostor-sketch embeddings (each m x d) with the
/// shared attribute combination index of each row.
struct BatchEmbeddings {
  ad::Var photo;
  ad::Var genuine;
  ad::Var impostor;
  std::span<const std::size_t> combos;
};

struct LossWeights {
  double attr = 1.0;
  double id = 1.0;
  double cen = 1.0;
};

struct LossBreakdown {
  double total = 0.0;
  double attr = 0.0;
  double id = 0.0;
  double cen = 0.0;
  std::optional<double> center;
  std::optional<double> contrastive_center;
  std::optional<double> softmax;
};

struct LossTerms {
  ad::Var total;
  ad::Var attr;
  ad::Var id;
  ad::Var cen;

  LossBreakdown values() const;
};

/// 1/2 sum_i ||x_i - c_{y_i}||^2
ad::Var center_loss(ad::Var x, std::span<const std::size_t> y, ad::Var centers);

/// L_s + lambda * L_c, with L_s the batch-summed softmax cross-entropy.
ad::Var joint_center_softmax(ad::Var logits, std::span<const std::size_t> labels, ad::Var x,
                             std::span<const std::size_t> y, ad::Var centers, double lambda);

/// 1/2 sum_i ||x_i - c_{y_i}||^2 / (sum_{j != y_i} ||x_i - c_j||^2 + delta)
ad::Var contrastive_center_loss(ad::Var x, std::span<const std::size_t> y, ad::Var centers, double delta);

/// 1/2 sum_i of max(||e - c_{y_i}||^2 - eps_c, 0) over e in {p_i, s_i^g, s_i^im}.
ad::Var attribute_loss(const BatchEmbeddings& batch, ad::Var centers, const lattice::CenterRegistry& registry);

/// 1/2 sum_i ||p_i - s_i^g||^2 + max(eps_d - ||p_i - s_i^im||^2, 0)
ad::Var identity_loss(const BatchEmbeddings& batch, const lattice::CenterRegistry& registry);

/// 1/2 sum_j sum_{k != j} max(eps_jk - ||c_j - c_k||^2, 0), both orders counted.
ad::Var center_separation_loss(ad::Var centers, const lattice::CenterRegistry& registry);

/// w_attr * attr + w_id * id + w_cen * cen over already-built terms.
LossTerms combine(ad::Var attr, ad::Var id, ad::Var cen, const LossWeights& weights);

LossTerms attribute_centered_loss(const BatchEmbeddings& batch, ad::Var centers,
                                  const lattice::CenterRegistry& registry, const LossWeights& weights = {});

void validate(const LossWeights& weights);

}  // namespace attrcenter::losses
