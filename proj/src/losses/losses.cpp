#include "attrcenter/losses/losses.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace attrcenter::losses {

using ad::Var;

namespace {

void check_rows(const char* op, Var x, std::span<const std::size_t> y, Var centers) {
  if (x.value().rank() != 2 || centers.value().rank() != 2) {
    throw ad::ShapeError(std::string(op) + ": embeddings and centers must be matrices, got " + ad::shape_str(x.shape()) +
                         " and " + ad::shape_str(centers.shape()));
  }
  if (x.shape()[1] != centers.shape()[1]) {
    throw ad::ShapeError(std::string(op) + ": embedding dim mismatch " + ad::shape_str(x.shape()) + " vs " +
                         ad::shape_str(centers.shape()));
  }
  if (y.size() != x.shape()[0]) {
    throw ad::ShapeError(std::string(op) + ": " + std::to_string(y.size()) + " labels for " +
                         std::to_string(x.shape()[0]) + " embeddings");
  }
  for (auto label : y) {
    if (label >= centers.shape()[0]) {
      throw std::out_of_range(std::string(op) + ": center index " + std::to_string(label) + " >= " +
                              std::to_string(centers.shape()[0]));
    }
  }
}

void check_batch(const BatchEmbeddings& b, std::size_t n_centers) {
  const auto& ps = b.photo.shape();
  if (ps.size() != 2) throw ad::ShapeError("batch embeddings must be m x d, got " + ad::shape_str(ps));
  if (b.genuine.shape() != ps || b.impostor.shape() != ps) {
    throw ad::ShapeError("photo/genuine/impostor embeddings disagree: " + ad::shape_str(ps) + ", " +
                         ad::shape_str(b.genuine.shape()) + ", " + ad::shape_str(b.impostor.shape()));
  }
  if (b.combos.size() != ps[0]) {
    throw ad::ShapeError("batch has " + std::to_string(ps[0]) + " rows but " + std::to_string(b.combos.size()) +
                         " combination indices");
  }
  for (auto y : b.combos)
    if (y >= n_centers) {
      throw std::out_of_range("combination index " + std::to_string(y) + " >= " + std::to_string(n_centers));
    }
}

Var half_sum(Var x) { return ad::scale(ad::sum(x), 0.5); }

}  // namespace

LossBreakdown LossTerms::values() const {
  LossBreakdown b;
  b.total = total.value().item();
  b.attr = attr.value().item();
  b.id = id.value().item();
  b.cen = cen.value().item();
  return b;
}

void validate(const LossWeights& w) {
  if (!(w.attr >= 0.0) || !(w.id >= 0.0) || !(w.cen >= 0.0)) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
}

Var center_loss(Var x, std::span<const std::size_t> y, Var centers) {
  check_rows("center_loss", x, y, centers);
  return ad::scale(ad::sq_norm(ad::sub(x, ad::gather_rows(centers, y))), 0.5);
}

Var joint_center_softmax(Var logits, std::span<const std::size_t> labels, Var x, std::span<const std::size_t> y,
                         Var centers, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("joint_center_softmax: lambda must be non-negative");
  Var ce = ad::softmax_cross_entropy(logits, labels);
  return ad::add(ce, ad::scale(center_loss(x, y, centers), lambda));
}

Var contrastive_center_loss(Var x, std::span<const std::size_t> y, Var centers, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("contrastive_center_loss: delta must be positive");
  check_rows("contrastive_center_loss", x, y, centers);
  const std::size_t m = x.shape()[0], k = centers.shape()[0];
  if (k < 2) throw std::invalid_argument("contrastive_center_loss: needs at least 2 centers");
  ad::Tensor others(ad::Shape{m, k}, 1.0);
  for (std::size_t i = 0; i < m; ++i) others.at(i, y[i]) = 0.0;
  ad::Tape& tape = x.tape();
  Var dists = ad::sq_dist_matrix(x, centers);
  Var denom = ad::add_scalar(ad::row_sum(ad::mul(dists, tape.constant(std::move(others)))), delta);
  Var intra = ad::row_sq_norm(ad::sub(x, ad::gather_rows(centers, y)));
  return half_sum(ad::div(intra, denom));
}

Var attribute_loss(const BatchEmbeddings& batch, Var centers, const lattice::CenterRegistry& registry) {
  check_batch(batch, registry.center_count());
  check_rows("attribute_loss", batch.photo, batch.combos, centers);
  const double eps_c = registry.margins().attribute_margin;
  Var c = ad::gather_rows(centers, batch.combos);
  auto hinge = [&](Var e) { return ad::clamp_min(ad::add_scalar(ad::row_sq_norm(ad::sub(e, c)), -eps_c), 0.0); };
  Var acc = ad::add(ad::add(hinge(batch.photo), hinge(batch.genuine)), hinge(batch.impostor));
  return half_sum(acc);
}

Var identity_loss(const BatchEmbeddings& batch, const lattice::CenterRegistry& registry) {
  check_batch(batch, registry.center_count());
  const double eps_d = registry.margins().identity_margin;
  Var genuine = ad::row_sq_norm(ad::sub(batch.photo, batch.genuine));
  Var impostor = ad::clamp_min(ad::add_scalar(ad::scale(ad::row_sq_norm(ad::sub(batch.photo, batch.impostor)), -1.0), eps_d), 0.0);
  return half_sum(ad::add(genuine, impostor));
}

Var center_separation_loss(Var centers, const lattice::CenterRegistry& registry) {
  const std::size_t n = registry.center_count();
  if (n < 2) throw std::invalid_argument("center_separation_loss: needs at least 2 centers");
  if (centers.shape() != ad::Shape{n, registry.dim()}) {
    throw ad::ShapeError("center_separation_loss: centers " + ad::shape_str(centers.shape()) + " do not match registry " +
                         ad::shape_str({n, registry.dim()}));
  }
  const std::size_t pairs = n * (n - 1);
  std::vector<std::size_t> rows_j, rows_k;
  std::vector<double> margins;
  rows_j.reserve(pairs);
  rows_k.reserve(pairs);
  margins.reserve(pairs);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      if (j == k) continue;
      rows_j.push_back(j);
      rows_k.push_back(k);
      margins.push_back(registry.margin_matrix().at(j, k));
    }
  ad::Tape& tape = centers.tape();
  Var d2 = ad::row_sq_norm(ad::sub(ad::gather_rows(centers, rows_j), ad::gather_rows(centers, rows_k)));
  Var slack = ad::sub(tape.constant(ad::Tensor(ad::Shape{pairs}, std::move(margins))), d2);
  return half_sum(ad::clamp_min(slack, 0.0));
}

LossTerms combine(Var attr, Var id, Var cen, const LossWeights& w) {
  validate(w);
  Var total = ad::add(ad::add(ad::scale(attr, w.attr), ad::scale(id, w.id)), ad::scale(cen, w.cen));
  return {total, attr, id, cen};
}

LossTerms attribute_centered_loss(const BatchEmbeddings& batch, Var centers, const lattice::CenterRegistry& registry,
                                  const LossWeights& weights) {
  validate(weights);
  Var attr = attribute_loss(batch, centers, registry);
  Var id = identity_loss(batch, registry);
  Var cen = center_separation_loss(centers, registry);
  return combine(attr, id, cen, weights);
}

}  // namespace attrcenter::losses
