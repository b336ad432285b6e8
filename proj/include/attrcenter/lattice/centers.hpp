#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "attrcenter/autodiff/tensor.hpp"
#include "attrcenter/lattice/schema.hpp"

namespace attrcenter::lattice {

struct MarginConfig {
  double margin_unit = 4.0;        // eps_1: margin per contradictory category
  double attribute_margin = 1.0;   // eps_c
  double identity_margin = 1.5;    // eps_d, must stay below 2 * eps_c
};

void validate(const MarginConfig& margins);

/// Learnable centers, one per attribute combination, with the pairwise
/// margin table eps_jk = contradiction_count(j, k) * eps_1. All margins are
/// compared against squared Euclidean distances.
class CenterRegistry {
 public:
  CenterRegistry(AttributeSchema schema, std::size_t dim, MarginConfig margins);

  const AttributeSchema& schema() const { return schema_; }
  const MarginConfig& margins() const { return margins_; }
  std::size_t center_count() const { return schema_.combination_count(); }
  std::size_t dim() const { return dim_; }

  const ad::Tensor& centers() const { return centers_; }
  /// Replaces the center matrix; must be n_c x d and finite.
  void set_centers(ad::Tensor centers);

  std::size_t contradiction_count(std::size_t j, std::size_t k) const;
  double pairwise_margin(std::size_t j, std::size_t k) const;
  /// n_c x n_c table of eps_jk.
  const ad::Tensor& margin_matrix() const { return margin_table_; }
  /// Smallest strictly positive eps_jk (eps_1 whenever n_c >= 2).
  double min_positive_margin() const;

  /// i.i.d. N(0, scale^2) entries, reproducible from `seed`; scale 0 gives zeros.
  void init_centers(std::uint64_t seed, double scale);

  /// Minimum squared distance over all center pairs.
  double min_pairwise_sq_distance() const;

 private:
  void check_index(std::size_t j) const;

  AttributeSchema schema_;
  std::size_t dim_;
  MarginConfig margins_;
  ad::Tensor centers_;
  std::vector<unsigned char> contradictions_;
  ad::Tensor margin_table_;
};

}  // namespace attrcenter::lattice
