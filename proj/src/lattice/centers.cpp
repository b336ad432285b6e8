#include "attrcenter/lattice/centers.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace attrcenter::lattice {

void validate(const MarginConfig& m) {
  if (!(m.margin_unit > 0.0)) throw SchemaError("margin unit eps_1 must be positive");
  if (!(m.attribute_margin > 0.0)) throw SchemaError("attribute margin eps_c must be positive");
  if (!(m.identity_margin > 0.0)) throw SchemaError("identity margin eps_d must be positive");
  if (!(m.identity_margin < 2.0 * m.attribute_margin)) {
    throw SchemaError("identity margin eps_d = " + std::to_string(m.identity_margin) +
                      " must be less than twice the attribute margin eps_c = " + std::to_string(m.attribute_margin));
  }
}

CenterRegistry::CenterRegistry(AttributeSchema schema, std::size_t dim, MarginConfig margins)
    : schema_(std::move(schema)), dim_(dim), margins_(margins) {
  validate(margins_);
  if (dim_ == 0) throw SchemaError("embedding dimension must be positive");
  const std::size_t n = schema_.combination_count();
  centers_ = ad::Tensor(ad::Shape{n, dim_}, 0.0);
  contradictions_.resize(n * n);
  margin_table_ = ad::Tensor(ad::Shape{n, n}, 0.0);
  const auto combos = enumerate_combinations(schema_);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) {
      const auto h = lattice::contradiction_count(combos[j], combos[k]);
      contradictions_[j * n + k] = static_cast<unsigned char>(h);
      margin_table_.at(j, k) = static_cast<double>(h) * margins_.margin_unit;
    }
}

void CenterRegistry::check_index(std::size_t j) const {
  if (j >= center_count()) {
    throw std::out_of_range("center index " + std::to_string(j) + " >= " + std::to_string(center_count()));
  }
}

void CenterRegistry::set_centers(ad::Tensor centers) {
  if (centers.shape() != ad::Shape{center_count(), dim_}) {
    throw ad::ShapeError("centers must have shape " + ad::shape_str({center_count(), dim_}) + ", got " +
                         ad::shape_str(centers.shape()));
  }
  if (!centers.all_finite()) throw ad::NumericError("centers contain non-finite values");
  centers_ = std::move(centers);
}

std::size_t CenterRegistry::contradiction_count(std::size_t j, std::size_t k) const {
  check_index(j);
  check_index(k);
  return contradictions_[j * center_count() + k];
}

double CenterRegistry::pairwise_margin(std::size_t j, std::size_t k) const {
  check_index(j);
  check_index(k);
  return margin_table_.at(j, k);
}

double CenterRegistry::min_positive_margin() const {
  double best = std::numeric_limits<double>::infinity();
  for (double v : margin_table_.data())
    if (v > 0.0 && v < best) best = v;
  return best;
}

void CenterRegistry::init_centers(std::uint64_t seed, double scale) {
  if (!(scale >= 0.0)) throw std::invalid_argument("center init scale must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& v : centers_.data()) v = scale * gauss(rng);
  ad::round_to_f32(centers_);
}

double CenterRegistry::min_pairwise_sq_distance() const {
  const std::size_t n = center_count();
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = j + 1; k < n; ++k) {
      double acc = 0.0;
      for (std::size_t q = 0; q < dim_; ++q) {
        const double diff = centers_.at(j, q) - centers_.at(k, q);
        acc += diff * diff;
      }
      best = std::min(best, acc);
    }
  return best;
}

}  // namespace attrcenter::lattice
