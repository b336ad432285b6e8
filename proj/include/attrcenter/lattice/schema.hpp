#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace attrcenter::lattice {

class SchemaError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One attribute category. State 0 is the "absent/unknown" state: it expands
/// to all-zero indicator planes. States 1..n-1 each own one binary indicator.
struct AttributeCategory {
  std::string name;
  std::vector<std::string> states;

  std::size_t state_count() const { return states.size(); }
  std::size_t indicator_count() const { return states.size() - 1; }
};

class AttributeSchema;

/// One state per category plus the mixed-radix linear index.
class AttributeCombination {
 public:
  AttributeCombination() = default;

  std::size_t index() const { return index_; }
  std::span<const std::size_t> states() const { return states_; }
  std::size_t state(std::size_t category) const { return states_.at(category); }
  std::uint64_t schema_hash() const { return schema_hash_; }

  friend bool operator==(const AttributeCombination&, const AttributeCombination&) = default;

 private:
  friend class AttributeSchema;
  std::vector<std::size_t> states_;
  std::size_t index_ = 0;
  std::uint64_t schema_hash_ = 0;
};

class AttributeSchema {
 public:
  explicit AttributeSchema(std::vector<AttributeCategory> categories);

  /// hair(6) x race(5) x glasses(3) x gender(2) = 180 combinations, 12 indicators.
  static AttributeSchema paper_preset();
  /// hair(4) x skin(3) x glasses(2) = 24 combinations; the desk-scale benchmark.
  static AttributeSchema desk_preset();

  std::span<const AttributeCategory> categories() const { return categories_; }
  std::size_t category_count() const { return categories_.size(); }
  const AttributeCategory& category(std::size_t i) const { return categories_.at(i); }
  /// Index of the category with this name, or category_count() if absent.
  std::size_t find_category(const std::string& name) const;

  std::size_t combination_count() const { return combination_count_; }
  std::size_t binary_attribute_count() const { return binary_count_; }
  std::uint64_t hash() const { return hash_; }

  /// First category is the most significant digit.
  std::size_t encode(std::span<const std::size_t> states) const;
  AttributeCombination decode(std::size_t index) const;
  AttributeCombination combination(std::span<const std::size_t> states) const { return decode(encode(states)); }

  /// n binary indicators in schema order (one per non-absent state).
  std::vector<double> indicators(const AttributeCombination& combo) const;

  friend bool operator==(const AttributeSchema& a, const AttributeSchema& b) { return a.hash_ == b.hash_; }

 private:
  std::vector<AttributeCategory> categories_;
  std::size_t combination_count_ = 1;
  std::size_t binary_count_ = 0;
  std::uint64_t hash_ = 0;
};

std::vector<AttributeCombination> enumerate_combinations(const AttributeSchema& schema);

/// Number of categories whose states differ. Throws SchemaError when the two
/// combinations come from different schemas.
std::size_t contradiction_count(const AttributeCombination& a, const AttributeCombination& b);

}  // namespace attrcenter::lattice
