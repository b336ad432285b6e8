#include "attrcenter/lattice/schema.hpp"

#include <limits>
#include <set>

namespace attrcenter::lattice {

namespace {

std::uint64_t fnv1a(std::uint64_t h, const std::string& s) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  h ^= 0xff;  // separator
  h *= 1099511628211ULL;
  return h;
}

}  // namespace

AttributeSchema::AttributeSchema(std::vector<AttributeCategory> categories) : categories_(std::move(categories)) {
  if (categories_.empty()) throw SchemaError("schema needs at least one category");
  std::set<std::string> names;
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& c : categories_) {
    if (c.name.empty()) throw SchemaError("category name must not be empty");
    if (!names.insert(c.name).second) throw SchemaError("duplicate category '" + c.name + "'");
    if (c.state_count() < 2) {
      throw SchemaError("category '" + c.name + "' needs at least 2 states, has " + std::to_string(c.state_count()));
    }
    if (combination_count_ > std::numeric_limits<std::size_t>::max() / c.state_count()) {
      throw SchemaError("schema has too many combinations");
    }
    combination_count_ *= c.state_count();
    binary_count_ += c.indicator_count();
    h = fnv1a(h, c.name);
    h = fnv1a(h, std::to_string(c.state_count()));
    for (const auto& s : c.states) h = fnv1a(h, s);
  }
  hash_ = h;
}

AttributeSchema AttributeSchema::paper_preset() {
  return AttributeSchema({
      {"hair", {"none", "black", "brown", "blond", "gray", "bald"}},
      {"race", {"none", "asian", "indian", "white", "black"}},
      {"glasses", {"none", "eyeglasses", "sunglasses"}},
      {"gender", {"female", "male"}},
  });
}

AttributeSchema AttributeSchema::desk_preset() {
  return AttributeSchema({
      {"hair", {"none", "black", "blond", "gray"}},
      {"skin", {"none", "light", "dark"}},
      {"glasses", {"none", "eyeglasses"}},
  });
}

std::size_t AttributeSchema::find_category(const std::string& name) const {
  for (std::size_t i = 0; i < categories_.size(); ++i)
    if (categories_[i].name == name) return i;
  return categories_.size();
}

std::size_t AttributeSchema::encode(std::span<const std::size_t> states) const {
  if (states.size() != categories_.size()) {
    throw SchemaError("expected " + std::to_string(categories_.size()) + " category states, got " +
                      std::to_string(states.size()));
  }
  std::size_t index = 0;
  for (std::size_t c = 0; c < categories_.size(); ++c) {
    if (states[c] >= categories_[c].state_count()) {
      throw SchemaError("state " + std::to_string(states[c]) + " out of range for category '" + categories_[c].name +
                        "'");
    }
    index = index * categories_[c].state_count() + states[c];
  }
  return index;
}

AttributeCombination AttributeSchema::decode(std::size_t index) const {
  if (index >= combination_count_) {
    throw SchemaError("combination index " + std::to_string(index) + " >= " + std::to_string(combination_count_));
  }
  AttributeCombination combo;
  combo.states_.resize(categories_.size());
  std::size_t rest = index;
  for (std::size_t c = categories_.size(); c-- > 0;) {
    combo.states_[c] = rest % categories_[c].state_count();
    rest /= categories_[c].state_count();
  }
  combo.index_ = index;
  combo.schema_hash_ = hash_;
  return combo;
}

std::vector<double> AttributeSchema::indicators(const AttributeCombination& combo) const {
  if (combo.schema_hash() != hash_) throw SchemaError("combination belongs to a different schema");
  std::vector<double> out(binary_count_, 0.0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < categories_.size(); ++c) {
    const std::size_t s = combo.state(c);
    if (s > 0) out[offset + s - 1] = 1.0;
    offset += categories_[c].indicator_count();
  }
  return out;
}

std::vector<AttributeCombination> enumerate_combinations(const AttributeSchema& schema) {
  std::vector<AttributeCombination> out;
  out.reserve(schema.combination_count());
  for (std::size_t i = 0; i < schema.combination_count(); ++i) out.push_back(schema.decode(i));
  return out;
}

std::size_t contradiction_count(const AttributeCombination& a, const AttributeCombination& b) {
  if (a.schema_hash() != b.schema_hash() || a.states().size() != b.states().size()) {
    throw SchemaError("contradiction_count: combinations come from different schemas");
  }
  std::size_t n = 0;
  for (std::size_t c = 0; c < a.states().size(); ++c) n += a.states()[c] != b.states()[c];
  return n;
}

}  // namespace attrcenter::lattice
