#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "attrcenter/eval/eval.hpp"

namespace attrcenter::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AppConfig {
  lattice::AttributeSchema schema = lattice::AttributeSchema::desk_preset();
  trainer::TrainConfig train;
  eval::ProtocolConfig protocol;
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3, 4, 5};
  std::size_t synth_identities = 200;
  bool synth_unseen_style = false;

  /// Propagates the seed to training, protocol and (seed-offset) ablation.
  void set_seed(std::uint64_t seed);
  std::uint64_t seed() const { return train.seed; }
  synth::RenderConfig render() const;
};

/// Sections: seed, schema, encoder, train, eval, synth. Unknown keys are
/// rejected. A missing or unreadable file throws ConfigError naming the path.
AppConfig load_config(const std::filesystem::path& path);
AppConfig parse_config(const std::string& text);

}  // namespace attrcenter::cli
