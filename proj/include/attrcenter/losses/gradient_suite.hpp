#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace attrcenter::losses {

struct SuiteConfig {
  std::size_t points = 100;
  std::size_t batch = 4;     // m
  std::size_t dim = 8;       // d
  double step = 1e-4;
  double tolerance = 1e-3;   // max relative error
};

struct LossCheckSummary {
  std::string name;
  std::size_t points = 0;
  std::size_t coordinates = 0;
  std::size_t kinks = 0;     // coordinates skipped as hinge-boundary
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Finite-difference check of every loss at random points drawn from `seed`,
/// over a six-combination lattice.
std::vector<LossCheckSummary> loss_gradient_suite(std::uint64_t seed, const SuiteConfig& cfg = {});

}  // namespace attrcenter::losses
