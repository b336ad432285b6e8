#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "attrcenter/autodiff/tape.hpp"

namespace attrcenter::ad {

/// Builds a scalar expression on `tape` from leaves bound to the check point.
using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

struct CoordinateCheck {
  std::size_t input = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  // Perturbing this coordinate by +/- step switched a piecewise branch.
  bool near_kink = false;
};

struct GradcheckReport {
  std::vector<CoordinateCheck> coordinates;
  double max_rel_error = 0.0;  // over coordinates not flagged near_kink
  std::size_t kink_count = 0;
  bool passed = false;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, kRelErrorFloor).
inline constexpr double kRelErrorFloor = 1e-3;
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `fn` against central differences.
/// The numeric side only ever evaluates `fn` forward on fresh tapes.
GradcheckReport gradcheck(const ScalarFn& fn, std::span<const Tensor> point, double step = 1e-4, double tol = 1e-4);

}  // namespace attrcenter::ad
