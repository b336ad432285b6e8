#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "attrcenter/autodiff/ops.hpp"

namespace testutil {

inline attrcenter::ad::Tensor random_tensor(std::mt19937_64& rng, attrcenter::ad::Shape shape, double lo = -1.0,
                                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  attrcenter::ad::Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Central-difference derivative of a forward-only evaluation. Deliberately
// separate from attrcenter::ad::gradcheck.
template <class Fn>
std::vector<double> finite_difference(Fn&& forward, std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = forward(x);
    x[i] = orig - h;
    const double fm = forward(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3});
}

}  // namespace testutil
