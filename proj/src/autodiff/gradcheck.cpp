#include "attrcenter/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace attrcenter::ad {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Tape tape;
  tape.set_track_kinks(true);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  Var out = fn(tape, vars);
  if (out.value().numel() != 1) {
    throw ShapeError("gradcheck: function must be scalar-valued, got shape " + shape_str(out.shape()));
  }
  return {out.value()[0], tape.kink_signature()};
}

}  // namespace

GradcheckReport gradcheck(const ScalarFn& fn, std::span<const Tensor> point, double step, double tol) {
  if (!(step > 0.0)) throw std::invalid_argument("gradcheck: step must be positive");
  for (const auto& t : point)
    if (!t.all_finite()) throw NumericError("gradcheck: point has non-finite values");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : point) vars.push_back(tape.leaf(t, true));
    Var out = fn(tape, vars);
    if (out.value().numel() != 1) {
      throw ShapeError("gradcheck: function must be scalar-valued, got shape " + shape_str(out.shape()));
    }
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  std::vector<Tensor> work(point.begin(), point.end());
  const std::uint64_t base_sig = evaluate(fn, work).signature;

  GradcheckReport report;
  for (std::size_t in = 0; in < work.size(); ++in) {
    for (std::size_t i = 0; i < work[in].numel(); ++i) {
      const double orig = work[in][i];
      work[in][i] = orig + step;
      const Evaluation plus = evaluate(fn, work);
      work[in][i] = orig - step;
      const Evaluation minus = evaluate(fn, work);
      work[in][i] = orig;

      CoordinateCheck c;
      c.input = in;
      c.index = i;
      c.analytic = analytic[in][i];
      c.numeric = (plus.value - minus.value) / (2.0 * step);
      c.rel_error = relative_error(c.analytic, c.numeric);
      c.near_kink = plus.signature != base_sig || minus.signature != base_sig;
      if (c.near_kink) {
        ++report.kink_count;
      } else {
        report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
      }
      report.coordinates.push_back(c);
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace attrcenter::ad
