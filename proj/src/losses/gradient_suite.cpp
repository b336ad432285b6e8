#include "attrcenter/losses/gradient_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <span>

#include "attrcenter/autodiff/gradcheck.hpp"
#include "attrcenter/losses/losses.hpp"
#include "attrcenter/util/rng.hpp"

namespace attrcenter::losses {

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

Tensor uniform(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t({rows, cols}, 0.0);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

std::vector<LossCheckSummary> loss_gradient_suite(std::uint64_t seed, const SuiteConfig& cfg) {
  const lattice::AttributeSchema schema({{"a", {"0", "1", "2"}}, {"b", {"0", "1"}}});
  const lattice::CenterRegistry reg(schema, cfg.dim, {4.0, 1.0, 1.5});
  const std::size_t nc = reg.center_count(), m = cfg.batch;

  std::vector<std::size_t> labels;
  auto batch = [&](std::span<const Var> in) { return BatchEmbeddings{in[0], in[1], in[2], labels}; };
  const std::vector<std::pair<std::string, ad::ScalarFn>> losses = {
      {"center", [&](Tape&, std::span<const Var> in) { return center_loss(in[0], labels, in[3]); }},
      {"joint_center_softmax",
       [&](Tape&, std::span<const Var> in) { return joint_center_softmax(in[4], labels, in[0], labels, in[3], 0.5); }},
      {"contrastive_center",
       [&](Tape&, std::span<const Var> in) { return contrastive_center_loss(in[0], labels, in[3], 1.0); }},
      {"attribute", [&](Tape&, std::span<const Var> in) { return attribute_loss(batch(in), in[3], reg); }},
      {"identity", [&](Tape&, std::span<const Var> in) { return identity_loss(batch(in), reg); }},
      {"center_separation", [&](Tape&, std::span<const Var> in) { return center_separation_loss(in[3], reg); }},
      {"attribute_centered",
       [&](Tape&, std::span<const Var> in) { return attribute_centered_loss(batch(in), in[3], reg).total; }},
  };

  std::vector<LossCheckSummary> out;
  for (std::size_t l = 0; l < losses.size(); ++l) {
    LossCheckSummary s;
    s.name = losses[l].first;
    s.passed = true;
    for (std::size_t pt = 0; pt < cfg.points; ++pt) {
      auto rng = make_rng(seed, {l, pt});
      std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
      labels.assign(m, 0);
      for (auto& y : labels) y = pick(rng);
      std::vector<Tensor> point;
      for (int r = 0; r < 3; ++r) point.push_back(uniform(rng, m, cfg.dim, -0.6, 0.6));
      point.push_back(uniform(rng, nc, cfg.dim, -0.6, 0.6));
      point.push_back(uniform(rng, m, nc, -1.0, 1.0));
      const auto report = ad::gradcheck(losses[l].second, point, cfg.step, cfg.tolerance);
      ++s.points;
      s.coordinates += report.coordinates.size();
      s.kinks += report.kink_count;
      s.max_rel_error = std::max(s.max_rel_error, report.max_rel_error);
      s.passed = s.passed && report.passed && report.max_rel_error < cfg.tolerance;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace attrcenter::losses
