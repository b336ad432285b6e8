#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "attrcenter/autodiff/gradcheck.hpp"
#include "attrcenter/losses/losses.hpp"
#include "test_util.hpp"

using namespace attrcenter;
using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Plain-loop references, written against raw arrays only.
double sqdist(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double acc = 0.0;
  for (std::size_t q = 0; q < a.dim(1); ++q) acc += (a.at(i, q) - b.at(j, q)) * (a.at(i, q) - b.at(j, q));
  return acc;
}

double oracle_center(const Tensor& x, const std::vector<std::size_t>& y, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += sqdist(x, i, c, y[i]);
  return 0.5 * s;
}

double oracle_contrastive_center(const Tensor& x, const std::vector<std::size_t>& y, const Tensor& c, double delta) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double denom = delta;
    for (std::size_t j = 0; j < c.dim(0); ++j)
      if (j != y[i]) denom += sqdist(x, i, c, j);
    s += sqdist(x, i, c, y[i]) / denom;
  }
  return 0.5 * s;
}

double oracle_attr(const Tensor& p, const Tensor& g, const Tensor& im, const std::vector<std::size_t>& y,
                   const Tensor& c, double eps_c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    s += std::max(sqdist(p, i, c, y[i]) - eps_c, 0.0);
    s += std::max(sqdist(g, i, c, y[i]) - eps_c, 0.0);
    s += std::max(sqdist(im, i, c, y[i]) - eps_c, 0.0);
  }
  return 0.5 * s;
}

double oracle_id(const Tensor& p, const Tensor& g, const Tensor& im, double eps_d) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.dim(0); ++i) s += sqdist(p, i, g, i) + std::max(eps_d - sqdist(p, i, im, i), 0.0);
  return 0.5 * s;
}

double oracle_cen(const Tensor& c, const lattice::CenterRegistry& reg) {
  double s = 0.0;
  for (std::size_t j = 0; j < c.dim(0); ++j)
    for (std::size_t k = 0; k < c.dim(0); ++k)
      if (j != k) s += std::max(reg.pairwise_margin(j, k) - sqdist(c, j, c, k), 0.0);
  return 0.5 * s;
}

double oracle_softmax(const Tensor& z, const std::vector<std::size_t>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double denom = 0.0;
    for (std::size_t j = 0; j < z.dim(1); ++j) denom += std::exp(z.at(i, j));
    s += -std::log(std::exp(z.at(i, labels[i])) / denom);
  }
  return s;
}

// Six-combination schema used by the small random batches (n_c = 6).
lattice::AttributeSchema six_schema() { return lattice::AttributeSchema({{"a", {"0", "1", "2"}}, {"b", {"0", "1"}}}); }

std::vector<std::size_t> random_labels(std::mt19937_64& rng, std::size_t m, std::size_t k) {
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  std::vector<std::size_t> y(m);
  for (auto& v : y) v = pick(rng);
  return y;
}

}  // namespace

TEST_CASE("center loss") {
  Tape tape;
  std::vector<std::size_t> y{0};
  Var x = tape.constant(Tensor::matrix(1, 2, {1, 0}));
  Var c = tape.constant(Tensor::matrix(1, 2, {0, 0}));
  CHECK(losses::center_loss(x, y, c).value().item() == doctest::Approx(0.5).epsilon(1e-12));

  Var at_center = tape.constant(Tensor::matrix(2, 2, {0, 0, 0, 0}));
  std::vector<std::size_t> y2{0, 0};
  CHECK(losses::center_loss(at_center, y2, c).value().item() == 0.0);

  std::vector<std::size_t> bad{1};
  CHECK_THROWS_AS(losses::center_loss(x, bad, c), std::out_of_range);

  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Tensor xs = testutil::random_tensor(rng, {5, 3});
    const Tensor cs = testutil::random_tensor(rng, {4, 3});
    const auto labels = random_labels(rng, 5, 4);
    Tape tp;
    CHECK(losses::center_loss(tp.constant(xs), labels, tp.constant(cs)).value().item() ==
          doctest::Approx(oracle_center(xs, labels, cs)).epsilon(1e-12));
  }
}

TEST_CASE("joint center/softmax supervision") {
  std::mt19937_64 rng(2);
  const std::size_t m = 4, k = 5;
  const Tensor z = testutil::random_tensor(rng, {m, k});
  const Tensor xs = testutil::random_tensor(rng, {m, 3});
  const Tensor cs = testutil::random_tensor(rng, {k, 3});
  const auto labels = random_labels(rng, m, k);
  Tape tape;
  Var logits = tape.constant(z), x = tape.constant(xs), c = tape.constant(cs);
  CHECK(losses::joint_center_softmax(logits, labels, x, labels, c, 0.0).value().item() ==
        doctest::Approx(oracle_softmax(z, labels)).epsilon(1e-12));
  CHECK(losses::joint_center_softmax(logits, labels, x, labels, c, 1.0).value().item() ==
        doctest::Approx(oracle_softmax(z, labels) + oracle_center(xs, labels, cs)).epsilon(1e-12));

  Var uniform = tape.constant(Tensor(Shape{m, k}, 0.3));
  CHECK(losses::joint_center_softmax(uniform, labels, x, labels, c, 0.0).value().item() ==
        doctest::Approx(static_cast<double>(m) * std::log(static_cast<double>(k))).epsilon(1e-12));

  std::vector<std::size_t> bad{0, 1, 2, 9};
  CHECK_THROWS_AS(losses::joint_center_softmax(logits, bad, x, labels, c, 1.0), std::out_of_range);
  CHECK_THROWS(losses::joint_center_softmax(logits, labels, x, labels, c, -1.0));
}

TEST_CASE("contrastive-center loss") {
  Tape tape;
  std::vector<std::size_t> y{0};
  Var x = tape.constant(Tensor::matrix(1, 2, {1, 0}));
  Var c = tape.constant(Tensor::matrix(2, 2, {0, 0, 3, 0}));
  CHECK(losses::contrastive_center_loss(x, y, c, 1.0).value().item() == doctest::Approx(0.1).epsilon(1e-12));

  Var at = tape.constant(Tensor::matrix(1, 2, {0, 0}));
  CHECK(losses::contrastive_center_loss(at, y, c, 1.0).value().item() == 0.0);

  Var single = tape.constant(Tensor::matrix(1, 2, {0, 0}));
  CHECK_THROWS(losses::contrastive_center_loss(x, y, single, 1.0));
  CHECK_THROWS(losses::contrastive_center_loss(x, y, c, 0.0));

  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const Tensor xs = testutil::random_tensor(rng, {6, 4});
    const Tensor cs = testutil::random_tensor(rng, {5, 4});
    const auto labels = random_labels(rng, 6, 5);
    Tape tp;
    CHECK(losses::contrastive_center_loss(tp.constant(xs), labels, tp.constant(cs), 0.5).value().item() ==
          doctest::Approx(oracle_contrastive_center(xs, labels, cs, 0.5)).epsilon(1e-6));
  }
}

TEST_CASE("attribute loss") {
  lattice::CenterRegistry reg(six_schema(), 2, {4.0, 1.0, 1.5});
  Tape tape;
  std::vector<std::size_t> y{3};
  Var c = tape.constant(Tensor(Shape{6, 2}, 0.0));
  // ||p - c||^2 = eps_c + 2 = 3, both sketches at the center.
  Var p = tape.constant(Tensor::matrix(1, 2, {std::sqrt(3.0), 0}));
  Var zero = tape.constant(Tensor::matrix(1, 2, {0, 0}));
  losses::BatchEmbeddings batch{p, zero, zero, y};
  CHECK(losses::attribute_loss(batch, c, reg).value().item() == doctest::Approx(1.0).epsilon(1e-12));

  Var inside = tape.constant(Tensor::matrix(1, 2, {0.5, 0.5}));
  losses::BatchEmbeddings slack{inside, zero, inside, y};
  CHECK(losses::attribute_loss(slack, c, reg).value().item() == 0.0);

  std::vector<std::size_t> out_of_range{6};
  losses::BatchEmbeddings bad{p, zero, zero, out_of_range};
  CHECK_THROWS(losses::attribute_loss(bad, c, reg));

  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    const Tensor ps = testutil::random_tensor(rng, {4, 2}, -2, 2), gs = testutil::random_tensor(rng, {4, 2}, -2, 2),
                 is = testutil::random_tensor(rng, {4, 2}, -2, 2), cs = testutil::random_tensor(rng, {6, 2});
    const auto labels = random_labels(rng, 4, 6);
    Tape tp;
    losses::BatchEmbeddings b{tp.constant(ps), tp.constant(gs), tp.constant(is), labels};
    CHECK(losses::attribute_loss(b, tp.constant(cs), reg).value().item() ==
          doctest::Approx(oracle_attr(ps, gs, is, labels, cs, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("identity loss") {
  lattice::CenterRegistry reg(six_schema(), 2, {4.0, 1.0, 1.0});
  Tape tape;
  std::vector<std::size_t> y{0};
  Var p = tape.constant(Tensor::matrix(1, 2, {0, 0}));
  Var g = tape.constant(Tensor::matrix(1, 2, {2, 0}));
  losses::BatchEmbeddings batch{p, g, p, y};
  CHECK(losses::identity_loss(batch, reg).value().item() == doctest::Approx(2.5).epsilon(1e-12));

  Var far = tape.constant(Tensor::matrix(1, 2, {0, 1.5}));
  losses::BatchEmbeddings clean{p, p, far, y};
  CHECK(losses::identity_loss(clean, reg).value().item() == 0.0);

  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const Tensor ps = testutil::random_tensor(rng, {4, 3}), gs = testutil::random_tensor(rng, {4, 3}),
                 is = testutil::random_tensor(rng, {4, 3});
    const auto labels = random_labels(rng, 4, 6);
    Tape tp;
    losses::BatchEmbeddings b{tp.constant(ps), tp.constant(gs), tp.constant(is), labels};
    CHECK(losses::identity_loss(b, reg).value().item() == doctest::Approx(oracle_id(ps, gs, is, 1.0)).epsilon(1e-12));
  }
}

TEST_CASE("center separation loss") {
  lattice::AttributeSchema pair({{"a", {"0", "1"}}});
  lattice::CenterRegistry reg(pair, 2, {1.0, 1.0, 1.5});
  Tape tape;
  CHECK(losses::center_separation_loss(tape.constant(Tensor(Shape{2, 2}, 0.3)), reg).value().item() ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(losses::center_separation_loss(tape.constant(Tensor::matrix(2, 2, {0, 0, 2, 0})), reg).value().item() == 0.0);

  lattice::CenterRegistry big(lattice::AttributeSchema::paper_preset(), 8, {0.5, 1.0, 1.5});
  std::mt19937_64 rng(6);
  for (int t = 0; t < 3; ++t) {
    const Tensor cs = testutil::random_tensor(rng, {180, 8}, -0.6, 0.6);
    Tape tp;
    CHECK(losses::center_separation_loss(tp.constant(cs), big).value().item() ==
          doctest::Approx(oracle_cen(cs, big)).epsilon(1e-10));
  }
  CHECK_THROWS(losses::center_separation_loss(tape.constant(Tensor(Shape{3, 2}, 0.0)), reg));
}

TEST_CASE("attribute-centered composite") {
  lattice::CenterRegistry reg(six_schema(), 3, {4.0, 1.0, 1.5});
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    const Tensor ps = testutil::random_tensor(rng, {4, 3}, -2, 2), gs = testutil::random_tensor(rng, {4, 3}, -2, 2),
                 is = testutil::random_tensor(rng, {4, 3}, -2, 2), cs = testutil::random_tensor(rng, {6, 3}, -2, 2);
    const auto labels = random_labels(rng, 4, 6);
    Tape tp;
    losses::BatchEmbeddings b{tp.constant(ps), tp.constant(gs), tp.constant(is), labels};
    Var c = tp.constant(cs);
    const double attr = oracle_attr(ps, gs, is, labels, cs, 1.0), id = oracle_id(ps, gs, is, 1.5),
                 cen = oracle_cen(cs, reg);
    const auto full = losses::attribute_centered_loss(b, c, reg).values();
    CHECK(full.total == doctest::Approx(attr + id + cen).epsilon(1e-12));
    CHECK(full.total == doctest::Approx(full.attr + full.id + full.cen).epsilon(1e-6));
    const auto only_attr = losses::attribute_centered_loss(b, c, reg, {1, 0, 0}).values();
    CHECK(only_attr.total == doctest::Approx(attr).epsilon(1e-12));
  }
  CHECK_THROWS(losses::validate(losses::LossWeights{-1, 1, 1}));
}

TEST_CASE("composite is zero when every term is slack") {
  lattice::AttributeSchema pair({{"a", {"0", "1"}}});
  Tape tape;
  std::vector<std::size_t> y{0, 1};
  Var c = tape.constant(Tensor::matrix(2, 2, {0, 0, 3, 0}));
  Var p = tape.constant(Tensor::matrix(2, 2, {0, 0, 3, 0}));
  // Impostors sit at squared distance 0.81 from photos and centers.
  Var im = tape.constant(Tensor::matrix(2, 2, {0, 0.9, 3, 0.9}));
  losses::BatchEmbeddings b{p, p, im, y};
  lattice::CenterRegistry tight(pair, 2, {1.0, 1.0, 1.5});
  CHECK(losses::attribute_centered_loss(b, c, tight).values().total == doctest::Approx(0.5 * 2 * (1.5 - 0.81)));
  lattice::CenterRegistry loose(pair, 2, {1.0, 1.0, 0.5});
  CHECK(losses::attribute_centered_loss(b, c, loose).values().total == 0.0);
}

TEST_CASE("losses are non-negative and translation invariant") {
  lattice::CenterRegistry reg(six_schema(), 4, {4.0, 1.0, 1.5});
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    Tensor ps = testutil::random_tensor(rng, {4, 4}, -2, 2), gs = testutil::random_tensor(rng, {4, 4}, -2, 2),
           is = testutil::random_tensor(rng, {4, 4}, -2, 2), cs = testutil::random_tensor(rng, {6, 4}, -2, 2);
    const auto labels = random_labels(rng, 4, 6);
    const Tensor shift = testutil::random_tensor(rng, {4}, -3, 3);
    auto eval = [&](const Tensor& p, const Tensor& g, const Tensor& i, const Tensor& c) {
      Tape tp;
      losses::BatchEmbeddings b{tp.constant(p), tp.constant(g), tp.constant(i), labels};
      Var cv = tp.constant(c);
      auto acl = losses::attribute_centered_loss(b, cv, reg).values();
      acl.center = losses::center_loss(b.photo, labels, cv).value().item();
      acl.contrastive_center = losses::contrastive_center_loss(b.photo, labels, cv, 1.0).value().item();
      return acl;
    };
    const auto base = eval(ps, gs, is, cs);
    for (double v : {base.total, base.attr, base.id, base.cen, *base.center, *base.contrastive_center}) CHECK(v >= 0.0);
    auto shifted = [&](Tensor m) {
      for (std::size_t r = 0; r < m.dim(0); ++r)
        for (std::size_t q = 0; q < 4; ++q) m.at(r, q) += shift[q];
      return m;
    };
    const auto moved = eval(shifted(ps), shifted(gs), shifted(is), shifted(cs));
    CHECK(moved.total == doctest::Approx(base.total).epsilon(1e-9));
    CHECK(*moved.center == doctest::Approx(*base.center).epsilon(1e-9));
    CHECK(*moved.contrastive_center == doctest::Approx(*base.contrastive_center).epsilon(1e-9));
  }
}

TEST_CASE("hinge deadzone leaves attribute loss flat") {
  lattice::CenterRegistry reg(six_schema(), 2, {4.0, 1.0, 1.5});
  std::vector<std::size_t> y{2};
  auto eval = [&](double px) {
    Tape tp;
    Var p = tp.leaf(Tensor::matrix(1, 2, {px, 0.1}));
    Var g = tp.constant(Tensor::matrix(1, 2, {0.2, 0}));
    Var im = tp.constant(Tensor::matrix(1, 2, {-0.3, 0.2}));
    Var c = tp.constant(Tensor(Shape{6, 2}, 0.0));
    Var loss = losses::attribute_loss({p, g, im, y}, c, reg);
    tp.backward(loss);
    return std::make_pair(loss.value().item(), p.grad());
  };
  const auto a = eval(0.3), b = eval(0.35);
  CHECK(a.first == 0.0);
  CHECK(b.first == 0.0);
  for (double v : a.second.data()) CHECK(v == 0.0);
}

TEST_CASE("collapsed centers are penalised only by the separation term") {
  lattice::CenterRegistry reg(six_schema(), 3, {4.0, 1.0, 1.5});
  Tape tape;
  std::vector<std::size_t> y{0, 3, 5};
  Var point = tape.constant(Tensor(Shape{3, 3}, 0.7));
  Var collapsed = tape.constant(Tensor(Shape{6, 3}, 0.7));
  losses::BatchEmbeddings b{point, point, point, y};
  const auto v = losses::attribute_centered_loss(b, collapsed, reg).values();
  CHECK(v.attr == 0.0);
  double expected = 0.0;
  for (std::size_t j = 0; j < 6; ++j)
    for (std::size_t k = 0; k < 6; ++k) expected += reg.pairwise_margin(j, k);
  CHECK(v.cen == doctest::Approx(0.5 * expected));
  CHECK(v.cen > 0.0);

  // Spread centers 10 apart along one axis: separation slack everywhere.
  Tensor spread(Shape{6, 3}, 0.0);
  for (std::size_t j = 0; j < 6; ++j) spread.at(j, 0) = 10.0 * static_cast<double>(j);
  CHECK(losses::center_separation_loss(tape.constant(spread), reg).value().item() == 0.0);
}

TEST_CASE("every loss passes gradcheck on small random batches") {
  lattice::CenterRegistry reg(six_schema(), 8, {4.0, 1.0, 1.5});
  std::mt19937_64 rng(10);
  for (int t = 0; t < 10; ++t) {
    const auto labels = random_labels(rng, 4, 6);
    std::vector<Tensor> point;
    for (int r = 0; r < 3; ++r) point.push_back(testutil::random_tensor(rng, {4, 8}, -0.6, 0.6));
    point.push_back(testutil::random_tensor(rng, {6, 8}, -0.6, 0.6));
    point.push_back(testutil::random_tensor(rng, {4, 6}));
    auto batch = [&](std::span<const Var> in) { return losses::BatchEmbeddings{in[0], in[1], in[2], labels}; };
    const std::vector<ad::ScalarFn> fns = {
        [&](Tape&, std::span<const Var> in) { return losses::center_loss(in[0], labels, in[3]); },
        [&](Tape&, std::span<const Var> in) {
          return losses::joint_center_softmax(in[4], labels, in[0], labels, in[3], 0.5);
        },
        [&](Tape&, std::span<const Var> in) { return losses::contrastive_center_loss(in[0], labels, in[3], 1.0); },
        [&](Tape&, std::span<const Var> in) { return losses::attribute_loss(batch(in), in[3], reg); },
        [&](Tape&, std::span<const Var> in) { return losses::identity_loss(batch(in), reg); },
        [&](Tape&, std::span<const Var> in) { return losses::center_separation_loss(in[3], reg); },
        [&](Tape&, std::span<const Var> in) { return losses::attribute_centered_loss(batch(in), in[3], reg).total; },
    };
    for (const auto& fn : fns) {
      const auto report = ad::gradcheck(fn, point, 1e-4, 1e-3);
      CHECK(report.passed);
    }
  }
}

TEST_CASE("attribute-centered loss passes gradcheck on a batch of 2") {
  lattice::CenterRegistry reg(six_schema(), 4, {4.0, 1.0, 1.5});
  std::mt19937_64 rng(12);
  const std::vector<std::size_t> labels{1, 4};
  std::vector<Tensor> point;
  for (int r = 0; r < 3; ++r) point.push_back(testutil::random_tensor(rng, {2, 4}));
  point.push_back(testutil::random_tensor(rng, {6, 4}));
  const auto report = ad::gradcheck(
      [&](Tape&, std::span<const Var> in) {
        return losses::attribute_centered_loss({in[0], in[1], in[2], labels}, in[3], reg).total;
      },
      point, 1e-4, 1e-3);
  CHECK(report.passed);
}
