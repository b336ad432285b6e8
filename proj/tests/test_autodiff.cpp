#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <random>
#include <string>

#include "attrcenter/autodiff/gradcheck.hpp"
#include "attrcenter/autodiff/ops.hpp"
#include "test_util.hpp"

using namespace attrcenter::ad;

TEST_CASE("tensor invariants") {
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK(Tensor::scalar(3).item() == 3);
}

TEST_CASE("relu definition") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({-1, 0, 2}));
  CHECK(relu(x).value() == Tensor::vector({0, 0, 2}));
}

TEST_CASE("batch norm standardises each channel") {
  std::mt19937_64 rng(3);
  Tape tape;
  Tensor mean, var;
  const Tensor x = testutil::random_tensor(rng, {4, 2, 3, 3}, -2.0, 5.0);
  const Tensor y = batch_norm(tape.constant(x), 1e-9, &mean, &var).value();
  for (std::size_t c = 0; c < 2; ++c) {
    double m = 0.0, sq = 0.0, xm = 0.0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) {
        m += y[(n * 2 + c) * 9 + i] / 36.0;
        sq += y[(n * 2 + c) * 9 + i] * y[(n * 2 + c) * 9 + i] / 36.0;
        xm += x[(n * 2 + c) * 9 + i] / 36.0;
      }
    CHECK(std::abs(m) < 1e-12);
    CHECK(sq == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(mean[c] == doctest::Approx(xm));
  }
}

TEST_CASE("matmul with identity returns operand") {
  std::mt19937_64 rng(1);
  Tape tape;
  Var eye = tape.constant(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  Tensor a = testutil::random_tensor(rng, {3, 5});
  CHECK(matmul(eye, tape.constant(a)).value() == a);
}

TEST_CASE("squared l2 norm") {
  Tape tape;
  CHECK(sq_norm(tape.constant(Tensor::vector({3, 4}))).value().item() == 25.0);
}

TEST_CASE("backward of squared norm is 2x") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  tape.backward(sq_norm(x));
  CHECK(x.grad() == Tensor::vector({2, 4}));
}

TEST_CASE("constant loss gives zero gradient") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2, 3}));
  Var c = tape.constant(Tensor::scalar(7.0));
  (void)add_scalar(x, 1.0);
  tape.backward(scale(c, 2.0));
  CHECK(x.grad() == Tensor::vector({0, 0, 0}));
}

TEST_CASE("backward errors") {
  Tape empty;
  Tape other;
  Var y = other.leaf(Tensor::vector({1, 2}));
  CHECK_THROWS(empty.backward(y));
  CHECK_THROWS_AS(other.backward(y), ShapeError);
}

TEST_CASE("grad absent without requires_grad") {
  Tape tape;
  Var c = tape.constant(Tensor::vector({1, 2}));
  Var x = tape.leaf(Tensor::vector({3, 4}));
  tape.backward(sum(mul(c, x)));
  CHECK(x.has_grad());
  CHECK_FALSE(c.has_grad());
  CHECK_THROWS(c.grad());
}

TEST_CASE("shape mismatch names both shapes") {
  Tape tape;
  Var a = tape.leaf(Tensor(Shape{2, 3}));
  Var b = tape.leaf(Tensor(Shape{4, 5}));
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("non-finite values are rejected") {
  Tape tape;
  CHECK_THROWS_AS(tape.leaf(Tensor::vector({1.0, std::nan("")})), NumericError);
  Var a = tape.leaf(Tensor::vector({1.0, 2.0}));
  Var z = tape.leaf(Tensor::vector({0.0, 1.0}));
  CHECK_THROWS_AS(div(a, z), NumericError);
}

namespace {

// One expression touching every primitive, as a function of an 8-vector.
Var composite(Tape& tape, Var x, std::mt19937_64& rng) {
  auto c = [&](Shape s) { return tape.constant(testutil::random_tensor(rng, std::move(s))); };
  Var img = reshape(x, {1, 2, 2, 2});
  Var conv = conv2d(img, c({3, 2, 2, 2}), {1, 1});                    // 1x3x3x3
  Var aff = channel_affine(conv, c({3}), c({3}));
  Var act = relu(add_scalar(aff, 2.0));
  Var pooled = concat_rows(global_avg_pool(max_pool2d(act, 2)), global_avg_pool(avg_pool2d(act, 3)));  // 2x3
  Var proj = add_row(matmul(pooled, c({3, 4})), c({4}));                // 2x4
  std::vector<std::size_t> labels{1, 3};
  Var ce = softmax_cross_entropy(proj, labels);
  Var xm = reshape(x, {2, 4});
  Var centers = c({4, 4});
  Var dist = row_sum(sq_dist_matrix(xm, centers));
  Var ratio = div(row_sq_norm(sub(xm, gather_rows(centers, labels))), add_scalar(dist, 1.0));
  Var hinge = clamp_min(add_scalar(mul(xm, slice_rows(proj, 0, 2)), 0.5), 0.0);
  return add(add(ce, sum(ratio)), add(scale(sum(hinge), 0.3), sq_norm(sub(x, scale(x, 0.5)))));
}

}  // namespace

TEST_CASE("composite expression matches independent finite differences") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor point = testutil::random_tensor(rng, {8});
    const auto seed = rng();
    std::vector<double> analytic;
    {
      std::mt19937_64 r(seed);
      Tape tape;
      Var x = tape.leaf(point);
      Var out = composite(tape, x, r);
      tape.backward(out);
      analytic.assign(x.grad().data().begin(), x.grad().data().end());
    }
    // Forward-only evaluation; also reports the branch signature so that
    // coordinates straddling a kink can be skipped.
    auto forward = [&](const std::vector<double>& v, std::uint64_t& sig) {
      std::mt19937_64 r(seed);
      Tape tape;
      tape.set_track_kinks(true);
      const double val = composite(tape, tape.constant(Tensor(Shape{8}, v)), r).value().item();
      sig = tape.kink_signature();
      return val;
    };
    std::vector<double> base(point.data().begin(), point.data().end());
    std::uint64_t ref_sig = 0;
    forward(base, ref_sig);
    bool straddles = false;
    const auto numeric = testutil::finite_difference(
        [&](const std::vector<double>& v) {
          std::uint64_t sig = 0;
          const double val = forward(v, sig);
          straddles = straddles || sig != ref_sig;
          return val;
        },
        base, 1e-4);
    if (straddles) continue;
    for (std::size_t i = 0; i < 8; ++i) CHECK(testutil::rel_err(analytic[i], numeric[i]) < 1e-4);
  }
}

TEST_CASE("gradcheck on a quadratic passes") {
  auto fn = [](Tape&, std::span<const Var> in) { return sq_norm(in[0]); };
  const std::vector<Tensor> point{Tensor::vector({1, 0})};
  auto report = gradcheck(fn, point, 1e-4, 1e-4);
  CHECK(report.passed);
  CHECK(report.coordinates.size() == 2);
  CHECK(report.kink_count == 0);
}

TEST_CASE("gradcheck flags a relu kink at exact zero") {
  auto fn = [](Tape&, std::span<const Var> in) { return sum(relu(in[0])); };
  const std::vector<Tensor> point{Tensor::vector({0.5, 0.0, -0.7})};
  auto report = gradcheck(fn, point, 1e-4, 1e-4);
  REQUIRE(report.coordinates.size() == 3);
  CHECK_FALSE(report.coordinates[0].near_kink);
  CHECK(report.coordinates[1].near_kink);
  CHECK_FALSE(report.coordinates[2].near_kink);
  CHECK(report.kink_count == 1);
  CHECK(report.passed);
}

TEST_CASE("gradcheck rejects non-scalar functions") {
  auto fn = [](Tape&, std::span<const Var> in) { return relu(in[0]); };
  const std::vector<Tensor> point{Tensor::vector({1, 2})};
  CHECK_THROWS_AS(gradcheck(fn, point), ShapeError);
  CHECK_THROWS(gradcheck([](Tape&, std::span<const Var> in) { return sum(in[0]); }, point, 0.0));
}

TEST_CASE("backward is linear") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 25; ++trial) {
    const Tensor point = testutil::random_tensor(rng, {6});
    const Tensor w = testutil::random_tensor(rng, {6});
    std::uniform_real_distribution<double> u(-2, 2);
    const double alpha = u(rng), beta = u(rng);
    auto f = [&](Tape& t, Var x) { return sum(mul(relu(x), t.constant(w))); };
    auto g = [](Tape&, Var x) { return sq_norm(x); };
    auto grad_of = [&](auto&& build) {
      Tape t;
      Var x = t.leaf(point);
      t.backward(build(t, x));
      return x.grad();
    };
    const Tensor gf = grad_of(f);
    const Tensor gg = grad_of(g);
    const Tensor gc = grad_of([&](Tape& t, Var x) { return add(scale(f(t, x), alpha), scale(g(t, x), beta)); });
    for (std::size_t i = 0; i < 6; ++i) CHECK(gc[i] == doctest::Approx(alpha * gf[i] + beta * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward and gradients are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Var x = tape.leaf(testutil::random_tensor(rng, {8}));
    Var out = composite(tape, x, rng);
    tape.backward(out);
    return std::make_pair(out.value(), x.grad());
  };
  CHECK(run() == run());
}

namespace {

struct PrimitiveCase {
  const char* name;
  std::vector<Shape> shapes;
  std::function<Var(Tape&, std::span<const Var>)> build;
};

// Random linear functional of the op output, so every output entry matters.
Var project(Tape& tape, Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, tape.constant(testutil::random_tensor(rng, out.shape()))));
}

}  // namespace

TEST_CASE("every primitive agrees with finite differences at 100 random points") {
  const std::vector<std::size_t> labels{2, 0, 1};
  const std::vector<PrimitiveCase> cases = {
      {"add", {{3, 4}, {3, 4}}, [](Tape&, auto in) { return add(in[0], in[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](Tape&, auto in) { return sub(in[0], in[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape&, auto in) { return mul(in[0], in[1]); }},
      {"div", {{3, 4}, {3, 4}}, [](Tape&, auto in) { return div(in[0], add_scalar(mul(in[1], in[1]), 1.0)); }},
      {"scale", {{5}}, [](Tape&, auto in) { return scale(in[0], -1.7); }},
      {"add_scalar", {{5}}, [](Tape&, auto in) { return add_scalar(in[0], 0.3); }},
      {"add_row", {{3, 4}, {4}}, [](Tape&, auto in) { return add_row(in[0], in[1]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, auto in) { return matmul(in[0], in[1]); }},
      {"conv2d", {{2, 2, 5, 5}, {3, 2, 3, 3}}, [](Tape&, auto in) { return conv2d(in[0], in[1], {1, 1}); }},
      {"conv2d_stride", {{1, 2, 6, 6}, {2, 2, 3, 3}}, [](Tape&, auto in) { return conv2d(in[0], in[1], {2, 1}); }},
      {"channel_affine", {{2, 3, 2, 2}, {3}, {3}}, [](Tape&, auto in) { return channel_affine(in[0], in[1], in[2]); }},
      {"batch_norm", {{3, 2, 2, 2}}, [](Tape&, auto in) { return batch_norm(in[0]); }},
      {"batch_norm_1x1", {{4, 3, 1, 1}}, [](Tape&, auto in) { return batch_norm(in[0], 1e-3); }},
      {"relu", {{12}}, [](Tape&, auto in) { return relu(in[0]); }},
      {"clamp_min", {{12}}, [](Tape&, auto in) { return clamp_min(in[0], 0.1); }},
      {"max_pool2d", {{1, 2, 4, 4}}, [](Tape&, auto in) { return max_pool2d(in[0], 2); }},
      {"avg_pool2d", {{1, 2, 4, 4}}, [](Tape&, auto in) { return avg_pool2d(in[0], 2); }},
      {"global_avg_pool", {{2, 3, 3, 3}}, [](Tape&, auto in) { return global_avg_pool(in[0]); }},
      {"sum", {{7}}, [](Tape&, auto in) { return scale(sum(in[0]), 1.0); }},
      {"sq_norm", {{7}}, [](Tape&, auto in) { return sq_norm(in[0]); }},
      {"row_sum", {{3, 4}}, [](Tape&, auto in) { return row_sum(in[0]); }},
      {"row_sq_norm", {{3, 4}}, [](Tape&, auto in) { return row_sq_norm(in[0]); }},
      {"softmax_cross_entropy", {{3, 4}}, [&](Tape&, auto in) { return softmax_cross_entropy(in[0], labels); }},
      {"gather_rows", {{4, 3}}, [&](Tape&, auto in) { return gather_rows(in[0], labels); }},
      {"sq_dist_matrix", {{3, 4}, {5, 4}}, [](Tape&, auto in) { return sq_dist_matrix(in[0], in[1]); }},
      {"reshape", {{2, 6}}, [](Tape&, auto in) { return reshape(in[0], {3, 4}); }},
      {"slice_rows", {{4, 3}}, [](Tape&, auto in) { return slice_rows(in[0], 1, 3); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](Tape&, auto in) { return concat_rows(in[0], in[1]); }},
  };
  std::mt19937_64 rng(7);
  for (const auto& pc : cases) {
    double worst = 0.0;
    for (int p = 0; p < 100; ++p) {
      std::vector<Tensor> point;
      for (const auto& s : pc.shapes) point.push_back(testutil::random_tensor(rng, s));
      const auto seed = rng();
      auto fn = [&](Tape& t, std::span<const Var> in) { return project(t, pc.build(t, in), seed); };
      auto report = gradcheck(fn, point, 1e-4, 1e-4);
      worst = std::max(worst, report.max_rel_error);
    }
    INFO(pc.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("conv2d matches a direct loop") {
  std::mt19937_64 rng(5);
  const Tensor x = testutil::random_tensor(rng, {2, 3, 6, 5});
  const Tensor w = testutil::random_tensor(rng, {4, 3, 3, 3});
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u, 2u}) {
      Tape tape;
      const Tensor out = conv2d(tape.constant(x), tape.constant(w), {stride, pad}).value();
      const std::size_t Ho = (6 + 2 * pad - 3) / stride + 1, Wo = (5 + 2 * pad - 3) / stride + 1;
      REQUIRE(out.shape() == Shape{2, 4, Ho, Wo});
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t o = 0; o < 4; ++o)
          for (std::size_t i = 0; i < Ho; ++i)
            for (std::size_t j = 0; j < Wo; ++j) {
              double acc = 0.0;
              for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t a = 0; a < 3; ++a)
                  for (std::size_t b = 0; b < 3; ++b) {
                    const long ih = static_cast<long>(i * stride + a) - static_cast<long>(pad);
                    const long iw = static_cast<long>(j * stride + b) - static_cast<long>(pad);
                    if (ih < 0 || iw < 0 || ih >= 6 || iw >= 5) continue;
                    acc += w[((o * 3 + c) * 3 + a) * 3 + b] * x[((n * 3 + c) * 6 + ih) * 5 + iw];
                  }
              CHECK(out[((n * 4 + o) * Ho + i) * Wo + j] == doctest::Approx(acc).epsilon(1e-12));
            }
    }
  }
}

TEST_CASE("tape clear resets state") {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  tape.backward(sq_norm(x));
  CHECK_THROWS(tape.backward(sq_norm(x)));
  tape.clear();
  CHECK(tape.size() == 0);
  Var y = tape.leaf(Tensor::vector({3}));
  tape.backward(sq_norm(y));
  CHECK(y.grad()[0] == 6.0);
}
