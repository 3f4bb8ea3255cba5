#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "vit/gradcheck.hpp"
#include "vit/ops.hpp"
#include "vit/rng.hpp"

using namespace vit;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

Parameter<double> make_param(const std::string& name, Shape shape, std::uint64_t seed, double scale = 1.0) {
  return Parameter<double>{name, random_tensor(std::move(shape), seed, scale), {}, false};
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
Var<double> probe_loss(Tape<double>& tape, const Var<double>& y, std::uint64_t seed = 99) {
  auto w = tape.constant(random_tensor(y.shape(), seed));
  return ops::sum(ops::mul(y, w));
}

void expect_gradcheck(const LossFn& f, std::vector<Parameter<double>*> params, double tol = 1e-6) {
  GradCheckOptions opts;
  opts.tol = tol;
  auto report = check_gradients(f, params, opts);
  for (const auto& g : report.groups) {
    EXPECT_LT(g.max_rel_err, tol) << g.name << " worst index " << g.worst_index << " analytic " << g.worst_analytic
                                  << " numeric " << g.worst_numeric;
  }
}

}  // namespace

TEST(Rng, DeterministicAndDerivedStreamsDiffer) {
  Rng a(7), b(7);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  auto c = Rng::derive(7, {1});
  auto d = Rng::derive(7, {2});
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(Rng, TruncatedNormalRespectsBound) {
  Rng r(3);
  for (int i = 0; i < 10000; ++i) EXPECT_LE(std::abs(r.truncated_normal(0.02)), 0.04);
}

TEST(Rng, PermutationIsPermutation) {
  Rng r(5);
  auto p = r.permutation(100);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(p[i], i);
}

TEST(Tensor, RejectsZeroDimsAndBadLength) {
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Ops, MatmulHandValues) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto b = tape.constant(Tensor<double>({3, 2}, {7, 8, 9, 10, 11, 12}));
  auto c = ops::matmul(a, b);
  EXPECT_EQ(c.value(), Tensor<double>({2, 2}, {58, 64, 139, 154}));
}

TEST(Ops, MatmulShapeMismatchThrows) {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({2, 3}));
  auto b = tape.constant(Tensor<double>({2, 2}));
  EXPECT_THROW(ops::matmul(a, b), DimensionError);
}

TEST(Ops, GeluHandValue) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({3}, {1.0, 0.0, -1.0}));
  auto y = ops::gelu(x).value();
  EXPECT_NEAR(y[0], 0.841345, 1e-6);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[2], -0.158655, 1e-6);
}

TEST(Ops, SoftmaxStableForHugeLogits) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 3}, {1000.0, 1000.0, 1000.0}));
  auto y = ops::softmax(x, 1).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-12);
}

TEST(Ops, SoftmaxRowsSumToOneAlongAnyAxis) {
  Tape<double> tape;
  auto x = tape.constant(random_tensor({3, 4, 5}, 1, 5.0));
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto y = ops::softmax(x, axis).value();
    const auto& s = y.shape();
    std::size_t inner = 1;
    for (std::size_t a = axis + 1; a < 3; ++a) inner *= s[a];
    std::size_t outer = 1;
    for (std::size_t a = 0; a < axis; ++a) outer *= s[a];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        double total = 0;
        for (std::size_t k = 0; k < s[axis]; ++k) total += y[(o * s[axis] + k) * inner + i];
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
    }
  }
}

TEST(Ops, LayerNormMatchesDirectComputation) {
  Tape<double> tape;
  auto xt = random_tensor({4, 6}, 2, 3.0);
  auto g = random_tensor({6}, 3);
  auto b = random_tensor({6}, 4);
  auto y = ops::layer_norm(tape.constant(xt), tape.constant(g), tape.constant(b)).value();
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0, var = 0;
    for (std::size_t c = 0; c < 6; ++c) mu += xt.at(r, c) / 6;
    for (std::size_t c = 0; c < 6; ++c) var += (xt.at(r, c) - mu) * (xt.at(r, c) - mu) / 6;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(y.at(r, c), (xt.at(r, c) - mu) / std::sqrt(var + 1e-6) * g[c] + b[c], 1e-12);
    }
  }
}

TEST(Ops, LayerNormConstantRowIsFinite) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 4}, 5.0));
  auto y = ops::layer_norm(x, tape.constant(Tensor<double>::ones({4})), tape.constant(Tensor<double>({4})));
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, DropoutRateValidationAndIdentityInEval) {
  Tape<double> tape;
  Rng rng(1);
  auto x = tape.constant(random_tensor({10}, 5));
  EXPECT_THROW(ops::dropout(x, 1.0, rng, true), ParameterError);
  EXPECT_THROW(ops::dropout(x, -0.1, rng, true), ParameterError);
  EXPECT_EQ(ops::dropout(x, 0.5, rng, false).value(), x.value());
}

TEST(Ops, DropoutPreservesExpectation) {
  Tape<double> tape;
  Rng rng(11);
  auto x = tape.constant(Tensor<double>::ones({100000}));
  auto y = ops::dropout(x, 0.3, rng, true).value();
  const double m = std::accumulate(y.data().begin(), y.data().end(), 0.0) / 100000.0;
  EXPECT_NEAR(m, 1.0, 0.02);
}

TEST(Ops, Conv2dMatchesDirectLoops) {
  auto x = random_tensor({2, 5, 6, 3}, 6);
  auto w = random_tensor({3, 3, 3, 4}, 7);
  Tape<double> tape;
  auto y = ops::conv2d(tape.constant(x), tape.constant(w), 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 4}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t oh = 0; oh < 3; ++oh)
      for (std::size_t ow = 0; ow < 3; ++ow)
        for (std::size_t co = 0; co < 4; ++co) {
          double acc = 0;
          for (std::size_t kh = 0; kh < 3; ++kh)
            for (std::size_t kw = 0; kw < 3; ++kw) {
              const long ih = static_cast<long>(oh * 2 + kh) - 1, iw = static_cast<long>(ow * 2 + kw) - 1;
              if (ih < 0 || iw < 0 || ih >= 5 || iw >= 6) continue;
              for (std::size_t ci = 0; ci < 3; ++ci) {
                acc += x[((b * 5 + ih) * 6 + iw) * 3 + ci] * w[((kh * 3 + kw) * 3 + ci) * 4 + co];
              }
            }
          EXPECT_NEAR(y[((b * 3 + oh) * 3 + ow) * 4 + co], acc, 1e-12);
        }
}

TEST(Ops, WeightStandardizeGivesZeroMeanUnitVariance) {
  Tape<double> tape;
  auto w = ops::weight_standardize(tape.constant(random_tensor({3, 3, 2, 5}, 8, 4.0))).value();
  for (std::size_t o = 0; o < 5; ++o) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 18; ++i) mu += w[i * 5 + o] / 18;
    for (std::size_t i = 0; i < 18; ++i) var += (w[i * 5 + o] - mu) * (w[i * 5 + o] - mu) / 18;
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(Ops, GroupNormWithGroupsEqualChannelsIsInstanceNorm) {
  // 1 x 2 x 1 x 2 map: channel 0 = {1, 3}, channel 1 = {2, 6}
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 2, 1, 2}, {1, 2, 3, 6}));
  auto y = ops::group_norm(x, tape.constant(Tensor<double>::ones({2})), tape.constant(Tensor<double>({2})), 2)
               .value();
  const double s0 = std::sqrt(1.0 + 1e-6), s1 = std::sqrt(4.0 + 1e-6);
  EXPECT_NEAR(y[0], -1.0 / s0, 1e-12);
  EXPECT_NEAR(y[2], 1.0 / s0, 1e-12);
  EXPECT_NEAR(y[1], -2.0 / s1, 1e-12);
  EXPECT_NEAR(y[3], 2.0 / s1, 1e-12);
}

TEST(Ops, GroupNormRejectsIndivisibleGroups) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 2, 2, 6}));
  EXPECT_THROW(ops::group_norm(x, tape.constant(Tensor<double>::ones({6})), tape.constant(Tensor<double>({6})), 4),
               ConfigError);
}

TEST(Ops, PermuteRoundTrip) {
  Tape<double> tape;
  auto x = tape.constant(random_tensor({2, 3, 4}, 9));
  auto y = ops::permute(ops::permute(x, {2, 0, 1}), {1, 2, 0});
  EXPECT_EQ(y.value(), x.value());
}

TEST(Tape, BackwardTwiceAndNonScalarThrow) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
  auto s = ops::sum(x);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), ContractError);
}

TEST(Tape, CheckFiniteFlagsNaN) {
  Tape<double> tape;
  tape.set_check_finite(true);
  EXPECT_THROW(tape.constant(Tensor<double>({1}, {std::nan("")})), NumericError);
}

TEST(Tape, GradientAccumulatesOverReuse) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, {3.0}));
  auto y = ops::sum(ops::mul(x, x));
  tape.backward(y);
  EXPECT_DOUBLE_EQ((*tape.grad_if(x))[0], 6.0);
}

TEST(GradCheck, PerOpGradients) {
  auto a = make_param("a", {2, 3, 4}, 10);
  auto b = make_param("b", {2, 4, 5}, 11);
  auto bt = make_param("bt", {2, 5, 4}, 12);
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::bmm(t.param(a), t.param(b))); }, {&a, &b});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::bmm(t.param(a), t.param(bt), true)); },
                   {&a, &bt});

  auto w = make_param("w", {4, 3}, 13);
  auto bias = make_param("bias", {3}, 14);
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::linear(t.param(a), t.param(w), t.param(bias))); },
                   {&a, &w, &bias});

  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::gelu(t.param(a))); }, {&a});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::tanh(t.param(a))); }, {&a});
  for (std::size_t axis = 0; axis < 3; ++axis) {
    expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::softmax(t.param(a), axis)); }, {&a});
  }

  auto g = make_param("g", {4}, 15);
  auto be = make_param("be", {4}, 16);
  expect_gradcheck(
      [&](Tape<double>& t) { return probe_loss(t, ops::layer_norm(t.param(a), t.param(g), t.param(be))); },
      {&a, &g, &be});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::add_broadcast(t.param(a), t.param(g))); },
                   {&a, &g});
}

TEST(GradCheck, ShapeOpGradients) {
  auto a = make_param("a", {2, 3, 4}, 20);
  auto c = make_param("c", {2, 1, 4}, 21);
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::permute(t.param(a), {1, 2, 0})); }, {&a});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::narrow(t.param(a), 1, 1, 2)); }, {&a});
  expect_gradcheck(
      [&](Tape<double>& t) {
        const Var<double> parts[] = {t.param(c), t.param(a)};
        return probe_loss(t, ops::concat<double>(parts, 1));
      },
      {&a, &c});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::expand_leading(t.param(a), 3)); }, {&a});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::gather_rows(t.param(a), {0, 5, 5, 2})); },
                   {&a});
  // index [3 x 2] into the last axis of size 4
  expect_gradcheck(
      [&](Tape<double>& t) { return probe_loss(t, ops::take_along_last(t.param(a), {0, 3, 1, 1, 2, 0}, 2)); }, {&a});
  expect_gradcheck([&](Tape<double>& t) { return ops::mean(ops::mul(t.param(a), t.param(a))); }, {&a});
  expect_gradcheck(
      [&](Tape<double>& t) {
        Rng rng(4);
        return probe_loss(t, ops::dropout(t.param(a), 0.4, rng, true));
      },
      {&a});
}

TEST(GradCheck, StemOpGradients) {
  auto x = make_param("x", {2, 4, 4, 3}, 30);
  auto w = make_param("w", {3, 3, 3, 4}, 31);
  auto g = make_param("g", {4}, 32);
  auto b = make_param("b", {4}, 33);
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::conv2d(t.param(x), t.param(w), 2, 1)); },
                   {&x, &w});
  expect_gradcheck([&](Tape<double>& t) { return probe_loss(t, ops::weight_standardize(t.param(w))); }, {&w});
  auto y = make_param("y", {2, 2, 2, 4}, 34);
  expect_gradcheck(
      [&](Tape<double>& t) { return probe_loss(t, ops::group_norm(t.param(y), t.param(g), t.param(b), 2)); },
      {&y, &g, &b});
}

TEST(GradCheck, ReportsBrokenGradient) {
  // a deliberately wrong backward rule must be caught
  auto p = make_param("p", {3}, 40);
  LossFn f = [&](Tape<double>& t) {
    auto x = t.param(p);
    Tensor<double> v = x.value();
    for (auto& e : v.data()) e = e * e;
    auto sq = t.record(std::move(v), {x}, [x](Tape<double>& tp, std::size_t self) {
      const auto& go = tp.grad(self);
      auto& gi = tp.grad(x);
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * x.value()[i];  // missing factor 2
    });
    return ops::sum(sq);
  };
  std::vector<Parameter<double>*> ps{&p};
  auto report = check_gradients(f, ps);
  EXPECT_FALSE(report.passed);
}
