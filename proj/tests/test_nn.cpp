#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hvfcast/error.hpp"
#include "hvfcast/optim.hpp"
#include "hvfcast/tape.hpp"
#include "support.hpp"

using namespace hvfcast;
using namespace hvfcast::nn;
using hvfcast::testing::random_tensor;

namespace {

// Direct 'same' convolution, no im2col.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
  const int pad = static_cast<int>(K / 2);
  Tensor y(Shape{N, O, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < K; ++u)
              for (std::size_t v = 0; v < K; ++v) {
                const int ii = static_cast<int>(i + u) - pad, jj = static_cast<int>(j + v) - pad;
                if (ii < 0 || jj < 0 || ii >= static_cast<int>(H) || jj >= static_cast<int>(W)) continue;
                s += w[((o * C + c) * K + u) * K + v] * x.at(n, c, ii, jj);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

std::vector<bool> full_mask(std::size_t n) { return std::vector<bool>(n, true); }

}  // namespace

TEST(Conv, DeltaKernelIsIdentity) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 1, 8, 9}, rng);
  Tensor w(Shape{1, 1, 3, 3});
  w[4] = 1.0;
  Tape t;
  EXPECT_EQ(conv2d(t.constant(x), t.constant(w), t.constant(Tensor(Shape{1}))).value(), x);
}

TEST(Conv, OnesKernelCountsNeighbours) {
  Tape t;
  const Tensor y = conv2d(t.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)), t.constant(Tensor(Shape{1, 1, 3, 3}, 1.0)),
                          t.constant(Tensor(Shape{1})))
                       .value();
  EXPECT_DOUBLE_EQ(y.at(0, 0, 1, 1), 9.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 0), 4.0);
  EXPECT_DOUBLE_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv, ReluClampsNegative) {
  Tape t;
  Tensor w(Shape{1, 1, 1, 1}, 1.0);
  const Tensor x(Shape{1, 1, 1, 2}, std::vector<double>{-2.0, 3.0});
  const Tensor y = conv2d(t.constant(x), t.constant(w), t.constant(Tensor(Shape{1})), Activation::relu).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 3.0);
}

TEST(Conv, MatchesNaiveOracle) {
  std::mt19937_64 rng(2);
  for (std::size_t k : {1u, 3u, 5u}) {
    const Tensor x = random_tensor({3, 4, 8, 9}, rng), w = random_tensor({5, 4, k, k}, rng),
                 b = random_tensor({5}, rng);
    Tape t;
    const Tensor y = conv2d(t.constant(x), t.constant(w), t.constant(b)).value();
    const Tensor ref = naive_conv(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv, ChannelMismatchThrows) {
  Tape t;
  EXPECT_THROW(conv2d(t.constant(Tensor(Shape{1, 2, 8, 9})), t.constant(Tensor(Shape{1, 3, 3, 3})),
                      t.constant(Tensor(Shape{1}))),
               ShapeError);
}

TEST(Conv, LinearInInput) {
  std::mt19937_64 rng(3);
  const Tensor w = random_tensor({2, 3, 3, 3}, rng), b(Shape{2});
  const Tensor x = random_tensor({2, 3, 8, 9}, rng), z = random_tensor({2, 3, 8, 9}, rng);
  const double a = 0.7, c = -1.3;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + c * z[i];
  Tape t;
  auto f = [&](const Tensor& in) { return conv2d(t.constant(in), t.constant(w), t.constant(b)).value(); };
  const Tensor fx = f(x), fz = f(z), fm = f(mix);
  for (std::size_t i = 0; i < fm.size(); ++i) ASSERT_NEAR(fm[i], a * fx[i] + c * fz[i], 1e-12);
}

TEST(Dense, HandValue) {
  Tape t;
  const Tensor y = dense(t.constant(Tensor(Shape{1, 2}, std::vector<double>{3, 4})),
                         t.constant(Tensor(Shape{1, 2}, std::vector<double>{1, 2})),
                         t.constant(Tensor(Shape{1}, std::vector<double>{0.5})))
                       .value();
  EXPECT_DOUBLE_EQ(y[0], 11.5);
}

TEST(Dense, IdentityAndRelu) {
  Tape t;
  Tensor eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 4] = 1.0;
  const Tensor x(Shape{1, 3}, std::vector<double>{-1.0, 2.0, 0.5});
  EXPECT_EQ(dense(t.constant(x), t.constant(eye), t.constant(Tensor(Shape{3}))).value(), x);
  const Tensor r = dense(t.constant(x), t.constant(eye), t.constant(Tensor(Shape{3})), Activation::relu).value();
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[1], 2.0);
}

TEST(Dense, LinearInInput) {
  std::mt19937_64 rng(4);
  const Tensor w = random_tensor({6, 5}, rng), b(Shape{6});
  const Tensor x = random_tensor({3, 5}, rng), z = random_tensor({3, 5}, rng);
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = 2.0 * x[i] - 0.5 * z[i];
  Tape t;
  auto f = [&](const Tensor& in) { return dense(t.constant(in), t.constant(w), t.constant(b)).value(); };
  const Tensor fx = f(x), fz = f(z), fm = f(mix);
  for (std::size_t i = 0; i < fm.size(); ++i) ASSERT_NEAR(fm[i], 2.0 * fx[i] - 0.5 * fz[i], 1e-12);
}

TEST(BatchNorm, TrainModeStandardizes) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({4, 3, 8, 9}, rng, -3, 7);
  BatchNormState st(3);
  Tape t;
  const Tensor y = batch_norm(t.constant(x), t.constant(Tensor(Shape{3}, 1.0)), t.constant(Tensor(Shape{3})), st,
                              Mode::train)
                       .value();
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    const double n = 4 * 72;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t p = 0; p < 72; ++p) m += y.at(i, c, p / 9, p % 9);
    m /= n;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t p = 0; p < 72; ++p) v += std::pow(y.at(i, c, p / 9, p % 9) - m, 2);
    v /= n;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
  // running stats moved toward the batch statistics
  EXPECT_NE(st.running_mean[0], 0.0);
}

TEST(BatchNorm, InferUsesRunningStats) {
  BatchNormState st(1);
  Tape t;
  const Tensor y = batch_norm(t.constant(Tensor(Shape{1, 1, 1, 1}, 1.0)), t.constant(Tensor(Shape{1}, 2.0)),
                              t.constant(Tensor(Shape{1}, 3.0)), st, Mode::infer)
                       .value();
  EXPECT_NEAR(y[0], 3.0 + 2.0 / std::sqrt(1.0 + 1e-5), 1e-15);
  EXPECT_NEAR(y[0], 5.0, 1e-4);
}

TEST(BatchNorm, InferIsPure) {
  std::mt19937_64 rng(6);
  BatchNormState st(2);
  st.running_mean[0] = 0.3;
  st.running_var[1] = 2.0;
  const Tensor x = random_tensor({2, 2, 8, 9}, rng);
  Tape t;
  auto run = [&] {
    return batch_norm(t.constant(x), t.constant(Tensor(Shape{2}, 1.5)), t.constant(Tensor(Shape{2}, 0.2)), st,
                      Mode::infer)
        .value();
  };
  const Tensor a = run(), b = run();
  EXPECT_EQ(a, b);
  EXPECT_EQ(st.running_mean[0], 0.3);
}

TEST(BatchNorm, RunningUpdateUsesMomentum) {
  BatchNormState st(1);
  const Tensor x(Shape{2, 1, 1, 1}, std::vector<double>{1.0, 3.0});
  Tape t;
  batch_norm(t.constant(x), t.constant(Tensor(Shape{1}, 1.0)), t.constant(Tensor(Shape{1})), st, Mode::train);
  EXPECT_NEAR(st.running_mean[0], 0.01 * 2.0, 1e-15);
  // unbiased batch variance of {1, 3} is 2
  EXPECT_NEAR(st.running_var[0], 0.99 + 0.01 * 2.0, 1e-15);
}

TEST(Concat, OrderAndIdentity) {
  std::mt19937_64 rng(7);
  const Tensor a = random_tensor({2, 2, 8, 9}, rng), b = random_tensor({2, 3, 8, 9}, rng);
  Tape t;
  const Var va = t.constant(a), vb = t.constant(b);
  const Var both[] = {va, vb};
  const Tensor y = concat_channels(both).value();
  ASSERT_EQ(y.shape(), (Shape{2, 5, 8, 9}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t p = 0; p < 72; ++p)
        ASSERT_EQ(y.at(n, c, p / 9, p % 9), c < 2 ? a.at(n, c, p / 9, p % 9) : b.at(n, c - 2, p / 9, p % 9));
  const Var one[] = {va};
  EXPECT_EQ(concat_channels(one).value(), a);
}

TEST(MaskedMae, Values) {
  Tape t;
  const Tensor target(Shape{1, 1, 1, 3}, std::vector<double>{1.0, 1.0, 1.0});
  const Tensor pred(Shape{1, 1, 1, 3}, std::vector<double>{3.0, -3.0, 100.0});
  EXPECT_DOUBLE_EQ(masked_mae(t.constant(pred), target, {true, true, false}).value()[0], 3.0);
  EXPECT_DOUBLE_EQ(masked_mae_value(target, target, {true, true, true}), 0.0);
}

TEST(MaskedMae, OffMaskInvariance) {
  std::mt19937_64 rng(8);
  std::vector<bool> mask(72);
  for (std::size_t i = 0; i < 72; ++i) mask[i] = i % 3 != 0;
  Tensor p = random_tensor({2, 1, 8, 9}, rng), q = random_tensor({2, 1, 8, 9}, rng);
  const double before = masked_mae_value(p, q, mask);
  for (std::size_t i = 0; i < p.size(); ++i)
    if (!mask[i % 72]) p[i] += 50.0, q[i] -= 20.0;
  EXPECT_DOUBLE_EQ(masked_mae_value(p, q, mask), before);
}

TEST(MaskedMae, PerSampleMask) {
  const Tensor target(Shape{2, 1, 1, 2});
  const Tensor pred(Shape{2, 1, 1, 2}, std::vector<double>{1.0, 5.0, 7.0, 3.0});
  EXPECT_DOUBLE_EQ(masked_mae_value(pred, target, {true, false, false, true}), 2.0);
}

TEST(MaskedMae, EmptyMaskThrows) {
  const Tensor z(Shape{1, 1, 1, 2});
  EXPECT_THROW(masked_mae_value(z, z, {false, false}), DataError);
}

TEST(GradCheck, Square) {
  ParamSet ps;
  auto& th = ps.add("theta", Tensor(Shape{1}, 3.0));
  const auto r = grad_check(ps, [&](Tape& t) {
    const Var v = t.parameter(th);
    return sum(mul(v, v));
  });
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.checked, 1u);
}

TEST(GradCheck, ConstantLoss) {
  ParamSet ps;
  ps.add("theta", Tensor(Shape{3}, 1.0));
  const auto r = grad_check(ps, [&](Tape& t) { return sum(t.constant(Tensor(Shape{2}, 4.0))); });
  EXPECT_EQ(r.max_rel_error, 0.0);
}

TEST(GradCheck, ConvBnReluMae) {
  std::mt19937_64 rng(9);
  ParamSet ps;
  auto& x = ps.add("x", random_tensor({3, 2, 8, 9}, rng));
  auto& w = ps.add("w", random_tensor({4, 2, 3, 3}, rng));
  auto& b = ps.add("b", random_tensor({4}, rng));
  auto& g = ps.add("gamma", random_tensor({4}, rng, 0.5, 1.5));
  auto& be = ps.add("beta", random_tensor({4}, rng));
  auto& w2 = ps.add("w2", random_tensor({1, 4, 3, 3}, rng));
  auto& b2 = ps.add("b2", random_tensor({1}, rng));
  const Tensor target = random_tensor({3, 1, 8, 9}, rng);
  std::vector<bool> mask(72);
  for (std::size_t i = 0; i < 72; ++i) mask[i] = i % 4 != 1;
  BatchNormState st(4);
  const auto r = grad_check(ps, [&](Tape& t) {
    Var h = conv2d(t.parameter(x), t.parameter(w), t.parameter(b));
    h = relu(batch_norm(h, t.parameter(g), t.parameter(be), st, Mode::train));
    return masked_mae(conv2d(h, t.parameter(w2), t.parameter(b2)), target, mask);
  });
  EXPECT_LT(r.max_rel_error, 1e-5);
  EXPECT_GT(r.checked, 400u);
}

TEST(GradCheck, DenseAddReshape) {
  std::mt19937_64 rng(10);
  ParamSet ps;
  auto& x = ps.add("x", random_tensor({2, 72}, rng));
  auto& w = ps.add("w", random_tensor({72, 72}, rng, -0.2, 0.2));
  auto& b = ps.add("b", random_tensor({72}, rng));
  auto& y = ps.add("y", random_tensor({2, 1, 8, 9}, rng));
  const Tensor target = random_tensor({2, 1, 8, 9}, rng);
  const auto r = grad_check(
      ps,
      [&](Tape& t) {
        Var h = dense(t.parameter(x), t.parameter(w), t.parameter(b), Activation::relu);
        h = add(reshape(h, {2, 1, 8, 9}), t.parameter(y));
        return masked_mae(h, target, full_mask(72));
      },
      {.max_coords = 600, .seed = 3});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(GradCheck, ConcatSumMatchesPerInput) {
  std::mt19937_64 rng(11);
  ParamSet ps;
  auto& a = ps.add("a", random_tensor({1, 2, 2, 2}, rng));
  auto& b = ps.add("b", random_tensor({1, 3, 2, 2}, rng));
  const Tensor weights = random_tensor({1, 5, 2, 2}, rng);
  Tape t;
  const Var xs[] = {t.parameter(a), t.parameter(b)};
  t.backward(sum(mul(concat_channels(xs), t.constant(weights))));
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_DOUBLE_EQ(a.grad[i], weights[i]);
  for (std::size_t i = 0; i < b.grad.size(); ++i) EXPECT_DOUBLE_EQ(b.grad[i], weights[8 + i]);
  ps.zero_grad();
  const auto r = grad_check(ps, [&](Tape& tp) {
    const Var v[] = {tp.parameter(a), tp.parameter(b)};
    return sum(mul(concat_channels(v), tp.constant(weights)));
  });
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  ParamSet ps;
  auto& p = ps.add("p", Tensor(Shape{4}, 1.5));
  AdamState st;
  adam_step(ps, st);
  EXPECT_EQ(p.value, Tensor(Shape{4}, 1.5));
}

TEST(Adam, FirstStepClosedForm) {
  ParamSet ps;
  auto& p = ps.add("theta", Tensor(Shape{1}, 0.0));
  p.grad[0] = 1.0;
  AdamState st;
  adam_step(ps, st);
  // m_hat = 1, v_hat = 1
  EXPECT_NEAR(p.value[0], -1e-3 * 1.0 / (1.0 + 1e-8), 1e-12);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    std::mt19937_64 rng(12);
    ParamSet ps;
    auto& p = ps.add("p", random_tensor({10}, rng));
    AdamState st;
    for (int i = 0; i < 50; ++i) {
      for (std::size_t k = 0; k < 10; ++k) p.grad[k] = std::sin(p.value[k] * (i + 1));
      adam_step(ps, st);
    }
    return p.value;
  };
  EXPECT_EQ(run(), run());
}

// Independent scalar recurrence for bias-corrected Adam.
TEST(Adam, MatchesScalarRecurrence) {
  ParamSet ps;
  auto& p = ps.add("theta", Tensor(Shape{1}, 1.0));
  AdamState st;
  double th = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2000; ++t) {
    const double g = 2.0 * th;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    th -= 1e-3 * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
    p.grad[0] = 2.0 * p.value[0];
    adam_step(ps, st);
    ASSERT_NEAR(p.value[0], th, 1e-12) << "step " << t;
  }
}

TEST(Adam, QuadraticConverges) {
  ParamSet ps;
  auto& p = ps.add("theta", Tensor(Shape{1}, 1.0));
  AdamState st;
  int steps = 0;
  while (std::abs(p.value[0]) >= 1e-2 && steps < 5000) {
    p.grad[0] = 2.0 * p.value[0];
    adam_step(ps, st);
    ++steps;
  }
  EXPECT_LT(std::abs(p.value[0]), 1e-2);
  // the bias-corrected recurrence needs 2203 steps from theta = 1
  EXPECT_EQ(steps, 2203);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  ParamSet ps;
  auto& p = ps.add("head.weight", Tensor(Shape{1}, 1.0));
  p.grad[0] = std::nan("");
  AdamState st;
  try {
    adam_step(ps, st);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("divergence"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos);
  }
}
