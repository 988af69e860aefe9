#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "iwd/adam.hpp"
#include "iwd/autodiff.hpp"
#include "iwd/complex_ops.hpp"
#include "test_support.hpp"

using namespace iwd;
using iwd::testing::max_gradient_error;
using iwd::testing::random_tensor;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
}

TEST(Tensor, ReshapeKeepsDataOrder) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  t.reshape({3, 2});
  EXPECT_EQ(t(2, 1), 6);
  EXPECT_EQ(t(1, 0), 3);
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  const auto y = ad::softmax_rows(ad::constant(Tensor::row({0, 0, 0})));
  for (double v : y->value.vec()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, GeluAndSigmoidFixedPoints) {
  EXPECT_EQ(ad::gelu_value(0.0), 0.0);
  EXPECT_EQ(ad::sigmoid_value(0.0), 0.5);
  // erf form: GELU(1) = 0.5 (1 + erf(1/sqrt 2)) = Phi(1)
  EXPECT_NEAR(ad::gelu_value(1.0), 0.8413447460685429, 1e-15);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto y = ad::softmax_rows(ad::constant(random_tensor({4, 7}, rng, -30, 30)));
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) {
        EXPECT_GE(y->value(r, c), 0.0);
        s += y->value(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Ops, LayerNormStandardizesRows) {
  std::mt19937_64 rng(5);
  const auto x = ad::constant(random_tensor({3, 16}, rng, -4, 9));
  const auto y = ad::layer_norm_rows(x, ad::constant(Tensor::matrix(1, 16, 1.0)), ad::constant(Tensor::matrix(1, 16)), 0.0);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y->value(r, c);
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y->value(r, c) - m) * (y->value(r, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 16, 1.0, 1e-12);
  }
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
  try {
    ad::matmul(ad::constant(Tensor::matrix(2, 3)), ad::constant(Tensor::matrix(4, 5)));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Ops, DropoutIdentities) {
  std::mt19937_64 rng(1);
  const auto x = ad::constant(random_tensor({3, 5}, rng));
  EXPECT_EQ(ad::dropout(x, 0.0, true, rng).get(), x.get());
  EXPECT_EQ(ad::dropout(x, 0.5, false, rng).get(), x.get());
  EXPECT_THROW(ad::dropout(x, 1.0, true, rng), DomainError);
}

TEST(Ops, DropoutIsInvertedScaling) {
  std::mt19937_64 rng(11);
  const auto x = ad::constant(Tensor::matrix(200, 200, 1.0));
  const auto y = ad::dropout(x, 0.25, true, rng);
  double mean = 0;
  for (double v : y->value.vec()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    mean += v;
  }
  EXPECT_NEAR(mean / 40000.0, 1.0, 0.02);
}

TEST(Autodiff, SquareAtThree) {
  const auto x = ad::parameter(Tensor::scalar(3.0));
  ad::backward(ad::mul(x, x));
  EXPECT_DOUBLE_EQ(x->grad.item(), 6.0);
}

TEST(Autodiff, SigmoidSlopeAtZero) {
  const auto x = ad::parameter(Tensor::scalar(0.0));
  ad::backward(ad::sigmoid(x));
  EXPECT_DOUBLE_EQ(x->grad.item(), 0.25);
}

TEST(Autodiff, NonScalarLossRejected) {
  const auto x = ad::parameter(Tensor::matrix(2, 2, 1.0));
  EXPECT_THROW(ad::backward(x), ShapeError);
}

TEST(Autodiff, NonFiniteValueRaises) {
  EXPECT_THROW(ad::constant(Tensor::scalar(std::nan(""))), NumericalError);
}

TEST(Autodiff, FivePartCompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  const double err = max_gradient_error(
      {random_tensor({1, 5}, rng)},
      [](const std::vector<ad::Var>& v) {
        const auto a = ad::gelu(ad::scale(v[0], 1.7));
        const auto b = ad::sigmoid(ad::mul(v[0], a));
        return ad::softmax_rows(ad::add(a, b));
      },
      rng);
  EXPECT_LE(err, 1e-4);
}

// Every differentiable op against central differences, 100 seeds each.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
  auto check = [&](const char* name, std::vector<Tensor> inputs, std::function<ad::Var(const std::vector<ad::Var>&)> op) {
    const double err = max_gradient_error(std::move(inputs), op, rng);
    EXPECT_LE(err, 1e-4) << name << " seed " << GetParam();
  };
  check("matmul", {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
        [](const auto& v) { return ad::matmul(v[0], v[1]); });
  check("matmul_nt", {random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
        [](const auto& v) { return ad::matmul_nt(v[0], v[1]); });
  check("add", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, [](const auto& v) { return ad::add(v[0], v[1]); });
  check("add_row", {random_tensor({3, 4}, rng), random_tensor({1, 4}, rng)},
        [](const auto& v) { return ad::add_row(v[0], v[1]); });
  check("mul", {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, [](const auto& v) { return ad::mul(v[0], v[1]); });
  check("scale", {random_tensor({2, 3}, rng)}, [](const auto& v) { return ad::scale(v[0], -2.5); });
  check("one_minus", {random_tensor({2, 3}, rng)}, [](const auto& v) { return ad::one_minus(v[0]); });
  check("mul_scalar", {random_tensor({1, 1}, rng), random_tensor({2, 3}, rng)},
        [](const auto& v) { return ad::mul_scalar(v[0], v[1]); });
  check("sum", {random_tensor({3, 3}, rng)}, [](const auto& v) { return ad::sum(v[0]); });
  check("concat_rows", {random_tensor({1, 3}, rng), random_tensor({2, 3}, rng)},
        [](const auto& v) { return ad::concat_rows(v[0], v[1]); });
  check("concat_cols", {random_tensor({2, 1}, rng), random_tensor({2, 3}, rng)},
        [](const auto& v) { return ad::concat_cols({v[0], v[1]}); });
  check("slice_rows", {random_tensor({4, 3}, rng)}, [](const auto& v) { return ad::slice_rows(v[0], 1, 3); });
  check("slice_cols", {random_tensor({3, 5}, rng)}, [](const auto& v) { return ad::slice_cols(v[0], 2, 4); });
  check("reshape", {random_tensor({2, 6}, rng)}, [](const auto& v) { return ad::reshape(v[0], {3, 4}); });
  check("softmax_rows", {random_tensor({3, 5}, rng, -3, 3)}, [](const auto& v) { return ad::softmax_rows(v[0]); });
  check("layer_norm_rows", {random_tensor({3, 6}, rng, -2, 2), random_tensor({1, 6}, rng), random_tensor({1, 6}, rng)},
        [](const auto& v) { return ad::layer_norm_rows(v[0], v[1], v[2]); });
  check("gelu", {random_tensor({2, 4}, rng, -3, 3)}, [](const auto& v) { return ad::gelu(v[0]); });
  check("sigmoid", {random_tensor({2, 4}, rng, -5, 5)}, [](const auto& v) { return ad::sigmoid(v[0]); });
  check("linear", {random_tensor({2, 3}, rng), random_tensor({3, 4}, rng), random_tensor({1, 4}, rng)},
        [](const auto& v) { return ad::linear(v[0], v[1], v[2]); });
  const std::uint64_t mask_seed = rng();
  check("dropout", {random_tensor({3, 4}, rng)}, [mask_seed](const auto& v) {
    std::mt19937_64 r(mask_seed);  // same mask on every evaluation
    return ad::dropout(v[0], 0.3, true, r);
  });
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 100));

TEST(Adam, ZeroGradientLeavesParams) {
  std::vector<double> p{1.0, -2.0};
  const std::vector<double> g{0.0, 0.0};
  AdamState s;
  adam_step(p, g, s);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m_hat = g, v_hat = g^2 after bias correction, so the step is lr g/(|g|+eps).
  std::vector<double> p{0.5};
  const std::vector<double> g{1.0};
  AdamState s;
  adam_step(p, g, s);
  EXPECT_NEAR(p[0], 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ConstantGradientApproachesSignStep) {
  std::vector<double> p{0.0};
  const std::vector<double> g{-0.3};
  AdamState s;
  double last = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double before = p[0];
    adam_step(p, g, s);
    last = p[0] - before;
  }
  EXPECT_NEAR(last, 1e-3, 1e-9);
}

TEST(Adam, NanGradientNamesGroup) {
  ParameterSet params{{"mlp.w1", Tensor::matrix(1, 2, 1.0)}};
  std::map<std::string, Tensor> grads{{"mlp.w1", Tensor({1, 2}, std::vector<double>{0.1, std::nan("")})}};
  AdamOptimizer opt;
  try {
    opt.step(params, grads);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("mlp.w1"), std::string::npos);
  }
}

TEST(ComplexOps, GateApplicationPreservesNorm) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 200; ++trial) {
    ComplexTensor s({16});
    double n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.re()[i] = u(rng);
      s.im()[i] = u(rng);
    }
    n = std::sqrt(s.norm_squared());
    for (std::size_t i = 0; i < s.size(); ++i) {
      s.re()[i] /= n;
      s.im()[i] /= n;
    }
    const double th = u(rng) * 6;
    const Gate2 g{Complex(std::cos(th / 2), 0), Complex(0, -std::sin(th / 2)), Complex(0, -std::sin(th / 2)),
                  Complex(std::cos(th / 2), 0)};
    apply_gate(s, static_cast<std::size_t>(trial % 4), g);
    apply_controlled_gate(s, static_cast<std::size_t>(trial % 4), static_cast<std::size_t>((trial + 1) % 4), g);
    EXPECT_NEAR(s.norm_squared(), 1.0, 1e-12);
  }
}
