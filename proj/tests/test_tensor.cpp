#include <gtest/gtest.h>

#include "jpeggan/autograd.hpp"
#include "jpeggan/ops.hpp"
#include "oracles.hpp"

using namespace jpeggan;
using T = Tensor<double>;

namespace {

T leaf(const Shape& s, std::vector<double> v) {
  T t(s, std::move(v));
  t.set_requires_grad(true);
  return t;
}

// Scalar probe: sum(op(x) * R) for a fixed random R.
double probe_error(const std::function<T(const T&)>& op, const Shape& in_shape, Rng& rng) {
  T x = oracle::random_tensor(in_shape, rng);
  Shape out_shape;
  {
    NoGradGuard g;
    out_shape = op(x).shape();
  }
  T r = oracle::random_tensor(out_shape, rng);
  return gradient_check([&](const T& v) { return ops::sum(ops::mul(op(v), r)); }, x);
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(T(Shape{2, 3}, std::vector<double>(5)), ShapeError);
  T t = T::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
}

TEST(Tensor, MatmulIdentity) {
  Rng rng(1);
  T a = oracle::random_tensor({3, 3}, rng);
  T eye(Shape{3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(ops::matmul(eye, a).vec(), a.vec());
}

TEST(Tensor, Conv2dDeltaKernelIsIdentity) {
  Rng rng(2);
  T x = oracle::random_tensor({2, 3, 5, 6}, rng);
  std::vector<double> k(3 * 3 * 9, 0.0);
  for (int c = 0; c < 3; ++c) k[(c * 3 + c) * 9 + 4] = 1.0;
  T y = ops::conv2d(x, T(Shape{3, 3, 3, 3}, k), T(), 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Tensor, Conv2dMatchesDirectOracle) {
  Rng rng(3);
  T x = oracle::random_tensor({2, 3, 7, 5}, rng);
  T k = oracle::random_tensor({4, 3, 3, 3}, rng);
  T y = ops::conv2d(x, k, T(), 1, 1);
  auto ref = oracle::conv2d(x.vec(), 2, 3, 7, 5, k.vec(), 4, 3, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Tensor, Relu) {
  T y = ops::relu(T(Shape{3}, {-1, 0, 2}));
  EXPECT_EQ(y.vec(), (std::vector<double>{0, 0, 2}));
}

TEST(Autograd, QuadraticGradient) {
  T w = leaf({2}, {1, 2});
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_EQ(w.grad().vec(), (std::vector<double>{2, 4}));
}

TEST(Autograd, PiecewiseGradient) {
  T w = leaf({2}, {-1, 3});
  backward(ops::mean(ops::relu(w)));
  EXPECT_EQ(w.grad().vec(), (std::vector<double>{0, 0.5}));
}

TEST(Autograd, BackwardConsumesTapeAndAccumulates) {
  T w = leaf({1}, {3});
  backward(ops::sum(ops::scale(w, 2.0)));
  EXPECT_EQ(Tape<double>::current().size(), 0u);
  backward(ops::sum(ops::scale(w, 2.0)));
  EXPECT_DOUBLE_EQ(w.grad()[0], 4.0);
}

TEST(Autograd, ErrorPaths) {
  T w = leaf({2}, {1, 2});
  EXPECT_THROW(backward(ops::scale(w, 2.0)), TapeError);  // not scalar
  Tape<double>::current().clear();
  EXPECT_THROW(backward(T::scalar(1.0)), TapeError);  // not on tape
  T loss = ops::sum(w);
  Tape<double>::current().clear();
  EXPECT_THROW(backward(loss), TapeError);  // consumed tape
  EXPECT_THROW(ops::add(T::zeros({2}), T::zeros({3})), ShapeError);
  EXPECT_THROW(ops::matmul(T::zeros({2, 3}), T::zeros({2, 3})), ShapeError);
  EXPECT_THROW(ops::scale(T::full({2}, 1e308), 1e10), NumericalError);
}

TEST(Autograd, ConstantsAreNotRecorded) {
  Tape<double>::current().clear();
  T a = T::full({3}, 1.0);
  T b = ops::add(a, a);
  EXPECT_FALSE(b.requires_grad());
  EXPECT_EQ(Tape<double>::current().size(), 0u);
}

TEST(GradientCheck, SumOfSquaresIsExact) {
  Rng rng(4);
  T x = oracle::random_tensor({4, 4}, rng);
  EXPECT_LT(gradient_check([](const T& v) { return ops::sum(ops::mul(v, v)); }, x), 1e-8);
}

TEST(GradientCheck, HardRoundingIsADocumentedFailure) {
  // The straight-through gradient of rounding (1) disagrees with its
  // almost-everywhere derivative (0), so rounding is excluded from checks.
  Rng rng(5);
  T x = oracle::random_tensor({8}, rng, 0.1, 0.4);
  const double err = gradient_check([](const T& v) { return ops::sum(ops::round_ste(v)); }, x);
  EXPECT_GT(err, 0.5);
}

TEST(GradientCheck, RejectsNonScalar) {
  T x = T::zeros({2});
  EXPECT_THROW(gradient_check([](const T& v) { return ops::scale(v, 2.0); }, x), ShapeError);
  Tape<double>::current().clear();
}

TEST(GradientCheck, EveryPrimitiveOnRandomShapes) {
  Rng rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 2 * (1 + rng.below(3)),
                      w = 2 * (1 + rng.below(3));
    const Shape s4{n, c, h, w};
    T other = oracle::random_tensor(s4, rng);
    T pos = oracle::random_tensor(s4, rng, 0.5, 2.0);
    T kernel = oracle::random_tensor({2, c, 3, 3}, rng);
    std::vector<std::pair<const char*, std::function<T(const T&)>>> cases = {
        {"add", [&](const T& x) { return ops::add(x, other); }},
        {"sub", [&](const T& x) { return ops::sub(other, x); }},
        {"mul", [&](const T& x) { return ops::mul(x, x); }},
        {"safe_div", [&](const T& x) { return ops::safe_div(x, pos); }},
        {"safe_div_den", [&](const T& x) { return ops::safe_div(other, ops::add_scalar(ops::mul(x, x), 1.0)); }},
        {"scale", [&](const T& x) { return ops::scale(x, -1.7); }},
        {"relu", [&](const T& x) { return ops::relu(x); }},
        {"leaky_relu", [&](const T& x) { return ops::leaky_relu(x, 0.2); }},
        {"tanh", [&](const T& x) { return ops::tanh(x); }},
        {"abs", [&](const T& x) { return ops::abs(x); }},
        {"clamp", [&](const T& x) { return ops::clamp(x, -0.5, 0.5); }},
        {"mean", [&](const T& x) { return ops::mean(x); }},
        {"l1_norm", [&](const T& x) { return ops::l1_norm(x); }},
        {"reshape", [&](const T& x) { return ops::reshape(x, Shape{n * c, h * w}); }},
        {"pad2d", [&](const T& x) { return ops::pad2d(x, 2); }},
        {"avg_pool", [&](const T& x) { return ops::avg_pool(x, 2, 2); }},
        {"upsample", [&](const T& x) { return ops::upsample_nearest(x, 2, 1); }},
        {"im2col", [&](const T& x) { return ops::im2col(x, 3, 1, 1); }},
        {"blocks", [&](const T& x) { return ops::blocks_to_rows(x, 2, 2); }},
        {"concat", [&](const T& x) { return ops::concat(std::vector<T>{x, other, x}, 1); }},
        {"narrow", [&](const T& x) { return ops::narrow(x, 3, 1, w - 1); }},
        {"row_norm", [&](const T& x) { return ops::row_norm(ops::reshape(x, Shape{n, c * h * w})); }},
        {"transpose", [&](const T& x) { return ops::transpose(ops::reshape(x, Shape{n * c * h, w})); }},
        {"swap01", [&](const T& x) { return ops::swap01(ops::reshape(x, Shape{n, c, h * w})); }},
        {"sum_cols", [&](const T& x) { return ops::sum_cols(ops::reshape(x, Shape{n * c, h * w})); }},
        {"sum_rows", [&](const T& x) { return ops::sum_rows(ops::reshape(x, Shape{n * c, h * w})); }},
        {"conv_stride2", [&](const T& x) { return ops::conv2d(x, kernel, T(), 2, 1); }},
        {"matmul", [&](const T& x) {
           return ops::matmul(ops::reshape(x, Shape{n * c, h * w}), ops::reshape(other, Shape{h * w, n * c}));
         }},
    };
    for (auto& [name, op] : cases) {
      EXPECT_LT(probe_error(op, s4, rng), 1e-4) << name << " on " << to_string(s4);
    }
  }
}

TEST(Autograd, SecondOrderThroughGradientNorm) {
  // d/dw of || d f / d x ||^2 where f = sum(tanh(conv(x, w))) computed by
  // double backward, against finite differences of the first-order gradient.
  Rng rng(7);
  T x0 = oracle::random_tensor({1, 2, 4, 4}, rng);
  T w0 = oracle::random_tensor({2, 2, 3, 3}, rng);
  auto penalty = [&](const T& w, bool create) {
    T x = x0.detach();
    x.set_requires_grad(true);
    T f = ops::sum(ops::tanh(ops::conv2d(x, w, T(), 1, 1)));
    T g = grad(f, {x}, create)[0];
    return ops::sum(ops::mul(g, g));
  };
  T w = w0.detach();
  w.set_requires_grad(true);
  T analytic = grad(penalty(w, true), {w})[0];
  Tape<double>::current().clear();
  auto numeric = oracle::numeric_gradient(
      [&](const std::vector<double>& v) {
        const double r = penalty(T(w0.shape(), v), false).item();
        Tape<double>::current().clear();
        return r;
      },
      w0.vec());
  for (std::size_t i = 0; i < numeric.size(); ++i) EXPECT_NEAR(analytic[i], numeric[i], 1e-6 * (1 + std::abs(numeric[i])));
}

TEST(Autograd, Linearity) {
  Rng rng(8);
  T x0 = oracle::random_tensor({3, 4}, rng);
  T m = oracle::random_tensor({4, 2}, rng);
  auto f = [&](const T& x) { return ops::sum(ops::tanh(ops::matmul(x, m))); };
  auto g = [&](const T& x) { return ops::sum(ops::mul(x, x)); };
  const double a = 0.7, b = -2.5;
  T x = x0.detach();
  x.set_requires_grad(true);
  T combined = grad(ops::add(ops::scale(f(x), a), ops::scale(g(x), b)), {x})[0];
  T gf = grad(f(x), {x})[0];
  T gg = grad(g(x), {x})[0];
  Tape<double>::current().clear();
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(combined[i], a * gf[i] + b * gg[i], 1e-12);
}

TEST(Autograd, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(99);
    T x = oracle::random_tensor({2, 3, 8, 8}, rng);
    T k = oracle::random_tensor({4, 3, 3, 3}, rng);
    k.set_requires_grad(true);
    backward(ops::mean(ops::relu(ops::conv2d(x, k, T(), 1, 1))));
    return k.grad().vec();
  };
  EXPECT_EQ(run(), run());
}

TEST(Autograd, FloatPrecisionRuns) {
  Tensor<float> w(Shape{2}, {1.f, 2.f});
  w.set_requires_grad(true);
  backward(ops::sum(ops::mul(w, w)));
  EXPECT_FLOAT_EQ(w.grad()[1], 4.f);
}

TEST(Conv, StrideOneMatchesOracleAcrossGeometries) {
  // Batch sizes and plane sizes chosen so that samples are grouped into
  // several GEMM chunks, including a partial last chunk.
  Rng rng(10);
  struct G {
    std::size_t n, cin, h, w, cout, k, pad;
  };
  for (const G& g : {G{6, 2, 8, 8, 3, 3, 1}, G{70, 1, 2, 2, 2, 3, 1}, G{5, 3, 5, 4, 2, 3, 0}, G{3, 2, 4, 4, 2, 3, 2},
                     G{2, 2, 3, 3, 4, 1, 1}, G{1, 4, 17, 9, 5, 5, 2}}) {
    T x = oracle::random_tensor({g.n, g.cin, g.h, g.w}, rng);
    T k = oracle::random_tensor({g.cout, g.cin, g.k, g.k}, rng);
    T y = ops::conv2d(x, k, T(), 1, g.pad);
    auto ref = oracle::conv2d(x.vec(), g.n, g.cin, g.h, g.w, k.vec(), g.cout, g.k, g.pad);
    ASSERT_EQ(y.numel(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y[i], ref[i], 1e-12) << i;
  }
}

TEST(Conv, PrimitivesAreMutuallyAdjoint) {
  // <conv(x, w), g> = <x, input_grad(g, w)> = <w, weight_grad(x, g)>
  Rng rng(11);
  for (std::size_t pad : {0u, 1u, 2u, 3u}) {
    const Shape xs{4, 3, 6, 5}, ws{2, 3, 3, 3};
    T x = oracle::random_tensor(xs, rng);
    T w = oracle::random_tensor(ws, rng);
    T y = ops::conv_forward(x, w, pad);
    T g = oracle::random_tensor(y.shape(), rng);
    auto dot = [](const T& a, const T& b) {
      double s = 0;
      for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
      return s;
    };
    const double lhs = dot(y, g);
    EXPECT_NEAR(dot(x, ops::conv_input_grad(g, w, xs, pad)), lhs, 1e-10) << "pad " << pad;
    EXPECT_NEAR(dot(w, ops::conv_weight_grad(x, g, ws, pad)), lhs, 1e-10) << "pad " << pad;
  }
}

TEST(GradientCheck, ConvPrimitivesAndChannelOps) {
  Rng rng(12);
  const Shape xs{2, 3, 4, 5}, ws{2, 3, 3, 3};
  T w = oracle::random_tensor(ws, rng);
  T x0 = oracle::random_tensor(xs, rng);
  T g0 = oracle::random_tensor({2, 2, 4, 5}, rng);
  T b = oracle::random_tensor({3}, rng);
  std::vector<std::tuple<const char*, Shape, std::function<T(const T&)>>> cases = {
      {"conv_forward/x", xs, [&](const T& v) { return ops::conv_forward(v, w, 1); }},
      {"conv_forward/w", ws, [&](const T& v) { return ops::conv_forward(x0, v, 1); }},
      {"conv_input_grad/g", g0.shape(), [&](const T& v) { return ops::conv_input_grad(v, w, xs, 1); }},
      {"conv_input_grad/w", ws, [&](const T& v) { return ops::conv_input_grad(g0, v, xs, 1); }},
      {"conv_weight_grad/x", xs, [&](const T& v) { return ops::conv_weight_grad(v, g0, ws, 1); }},
      {"conv_weight_grad/g", g0.shape(), [&](const T& v) { return ops::conv_weight_grad(x0, v, ws, 1); }},
      {"channel_sum", xs, [&](const T& v) { return ops::channel_sum(v); }},
      {"channel_broadcast", {3}, [&](const T& v) { return ops::channel_broadcast(v, xs); }},
      {"add_channel_bias/y", xs, [&](const T& v) { return ops::add_channel_bias(v, b); }},
      {"add_channel_bias/b", {3}, [&](const T& v) { return ops::add_channel_bias(x0, v); }},
  };
  for (auto& [name, shape, op] : cases) EXPECT_LT(probe_error(op, shape, rng), 1e-4) << name;
}

TEST(GradientCheck, GemmTransposeFlags) {
  Rng rng(13);
  T other = oracle::random_tensor({4, 3}, rng);
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      const Shape as = ta ? Shape{4, 2} : Shape{2, 4};
      T b = tb ? ops::transpose(other) : other;
      EXPECT_LT(probe_error([&](const T& a) { return ops::gemm(a, b, ta, tb); }, as, rng), 1e-4)
          << "ta=" << ta << " tb=" << tb;
    }
}
