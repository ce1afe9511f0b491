#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "softcbm/error.hpp"
#include "softcbm/nn.hpp"
#include "softcbm/rng.hpp"

namespace softcbm::nn {
namespace {

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Direct 7-loop convolution used as the reference.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, int stride, int pad) {
  const int n = x.dim(0), ci = x.dim(1), d = x.dim(2), h = x.dim(3), wd = x.dim(4);
  const int co = w.dim(0), k = w.dim(2);
  const int od = (d + 2 * pad - k) / stride + 1, oh = (h + 2 * pad - k) / stride + 1,
            ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, co, od, oh, ow});
  std::size_t o = 0;
  for (int b = 0; b < n; ++b)
    for (int c = 0; c < co; ++c)
      for (int z = 0; z < od; ++z)
        for (int yy = 0; yy < oh; ++yy)
          for (int xx = 0; xx < ow; ++xx, ++o) {
            double s = 0.0;
            for (int q = 0; q < ci; ++q)
              for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                  for (int kx = 0; kx < k; ++kx) {
                    const int iz = z * stride - pad + kz, iy = yy * stride - pad + ky, ix = xx * stride - pad + kx;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= wd) continue;
                    s += x[((((std::size_t)b * ci + q) * d + iz) * h + iy) * wd + ix] *
                         w[((((std::size_t)c * ci + q) * k + kz) * k + ky) * k + kx];
                  }
            y[o] = s;
          }
  return y;
}

// Checks dL/dx and dL/dparams of L = sum(r * f(x)) by central differences.
void check_gradients(Module<double>& m, const Tensor<double>& x0, Mode mode, std::uint64_t seed,
                     double tol = 1e-6, bool check_input = true) {
  std::vector<Parameter<double>*> params;
  m.collect(params);
  Rng rng(seed);
  Tape<double> tape;
  Context<double> ctx{mode, &tape, nullptr};
  const Tensor<double> y = m.forward(x0, ctx);
  const Tensor<double> r = random_tensor(y.shape(), rng);
  for (auto* p : params)
    if (!p->is_buffer()) p->grad.fill(0.0);
  const Tensor<double> dx = m.backward(r, tape);
  EXPECT_TRUE(tape.empty());

  auto loss = [&](const Tensor<double>& x) {
    Context<double> c{mode, nullptr, nullptr};
    const Tensor<double> out = m.forward(x, c);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
    return s;
  };
  const double h = 1e-6;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7}); };
  if (check_input) {
    Tensor<double> x = x0;
    for (int k = 0; k < 20; ++k) {
      const std::size_t i = rng.index(x.size());
      const double orig = x[i];
      x[i] = orig + h;
      const double lp = loss(x);
      x[i] = orig - h;
      const double lm = loss(x);
      x[i] = orig;
      EXPECT_LT(rel(dx[i], (lp - lm) / (2 * h)), tol) << "input " << i;
    }
  }
  for (auto* p : params) {
    if (p->is_buffer()) continue;
    for (int k = 0; k < 6; ++k) {
      const std::size_t i = rng.index(p->value.size());
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double lp = loss(x0);
      p->value[i] = orig - h;
      const double lm = loss(x0);
      p->value[i] = orig;
      EXPECT_LT(rel(p->grad[i], (lp - lm) / (2 * h)), tol) << p->name << "[" << i << "]";
    }
  }
}

void init(Module<double>& m, std::uint64_t seed) {
  std::vector<Parameter<double>*> params;
  m.collect(params);
  initialize_parameters(params, seed);
}

TEST(Conv3d, MatchesNaiveConvolution) {
  Rng rng(1);
  struct Case {
    int ci, co, k, stride, pad, d;
  };
  for (const Case& c : {Case{1, 3, 3, 1, 1, 5}, Case{2, 4, 3, 2, 1, 7}, Case{3, 2, 1, 1, 0, 4}, Case{2, 2, 7, 2, 3, 9},
                        Case{4, 5, 1, 2, 0, 6}}) {
    Conv3d<double> conv("c", c.ci, c.co, c.k, c.stride, c.pad);
    init(conv, 3);
    const auto x = random_tensor({2, c.ci, c.d, c.d + 1, c.d - 1}, rng);
    Context<double> ctx;
    const auto y = conv.forward(x, ctx);
    const auto ref = naive_conv(x, conv.weight().value, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  for (int stride : {1, 2}) {
    Conv3d<double> conv("c", 2, 3, 3, stride, 1);
    init(conv, 4);
    check_gradients(conv, random_tensor({2, 2, 5, 4, 6}, rng), Mode::train, 10 + stride);
  }
  Conv3d<double> pointwise("p", 3, 2, 1, 1, 0);
  init(pointwise, 5);
  check_gradients(pointwise, random_tensor({1, 3, 3, 3, 3}, rng), Mode::train, 12);
}

TEST(Conv3d, RejectsChannelMismatch) {
  Conv3d<double> conv("c", 2, 3, 3, 1, 1);
  Context<double> ctx;
  EXPECT_THROW(conv.forward(Tensor<double>({1, 3, 4, 4, 4}), ctx), ValidationError);
}

TEST(BatchNorm3d, TrainModeNormalizesPerChannel) {
  Rng rng(3);
  BatchNorm3d<double> bn("bn", 3);
  init(bn, 1);
  const auto x = random_tensor({4, 3, 3, 2, 2}, rng, 2.0, 5.0);
  Tape<double> tape;
  Context<double> ctx{Mode::train, &tape, nullptr};
  const auto y = bn.forward(x, ctx);
  const std::size_t sp = y.spatial();
  for (int c = 0; c < 3; ++c) {
    double s = 0, s2 = 0;
    for (int b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < sp; ++i) {
        const double v = y[(static_cast<std::size_t>(b) * 3 + c) * sp + i];
        s += v;
        s2 += v * v;
      }
    const double m = 4.0 * sp;
    EXPECT_NEAR(s / m, 0.0, 1e-12);
    EXPECT_NEAR(s2 / m, 1.0, 1e-3);
  }
}

TEST(BatchNorm3d, RunningStatsUpdateOnBackwardWithMomentum) {
  Rng rng(4);
  BatchNorm3d<double> bn("bn", 2);
  init(bn, 1);
  std::vector<Parameter<double>*> params;
  bn.collect(params);
  const auto x = random_tensor({3, 2, 2, 2, 2}, rng, 0.0, 4.0);
  Tape<double> tape;
  Context<double> ctx{Mode::train, &tape, nullptr};
  const auto y = bn.forward(x, ctx);
  EXPECT_EQ(params[2]->value[0], 0.0);  // forward alone leaves running stats alone
  bn.backward(Tensor<double>(y.shape(), 0.0), tape);
  const std::size_t sp = x.spatial();
  for (int c = 0; c < 2; ++c) {
    std::vector<double> vals;
    for (int b = 0; b < 3; ++b)
      for (std::size_t i = 0; i < sp; ++i) vals.push_back(x[(static_cast<std::size_t>(b) * 2 + c) * sp + i]);
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= vals.size();
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= (vals.size() - 1);
    EXPECT_NEAR(params[2]->value[c], 0.1 * mean, 1e-12);
    EXPECT_NEAR(params[3]->value[c], 0.9 + 0.1 * var, 1e-12);
  }
}

TEST(BatchNorm3d, EvalModeUsesRunningStats) {
  Rng rng(5);
  BatchNorm3d<double> bn("bn", 2);
  init(bn, 1);
  std::vector<Parameter<double>*> params;
  bn.collect(params);
  params[0]->value[1] = 2.0;
  params[1]->value[1] = 0.5;
  params[2]->value[1] = 1.0;
  params[3]->value[1] = 4.0;
  const auto x = random_tensor({1, 2, 2, 2, 2}, rng);
  Context<double> ctx;
  const auto y = bn.forward(x, ctx);
  for (std::size_t i = 8; i < 16; ++i) EXPECT_NEAR(y[i], (x[i] - 1.0) / std::sqrt(4.0 + 1e-5) * 2.0 + 0.5, 1e-12);
}

TEST(BatchNorm3d, GradientsInBothModes) {
  Rng rng(6);
  BatchNorm3d<double> bn("bn", 3);
  init(bn, 2);
  std::vector<Parameter<double>*> params;
  bn.collect(params);
  for (int c = 0; c < 3; ++c) {
    params[0]->value[c] = rng.uniform(0.5, 1.5);
    params[1]->value[c] = rng.uniform(-0.5, 0.5);
  }
  check_gradients(bn, random_tensor({3, 3, 2, 3, 2}, rng), Mode::train, 20, 1e-5);
  check_gradients(bn, random_tensor({2, 3, 2, 2, 2}, rng), Mode::eval, 21);
}

TEST(Pooling, MaxPoolShapeAndGradient) {
  Rng rng(7);
  MaxPool3d<double> pool;
  const auto x = random_tensor({2, 2, 7, 6, 5}, rng);
  Context<double> ctx;
  const auto y = pool.forward(x, ctx);
  EXPECT_EQ(y.shape(), (std::vector<int>{2, 2, 4, 3, 3}));
  // First output covers input [0,1]^3 (padding excluded).
  double m = -1e9;
  for (int z = 0; z < 2; ++z)
    for (int yy = 0; yy < 2; ++yy)
      for (int xx = 0; xx < 2; ++xx) m = std::max(m, x[(z * 6 + yy) * 5 + xx]);
  EXPECT_EQ(y[0], m);
  check_gradients(pool, x, Mode::train, 30);
}

TEST(Pooling, AvgPoolCeilModeDividesByClippedWindow) {
  Rng rng(8);
  AvgPool3d<double> pool;
  const auto x = random_tensor({1, 1, 3, 3, 3}, rng);
  Context<double> ctx;
  const auto y = pool.forward(x, ctx);
  ASSERT_EQ(y.shape(), (std::vector<int>{1, 1, 2, 2, 2}));
  EXPECT_NEAR(y[7], x[26], 1e-15);
  EXPECT_NEAR(y[1], (x[2] + x[5] + x[11] + x[14]) / 4.0, 1e-15);
  check_gradients(pool, random_tensor({2, 2, 5, 4, 3}, rng), Mode::train, 31);
}

TEST(Pooling, GlobalAveragePool) {
  Rng rng(9);
  GlobalAvgPool<double> pool;
  const auto x = random_tensor({2, 3, 2, 2, 3}, rng);
  Context<double> ctx;
  const auto y = pool.forward(x, ctx);
  ASSERT_EQ(y.shape(), (std::vector<int>{2, 3}));
  double s = 0;
  for (int i = 0; i < 12; ++i) s += x[12 + i];
  EXPECT_NEAR(y[1], s / 12.0, 1e-15);
  check_gradients(pool, x, Mode::train, 32);
}

TEST(Linear, ForwardAndGradients) {
  Rng rng(10);
  Linear<double> lin("fc", 4, 3);
  init(lin, 3);
  const auto x = random_tensor({5, 4}, rng);
  Context<double> ctx;
  const auto y = lin.forward(x, ctx);
  for (int r = 0; r < 5; ++r)
    for (int o = 0; o < 3; ++o) {
      double s = lin.bias().value[o];
      for (int i = 0; i < 4; ++i) s += x[r * 4 + i] * lin.weight().value[o * 4 + i];
      EXPECT_NEAR(y[r * 3 + o], s, 1e-14);
    }
  check_gradients(lin, x, Mode::train, 33);
}

TEST(Relu, ForwardAndGradient) {
  Rng rng(11);
  Relu<double> relu;
  const auto x = random_tensor({2, 2, 2, 2, 2}, rng);
  Context<double> ctx;
  const auto y = relu.forward(x, ctx);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], std::max(0.0, x[i]));
  check_gradients(relu, x, Mode::train, 34);
}

TEST(Dropout, EvalIsIdentityTrainScalesSurvivors) {
  Rng data(12);
  Dropout<double> drop(0.25);
  const auto x = random_tensor({1, 4000}, data, 1.0, 2.0);
  Context<double> eval_ctx;
  const auto same = drop.forward(x, eval_ctx);
  EXPECT_EQ(same.values()[17], x.values()[17]);

  Rng rng(13);
  Tape<double> tape;
  Context<double> ctx{Mode::train, &tape, &rng};
  const auto y = drop.forward(x, ctx);
  int zeros = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] == 0.0) ++zeros;
    else EXPECT_NEAR(y[i], x[i] / 0.75, 1e-15);
  }
  EXPECT_NEAR(zeros / 4000.0, 0.25, 0.03);
  const auto dx = drop.backward(Tensor<double>(x.shape(), 1.0), tape);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(dx[i], y[i] == 0.0 ? 0.0 : 1.0 / 0.75);
}

TEST(Blocks, BasicBlockGradientsWithAndWithoutDownsample) {
  Rng rng(14);
  BasicBlock<double> same("b", 2, 2, 1);
  init(same, 1);
  check_gradients(same, random_tensor({2, 2, 4, 4, 4}, rng), Mode::train, 40, 1e-5);
  BasicBlock<double> down("d", 2, 3, 2);
  init(down, 2);
  check_gradients(down, random_tensor({2, 2, 5, 4, 4}, rng), Mode::train, 41, 1e-5);
  check_gradients(down, random_tensor({1, 2, 4, 4, 4}, rng), Mode::eval, 42, 1e-5);
}

TEST(Blocks, DenseBlockConcatenatesAndDifferentiates) {
  Rng rng(15);
  DenseBlock<double> block("db", 3, 2, 2, 4);
  init(block, 3);
  EXPECT_EQ(block.out_channels(), 7);
  const auto x = random_tensor({2, 3, 3, 3, 3}, rng);
  Context<double> ctx;
  const auto y = block.forward(x, ctx);
  EXPECT_EQ(y.dim(1), 7);
  // The input passes through unchanged as the leading channels.
  for (std::size_t i = 0; i < 81; ++i) EXPECT_EQ(y[i], x[i]);
  check_gradients(block, x, Mode::train, 43, 1e-5);
}

TEST(Channels, ConcatSplitRoundTrip) {
  Rng rng(16);
  const auto a = random_tensor({2, 3, 2, 2, 1}, rng), b = random_tensor({2, 1, 2, 2, 1}, rng);
  const auto c = concat_channels(a, b);
  Tensor<double> a2, b2;
  split_channels(c, 3, a2, b2);
  EXPECT_EQ(a2.values()[5], a.values()[5]);
  EXPECT_EQ(std::vector<double>(a2.values().begin(), a2.values().end()),
            std::vector<double>(a.values().begin(), a.values().end()));
  EXPECT_EQ(std::vector<double>(b2.values().begin(), b2.values().end()),
            std::vector<double>(b.values().begin(), b.values().end()));
}

TEST(Initialization, KaimingScaleAndNameKeyedStreams) {
  Conv3d<double> c1("x.conv", 8, 16, 3, 1, 1), c2("x.conv", 8, 16, 3, 1, 1), c3("y.conv", 8, 16, 3, 1, 1);
  init(c1, 5);
  init(c2, 5);
  init(c3, 5);
  EXPECT_EQ(c1.weight().value.values()[100], c2.weight().value.values()[100]);
  EXPECT_NE(c1.weight().value.values()[100], c3.weight().value.values()[100]);
  double s2 = 0;
  for (double v : c1.weight().value.values()) s2 += v * v;
  const double sd = std::sqrt(s2 / c1.weight().value.size());
  EXPECT_NEAR(sd, std::sqrt(2.0 / (16 * 27)), 0.01);

  Linear<double> lin("fc", 25, 4);
  init(lin, 1);
  for (double v : lin.weight().value.values()) EXPECT_LE(std::abs(v), 0.2);
}

}  // namespace
}  // namespace softcbm::nn
