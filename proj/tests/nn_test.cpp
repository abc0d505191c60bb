#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "cfusion/nn.hpp"

using namespace cfusion;
using namespace cfusion::nn;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(s));
  for (double& v : t.data) v = rng.normal(0, sd);
  return t;
}

std::vector<int> random_labels(int n, int classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> y;
  for (int i = 0; i < n; ++i) y.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  return y;
}

Param& param(Net& net, const std::string& name) {
  for (auto& p : net.params())
    if (p.name == name) return p;
  throw std::runtime_error("no param " + name);
}

// Direct stride-1 convolution; `pad` zeros on the left.
Tensor conv1d_oracle(const Tensor& x, const std::vector<double>& w, const std::vector<double>& b, int k, int f,
                     int lo, int pad) {
  const int n = x.shape[0], l = x.shape[1], c = x.shape[2];
  Tensor y({n, lo, f});
  for (int s = 0; s < n; ++s)
    for (int t = 0; t < lo; ++t)
      for (int o = 0; o < f; ++o) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int j = 0; j < k; ++j) {
          const int src = t + j - pad;
          if (src < 0 || src >= l) continue;
          for (int ch = 0; ch < c; ++ch)
            acc += x.data[static_cast<std::size_t>((s * l + src) * c + ch)] *
                   w[static_cast<std::size_t>((j * c + ch) * f + o)];
        }
        y.data[static_cast<std::size_t>((s * lo + t) * f + o)] = acc;
      }
  return y;
}

}  // namespace

TEST(Forward, DenseIdentityPassesInputThrough) {
  Net net;
  const int x = net.input({3});
  net.add(dense(3), x);
  auto& k = param(net, "dense_1/kernel");
  std::fill(k.value.begin(), k.value.end(), 0.0);
  for (int i = 0; i < 3; ++i) k.value[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  const Tensor in({2, 3}, {1, -2, 3, 0.5, 0, -7});
  EXPECT_EQ(net.forward({in}, RunMode::eval()), in);
}

TEST(Forward, SoftmaxOfZerosIsUniform) {
  Net net;
  net.add(simple(LayerKind::Softmax), net.input({4}));
  const auto p = net.forward({Tensor({1, 4})}, RunMode::eval());
  for (double v : p.data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  Net net;
  const int x = net.input({6});
  net.add(simple(LayerKind::Softmax), net.add(dense(5), x));
  const auto p = net.forward({random_tensor({7, 6}, 1, 30.0)}, RunMode::eval());
  for (int i = 0; i < 7; ++i) EXPECT_NEAR(p.mat().row(i).sum(), 1.0, 1e-12);
}

TEST(Forward, Conv1DFiniteDifferenceKernelOnRamp) {
  Net net;
  net.add(conv1d(1, 3, false), net.input({6, 1}));
  auto& k = param(net, "conv1d_1/kernel");
  k.value = {1, 0, -1};
  Tensor ramp({1, 6, 1}, {0, 1, 2, 3, 4, 5});
  const auto y = net.forward({ramp}, RunMode::eval());
  // out[t] = x[t-1] - x[t+1] with zero padding on both ends
  EXPECT_EQ(y.data, (std::vector<double>{-1, -2, -2, -2, -2, 4}));
}

TEST(Forward, Conv1DMatchesDirectConvolution) {
  for (Padding pad : {Padding::Same, Padding::Valid}) {
    for (int k : {1, 2, 5, 7}) {
      Net net(k);
      net.add(conv1d(3, k, false, 0.0, pad), net.input({11, 2}));
      auto& b = param(net, "conv1d_1/bias");
      b.value = {0.1, -0.2, 0.3};
      const auto x = random_tensor({2, 11, 2}, static_cast<std::uint64_t>(k));
      const auto y = net.forward({x}, RunMode::eval());
      const int lo = pad == Padding::Same ? 11 : 11 - k + 1;
      const auto want = conv1d_oracle(x, param(net, "conv1d_1/kernel").value, b.value, k, 3, lo,
                                      pad == Padding::Same ? (k - 1) / 2 : 0);
      ASSERT_EQ(y.shape, want.shape);
      for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data[i], want.data[i], 1e-12);
    }
  }
}

TEST(Forward, Conv2DMatchesDirectConvolution) {
  Net net(3);
  net.add(conv2d(2, 3, false), net.input({5, 4, 2}));
  const auto x = random_tensor({2, 5, 4, 2}, 4);
  const auto y = net.forward({x}, RunMode::eval());
  const auto& w = param(net, "conv2d_1/kernel").value;
  for (int s = 0; s < 2; ++s)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 4; ++j)
        for (int o = 0; o < 2; ++o) {
          double acc = 0;
          for (int di = 0; di < 3; ++di)
            for (int dj = 0; dj < 3; ++dj)
              for (int c = 0; c < 2; ++c) {
                const int si = i + di - 1, sj = j + dj - 1;
                if (si < 0 || si >= 5 || sj < 0 || sj >= 4) continue;
                acc += x.data[static_cast<std::size_t>(((s * 5 + si) * 4 + sj) * 2 + c)] *
                       w[static_cast<std::size_t>(((di * 3 + dj) * 2 + c) * 2 + o)];
              }
          EXPECT_NEAR(y.data[static_cast<std::size_t>(((s * 5 + i) * 4 + j) * 2 + o)], acc, 1e-12);
        }
}

TEST(Forward, MaxPoolMatchesBruteForceUpTo8x8) {
  for (int h = 1; h <= 8; ++h) {
    for (int w = 1; w <= 8; ++w) {
      for (int p = 1; p <= std::min(h, w); ++p) {
        Net net;
        net.add(maxpool2d(p), net.input({h, w, 2}));
        const auto x = random_tensor({2, h, w, 2}, static_cast<std::uint64_t>(h * 100 + w * 10 + p));
        const auto y = net.forward({x}, RunMode::eval());
        const int ho = h / p, wo = w / p;
        ASSERT_EQ(y.shape, (Shape{2, ho, wo, 2}));
        for (int s = 0; s < 2; ++s)
          for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
              for (int c = 0; c < 2; ++c) {
                double m = -INFINITY;
                for (int a = i * p; a < i * p + p; ++a)
                  for (int b = j * p; b < j * p + p; ++b)
                    m = std::max(m, x.data[static_cast<std::size_t>(((s * h + a) * w + b) * 2 + c)]);
                EXPECT_EQ(y.data[static_cast<std::size_t>(((s * ho + i) * wo + j) * 2 + c)], m);
              }
      }
      // 1-D pooling over the first axis
      Net net1;
      const int p = std::max(1, h / 3);
      net1.add(maxpool1d(p), net1.input({h, w}));
      const auto x = random_tensor({1, h, w}, static_cast<std::uint64_t>(h * 7 + w));
      const auto y = net1.forward({x}, RunMode::eval());
      for (int i = 0; i < h / p; ++i)
        for (int c = 0; c < w; ++c) {
          double m = -INFINITY;
          for (int a = i * p; a < i * p + p; ++a) m = std::max(m, x.data[static_cast<std::size_t>(a * w + c)]);
          EXPECT_EQ(y.data[static_cast<std::size_t>(i * w + c)], m);
        }
    }
  }
}

TEST(Forward, InputShapeMismatchNamesLayer) {
  Net net;
  net.input({4, 1}, "signal");
  try {
    net.forward({Tensor({2, 5, 1})}, RunMode::eval());
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("signal"), std::string::npos);
  }
}

TEST(Forward, BuildTimeShapeErrors) {
  Net net;
  const int x = net.input({3, 3, 1});
  EXPECT_THROW(net.add(maxpool2d(4), x), ShapeError);
  EXPECT_THROW(net.add(conv1d(2, 3), x), ShapeError);
  const int a = net.input({3});
  const int b = net.input({4});
  EXPECT_THROW(net.add(simple(LayerKind::Add), {a, b}), ShapeError);
  EXPECT_EQ(net.node(net.add(simple(LayerKind::Concat), {a, b})).out_shape, (Shape{7}));
}

TEST(Forward, DropoutEvalIsIdentityAndTrainPreservesMean) {
  Net net;
  net.add(dropout(0.3), net.input({10000}));
  const Tensor ones({1, 10000}, 1.0);
  EXPECT_EQ(net.forward({ones}, RunMode::eval()), ones);
  Rng rng(7);
  const auto y = net.forward({ones}, RunMode::train(), &rng);
  double mean = 0;
  std::size_t zeros = 0;
  for (double v : y.data) mean += v, zeros += v == 0.0;
  mean /= 10000;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / 10000, 0.3, 0.02);
}

TEST(Forward, BatchNormUsesBatchStatsInTrainingAndRunningStatsInEval) {
  Net net;
  net.add(simple(LayerKind::BatchNorm), net.input({2}));
  const auto x = random_tensor({64, 2}, 3, 5.0);
  const auto y = net.forward({x}, RunMode::train_no_dropout());
  const auto m = y.mat();
  EXPECT_NEAR(m.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR((m.col(0).array() - m.col(0).mean()).square().mean(), 25.0 / (25.0 + kNormEps), 1.0);
  // running stats moved (1 - momentum) of the way from (0, 1)
  const auto& rm = param(net, "batchnorm_1/moving_mean").value;
  EXPECT_NEAR(rm[0], (1 - kBatchNormMomentum) * x.mat().col(0).mean(), 1e-12);
  // fresh running stats: eval output is x / sqrt(1 + eps)
  Net fresh;
  fresh.add(simple(LayerKind::BatchNorm), fresh.input({2}));
  const auto e = fresh.forward({x}, RunMode::eval());
  EXPECT_NEAR(e.data[0], x.data[0] / std::sqrt(1 + kNormEps), 1e-12);
}

// ---------------------------------------------------------------------------

TEST(Backward, WithoutForwardIsStateError) {
  Net net;
  net.add(dense(2), net.input({2}));
  EXPECT_THROW(net.backward(Tensor({1, 2})), StateError);
}

TEST(Backward, ZeroLossGradientLeavesOnlyRegularization) {
  Net net(2);
  const int x = net.input({4});
  const int h = net.add(dense(3, true, 0.01, 0.02), x);
  net.add(dense(2, false, 0.5), h);
  net.forward({random_tensor({5, 4}, 1)}, RunMode::eval());
  net.zero_grad();
  net.backward(Tensor({5, 2}));
  for (const auto& p : net.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double w = p.value[i];
      const double want = 2 * p.l2 * w + p.l1 * ((w > 0) - (w < 0));
      EXPECT_DOUBLE_EQ(p.grad[i], want) << p.name;
    }
  }
}

TEST(Backward, DenseSquaredErrorClosedForm) {
  Net net;
  net.add(dense(2), net.input({2}));
  param(net, "dense_1/kernel").value = {1, 2, 3, 4};
  param(net, "dense_1/bias").value = {0.5, -0.5};
  const Tensor x({2, 2}, {1, 0, 2, -1});
  const Tensor target({2, 2}, {0, 0, 1, 1});
  const auto y = net.forward({x}, RunMode::eval());
  // L = 1/2 ||Y - T||^2, dL/dY = Y - T
  Tensor delta(y.shape);
  for (std::size_t i = 0; i < y.size(); ++i) delta.data[i] = y.data[i] - target.data[i];
  net.zero_grad();
  net.backward(delta);
  // Y = [[1.5, 1.5], [-0.5, -0.5]]; delta = [[1.5, 1.5], [-1.5, -1.5]]
  // dW = X^T delta = [[1*1.5 + 2*-1.5, ...], [0*1.5 + -1*-1.5, ...]]
  EXPECT_EQ(param(net, "dense_1/kernel").grad, (std::vector<double>{-1.5, -1.5, 1.5, 1.5}));
  EXPECT_EQ(param(net, "dense_1/bias").grad, (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, SoftmaxCrossEntropyLogitIdentity) {
  Net net(1);
  net.add(simple(LayerKind::Softmax), net.add(dense(4), net.input({3})));
  const auto x = random_tensor({6, 3}, 2);
  const auto y = random_labels(6, 4, 3);
  const auto p = net.forward({x}, RunMode::eval());
  // generic path: dCE/dp = -y / (N p) through the softmax Jacobian
  Tensor dp(p.shape);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto at = i * 4 + static_cast<std::size_t>(y[i]);
    dp.data[at] = -1.0 / (6.0 * p.data[at]);
  }
  net.zero_grad();
  net.backward(dp);
  const auto generic = param(net, "dense_1/bias").grad;
  const auto ce = cross_entropy(p, y);
  net.zero_grad();
  net.backward_logits(ce.grad_logits);
  const auto fused = param(net, "dense_1/bias").grad;
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(generic[i], fused[i], 1e-9);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      EXPECT_DOUBLE_EQ(ce.grad_logits.data[i * 4 + c], (p.data[i * 4 + c] - (y[i] == static_cast<int>(c))) / 6.0);
}

// ---------------------------------------------------------------------------

namespace {

void expect_grad_ok(const Net& net, const std::vector<Tensor>& x, const std::vector<int>& y) {
  const auto r = grad_check(net, x, y, 1e-5, 1e-4, {}, 64);
  for (const auto& p : r.params) EXPECT_LT(p.max_rel_error, 1e-4) << p.name;
  EXPECT_TRUE(r.pass);
}

}  // namespace

TEST(GradCheck, DenseSoftmaxWithRegularization) {
  Net net(1);
  const int x = net.input({5});
  const int h = net.add(dense(6, true, 1e-3, 0.01), x);
  net.add(simple(LayerKind::Softmax), net.add(dense(3, false, 1e-2), h));
  expect_grad_ok(net, {random_tensor({8, 5}, 1)}, random_labels(8, 3, 2));
}

TEST(GradCheck, Conv1DBatchNormMaxPool) {
  Net net(2);
  int h = net.input({12, 2});
  h = net.add(conv1d(3, 3, true, 1e-3), h);
  h = net.add(simple(LayerKind::BatchNorm), h);
  h = net.add(maxpool1d(2), h);
  h = net.add(conv1d(2, 2, false, 0.0, Padding::Valid), h);
  h = net.add(simple(LayerKind::Flatten), h);
  net.add(simple(LayerKind::Softmax), net.add(dense(3), h));
  expect_grad_ok(net, {random_tensor({6, 12, 2}, 3)}, random_labels(6, 3, 4));
}

TEST(GradCheck, Conv2DMaxPool) {
  Net net(3);
  int h = net.input({6, 6, 1});
  h = net.add(conv2d(3, 3), h);
  h = net.add(maxpool2d(2), h);
  h = net.add(simple(LayerKind::BatchNorm), h);
  h = net.add(simple(LayerKind::Flatten), h);
  net.add(simple(LayerKind::Softmax), net.add(dense(2), h));
  expect_grad_ok(net, {random_tensor({5, 6, 6, 1}, 5)}, random_labels(5, 2, 6));
}

TEST(GradCheck, AttentionBlockWithResidualAndLayerNorm) {
  Net net(4);
  const int x = net.input({5, 4});
  const int a = net.add(attention(2, 3), x);
  const int r = net.add(simple(LayerKind::LayerNorm), net.add(simple(LayerKind::Add), {x, a}));
  const int f = net.add(dense(4), net.add(dense(6, true), r));
  const int o = net.add(simple(LayerKind::LayerNorm), net.add(simple(LayerKind::Add), {r, f}));
  net.add(simple(LayerKind::Softmax), net.add(dense(3), net.add(simple(LayerKind::Flatten), o)));
  expect_grad_ok(net, {random_tensor({4, 5, 4}, 7)}, random_labels(4, 3, 8));
}

TEST(GradCheck, ConcatOfTwoInputsWithDropoutOff) {
  Net net(5);
  const int a = net.add(dense(3, true), net.input({4}));
  const int b = net.add(dense(2, true), net.input({3}));
  const int c = net.add(dropout(0.5), net.add(simple(LayerKind::Concat), {a, b}));
  net.add(simple(LayerKind::Softmax), net.add(dense(2, false, 0.0, 0.01), c));
  expect_grad_ok(net, {random_tensor({7, 4}, 9), random_tensor({7, 3}, 10)}, random_labels(7, 2, 11));
}

TEST(GradCheck, StandaloneReLU) {
  Net net(6);
  const int h = net.add(simple(LayerKind::ReLU), net.add(dense(5), net.input({3})));
  net.add(simple(LayerKind::Softmax), net.add(dense(2), h));
  expect_grad_ok(net, {random_tensor({6, 3}, 12)}, random_labels(6, 2, 13));
}

// ---------------------------------------------------------------------------

TEST(Adam, ZeroGradientFreshMomentsLeavesParameters) {
  Net net(1);
  net.add(dense(3), net.input({2}));
  const Net before = net;
  net.zero_grad();
  adam_step(net, TrainConfig{});
  for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(net.params()[i].value, before.params()[i].value);
}

TEST(Adam, ConstantGradientStepApproachesLearningRate) {
  Net net;
  net.add(dense(1), net.input({1}));
  TrainConfig cfg;
  cfg.lr = 0.01;
  auto& w = param(net, "dense_1/kernel");
  // scalar recurrence: m_t/(1-b1^t) = g and v_t/(1-b2^t) = g^2 exactly, so
  // every step is lr * g / (|g| + eps)
  for (int t = 0; t < 200; ++t) {
    const double before = w.value[0];
    std::fill(w.grad.begin(), w.grad.end(), -3.0);
    adam_step(net, cfg);
    EXPECT_NEAR(w.value[0] - before, 0.01 * 3.0 / (3.0 + 1e-8), 1e-12);
  }
}

// ---------------------------------------------------------------------------

namespace {

struct Toy {
  Tensor x;
  std::vector<int> y;
};

Toy separable(int n, std::uint64_t seed) {
  Rng rng(seed);
  Toy t{Tensor({n, 2}), {}};
  for (int i = 0; i < n; ++i) {
    const int c = i % 2;
    t.x.data[static_cast<std::size_t>(2 * i)] = rng.normal(c ? 2.0 : -2.0, 0.7);
    t.x.data[static_cast<std::size_t>(2 * i + 1)] = rng.normal(0, 1);
    t.y.push_back(c);
  }
  return t;
}

Net small_classifier(std::uint64_t seed) {
  Net net(seed);
  const int h = net.add(dense(8, true), net.input({2}));
  net.add(simple(LayerKind::Softmax), net.add(dense(2), net.add(dropout(0.1), h)));
  return net;
}

}  // namespace

TEST(Train, SeparableToyReachesHighAccuracy) {
  const auto tr = separable(200, 1), va = separable(60, 2);
  auto net = small_classifier(3);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 0.01;
  cfg.patience = 50;
  const auto h = train(net, {tr.x}, tr.y, {va.x}, va.y, cfg);
  EXPECT_GE(accuracy(argmax_rows(net.predict({tr.x})), tr.y), 0.95);
  EXPECT_EQ(h.best_val_acc, h.epochs[static_cast<std::size_t>(h.best_epoch - 1)].val_acc);
}

TEST(Train, ZeroLearningRateChangesNothing) {
  const auto tr = separable(40, 1), va = separable(20, 2);
  auto net = small_classifier(4);
  const Net before = net;
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 5;
  cfg.patience = 10;
  const auto h = train(net, {tr.x}, tr.y, {va.x}, va.y, cfg);
  for (std::size_t i = 0; i < net.params().size(); ++i) EXPECT_EQ(net.params()[i].value, before.params()[i].value);
  for (const auto& e : h.epochs) EXPECT_EQ(e.val_loss, h.epochs[0].val_loss);
}

TEST(Train, EarlyStoppingTruncatesHistory) {
  const auto tr = separable(40, 5), va = separable(20, 6);
  auto net = small_classifier(5);
  TrainConfig cfg;
  cfg.lr = 0.0;  // validation accuracy can never improve after epoch 1
  cfg.epochs = 20;
  cfg.patience = 3;
  const auto h = train(net, {tr.x}, tr.y, {va.x}, va.y, cfg);
  EXPECT_TRUE(h.early_stopped);
  EXPECT_EQ(h.epochs.size(), 4u);
  EXPECT_EQ(h.best_epoch, 1);
}

TEST(Train, IdenticalSeedsAreBitwiseReproducible) {
  const auto tr = separable(64, 1), va = separable(20, 2);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 9;
  auto a = small_classifier(1), b = small_classifier(1);
  train(a, {tr.x}, tr.y, {va.x}, va.y, cfg);
  train(b, {tr.x}, tr.y, {va.x}, va.y, cfg);
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
}

TEST(Train, NanLossAbortsWithEpochAndBatch) {
  auto tr = separable(40, 1);
  tr.x.data[3] = NAN;
  auto net = small_classifier(1);
  try {
    train(net, {tr.x}, tr.y, {}, {}, TrainConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
  }
}

TEST(Train, FullBatchDescentOnConvexInstanceIsMonotone) {
  const auto tr = separable(50, 3);
  Net net(2);
  net.add(simple(LayerKind::Softmax), net.add(dense(2), net.input({2})));
  double prev = INFINITY;
  for (int step = 0; step < 100; ++step) {
    const auto p = net.forward({tr.x}, RunMode::eval());
    const auto ce = cross_entropy(p, tr.y);
    EXPECT_LE(ce.value, prev + 1e-15);
    prev = ce.value;
    net.zero_grad();
    net.backward_logits(ce.grad_logits);
    for (auto& prm : net.params())
      for (std::size_t i = 0; i < prm.value.size(); ++i) prm.value[i] -= 0.05 * prm.grad[i];
  }
}

TEST(Train, FrozenLayersKeepTheirWeights) {
  const auto tr = separable(40, 1), va = separable(20, 2);
  auto net = small_classifier(6);
  net.freeze(net.find("dense_1"));
  const auto before = param(net, "dense_1/kernel").value;
  TrainConfig cfg;
  cfg.epochs = 3;
  train(net, {tr.x}, tr.y, {va.x}, va.y, cfg);
  EXPECT_EQ(param(net, "dense_1/kernel").value, before);
  EXPECT_NE(param(net, "dense_3/kernel").value, small_classifier(6).params()[2].value);
}

// ---------------------------------------------------------------------------

TEST(Serialize, RoundTripIsBitwiseAtFloatPrecision) {
  Net net(8);
  int h = net.input({8, 1}, "signal");
  h = net.add(conv1d(2, 3, true, 1e-3), h);
  h = net.add(simple(LayerKind::BatchNorm), h);
  h = net.add(simple(LayerKind::Flatten), h);
  net.add(simple(LayerKind::Softmax), net.add(dense(3), h));
  net.freeze(net.find("conv1d_1"));
  const auto dir = std::filesystem::temp_directory_path() / "cfusion_nn_serialize";
  std::filesystem::remove_all(dir);
  save_net(net, dir / "a");
  const Net loaded = load_net(dir / "a");
  ASSERT_EQ(loaded.params().size(), net.params().size());
  for (std::size_t i = 0; i < net.params().size(); ++i)
    for (std::size_t k = 0; k < net.params()[i].value.size(); ++k)
      EXPECT_EQ(loaded.params()[i].value[k], static_cast<double>(static_cast<float>(net.params()[i].value[k])));
  EXPECT_TRUE(loaded.node(loaded.find("conv1d_1")).frozen);
  save_net(loaded, dir / "b");
  EXPECT_EQ(io::read_file(dir / "a.bin"), io::read_file(dir / "b.bin"));
  auto ja = nlohmann::json::parse(io::read_file(dir / "a.json"));
  auto jb = nlohmann::json::parse(io::read_file(dir / "b.json"));
  ja.erase("blob"), jb.erase("blob");
  EXPECT_EQ(ja, jb);
  std::filesystem::remove_all(dir);
}
