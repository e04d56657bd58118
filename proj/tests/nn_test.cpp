#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "support.hpp"
#include "voxcount/nn/checkpoint.hpp"
#include "voxcount/nn/network.hpp"

using namespace voxcount;
using namespace voxcount::nn;

namespace {

Tensor<double>& param(Layer<double>& l, std::size_t i) { return *l.parameters().at(i).tensor; }

}  // namespace

TEST(Xavier, BoundsAndMean) {
  EXPECT_DOUBLE_EQ(xavier_bound(3, 3), 1.0);
  EXPECT_NEAR(xavier_bound(512, 64), 0.10206207261596575, 1e-12);
  const auto small = xavier_init(3, 3, 1);
  ASSERT_EQ(small.size(), 9u);
  for (double v : small) EXPECT_LE(std::abs(v), 1.0);

  const auto big = xavier_init(1000, 1000, 2);
  const double b = xavier_bound(1000, 1000);
  double mean = 0;
  for (double v : big) {
    ASSERT_LE(std::abs(v), b);
    mean += v / static_cast<double>(big.size());
  }
  EXPECT_LE(std::abs(mean), 3 * b / std::sqrt(12.0 * 1e6));
  EXPECT_EQ(xavier_init(4, 5, 9), xavier_init(4, 5, 9));
  EXPECT_THROW(xavier_init(0, 5, 1), InputError);
}

TEST(Conv2d, ScalarKernelAndBiasOnly) {
  Conv2d<double> conv(1, 1, 1, 1);
  param(conv, 0).data = {2.0};
  param(conv, 1).data = {0.0};
  Rng rng(1);
  const auto x = vtest::random_tensor(rng, {1, 1, 4, 5});
  const auto y = conv.forward(x, false);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.data[i], 2 * x.data[i]);

  Conv2d<double> c3(2, 3, 3, 3);
  c3.initialize(rng);
  param(c3, 1).data = {0.5, -1.0, 2.0};
  const auto z = c3.forward(Tensor<double>({1, 2, 4, 4}), false);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(z.data[o * 16 + i], param(c3, 1).data[o]);
}

TEST(Conv2d, MatchesNaiveOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(4);
    const std::size_t h = 1 + rng.below(9), w = 1 + rng.below(9);
    const std::size_t kh = 1 + 2 * rng.below(3), kw = 1 + 2 * rng.below(3);
    const std::size_t batch = 1 + rng.below(3);
    Conv2d<double> conv(cin, cout, kh, kw);
    conv.initialize(rng);
    for (auto& v : param(conv, 1).data) v = rng.uniform(-1, 1);
    const auto x = vtest::random_tensor(rng, {batch, cin, h, w});
    const auto y = conv.forward(x, false);
    ASSERT_EQ(y.shape, (Shape{batch, cout, h, w}));
    for (std::size_t b = 0; b < batch; ++b) {
      const std::vector<double> in(x.data.begin() + b * cin * h * w, x.data.begin() + (b + 1) * cin * h * w);
      const auto ref = vtest::naive_conv2d(in, cin, h, w, param(conv, 0).data, cout, kh, kw, param(conv, 1).data);
      const std::vector<double> got(y.data.begin() + b * cout * h * w, y.data.begin() + (b + 1) * cout * h * w);
      EXPECT_LE(vtest::relative_error(got, ref), 1e-9);
    }
  }
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Conv2d<double> conv(2, 3, 3, 3);
  try {
    conv.output_shape({4, 8, 8});
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[4,8,8]"), std::string::npos);
    EXPECT_NE(msg.find("[3,2,3,3]"), std::string::npos);
  }
  EXPECT_THROW(Conv2d<double>(1, 1, 2, 3), InputError);
}

TEST(Conv2d, FiniteDifferences) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Conv2d<double> conv(1 + rng.below(2), 1 + rng.below(3), 1 + 2 * rng.below(2), 1 + 2 * rng.below(3));
    conv.initialize(rng);
    const auto cin = param(conv, 0).dim(1);
    const auto r = vtest::check_layer_gradients(conv, vtest::random_tensor(rng, {2, cin, 1 + rng.below(5), 1 + rng.below(5)}), rng);
    EXPECT_LE(r.worst(), 1e-6);
  }
}

TEST(MaxPool, Examples) {
  MaxPool2d<double> pool;
  const Tensor<double> x({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(pool.forward(x, false).data, (Buffer<double>{4}));
  const auto g = pool.backward(Tensor<double>({1, 1, 1, 1}, std::vector<double>{1}));
  EXPECT_EQ(g.data, (Buffer<double>{0, 0, 0, 1}));

  const auto c = pool.forward(Tensor<double>({1, 2, 4, 6}, 0.7), false);
  EXPECT_EQ(c.shape, (Shape{1, 2, 2, 3}));
  for (double v : c.data) EXPECT_EQ(v, 0.7);
}

TEST(MaxPool, OddSizesPadWithNegativeInfinity) {
  MaxPool2d<double> pool;
  const Tensor<double> x({1, 1, 3, 3}, std::vector<double>{-1, -2, -3, -4, -5, -6, -7, -8, -9});
  const auto y = pool.forward(x, false);
  EXPECT_EQ(y.shape, (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.data, (Buffer<double>{-1, -3, -7, -9}));
}

TEST(MaxPool, FiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    MaxPool2d<double> pool;
    const auto x = vtest::separated_tensor(rng, {2, 1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(6)});
    EXPECT_LE(vtest::check_layer_gradients(pool, x, rng).worst(), 1e-4);
  }
}

TEST(LeakyRelu, Examples) {
  LeakyRelu<double> act(0.1);
  const auto y = act.forward(Tensor<double>({1, 2}, std::vector<double>{3.0, -2.0}), false);
  EXPECT_DOUBLE_EQ(y.data[0], 3.0);
  EXPECT_DOUBLE_EQ(y.data[1], -0.2);
  act.forward(Tensor<double>({1, 1}, std::vector<double>{-1.0}), false);
  EXPECT_DOUBLE_EQ(act.backward(Tensor<double>({1, 1}, std::vector<double>{1.0})).data[0], 0.1);
  EXPECT_THROW(LeakyRelu<double>(0.0), InputError);
}

TEST(LeakyRelu, FiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    LeakyRelu<double> act(rng.uniform(0.01, 0.5));
    const auto x = vtest::separated_tensor(rng, {3, 1 + rng.below(20)}, 0.05);
    EXPECT_LE(vtest::check_layer_gradients(act, x, rng).worst(), 1e-4);
  }
}

TEST(Dense, Examples) {
  Dense<double> d(3, 3);
  param(d, 0).data = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  param(d, 1).data = {0, 0, 0};
  const Tensor<double> x({1, 3}, std::vector<double>{0.5, -1, 2});
  EXPECT_EQ(d.forward(x, false).data, x.data);
  param(d, 1).data = {1, 2, 3};
  EXPECT_EQ(d.forward(Tensor<double>({1, 3}), false).data, (Buffer<double>{1, 2, 3}));
  EXPECT_THROW(d.output_shape({4}), InputError);
}

TEST(Dense, FiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Dense<double> d(1 + rng.below(8), 1 + rng.below(5));
    d.initialize(rng);
    for (auto& v : param(d, 1).data) v = rng.uniform(-1, 1);
    const auto in = param(d, 0).dim(0);
    EXPECT_LE(vtest::check_layer_gradients(d, vtest::random_tensor(rng, {1 + rng.below(4), in}), rng).worst(), 1e-6);
  }
}

TEST(Dropout, IdentityCases) {
  Rng rng(7);
  const auto x = vtest::random_tensor(rng, {4, 10});
  Dropout<double> none(0.0, 1);
  EXPECT_EQ(none.forward(x, true).data, x.data);
  Dropout<double> half(0.5, 1);
  EXPECT_EQ(half.forward(x, false).data, x.data);
  EXPECT_THROW(Dropout<double>(1.0), InputError);
  EXPECT_THROW(Dropout<double>(-0.1), InputError);
}

TEST(Dropout, PreservesExpectedValue) {
  Dropout<double> d(0.3, 8);
  const Tensor<double> x({1, 100000}, 2.0);
  const auto y = d.forward(x, true);
  double mean = 0;
  std::size_t zeros = 0;
  for (double v : y.data) {
    mean += v / static_cast<double>(y.size());
    zeros += v == 0.0;
  }
  EXPECT_NEAR(mean, 2.0, 0.02);
  EXPECT_NEAR(static_cast<double>(zeros) / y.size(), 0.3, 0.01);
}

TEST(Dropout, FiniteDifferencesWithFixedMask) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Dropout<double> d(rng.uniform(0.1, 0.6), 0);
    const std::uint64_t seed = rng.next_u64();
    const auto x = vtest::random_tensor(rng, {2, 1 + rng.below(12)});
    EXPECT_LE(vtest::check_layer_gradients(d, x, rng, true, [&] { d.reseed(seed); }).worst(), 1e-4);
    EXPECT_LE(vtest::check_layer_gradients(d, x, rng, false).worst(), 1e-4);
  }
}

TEST(Blstm, ZeroFixedPoint) {
  Blstm<double> l(3, 4);
  const auto y = l.forward(Tensor<double>({2, 5, 3}), false);
  EXPECT_EQ(y.shape, (Shape{2, 5, 8}));
  for (double v : y.data) EXPECT_EQ(v, 0.0);
}

TEST(Blstm, TimeReversalSwapsDirections) {
  Rng rng(10);
  Blstm<double> l(3, 4);
  l.initialize(rng);
  // Share parameters between directions.
  for (std::size_t w = 0; w < 3; ++w) l.param(1, w).data = l.param(0, w).data;
  const auto x = vtest::random_tensor(rng, {1, 6, 3});
  Tensor<double> rev(x.shape);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t f = 0; f < 3; ++f) rev.data[t * 3 + f] = x.data[(5 - t) * 3 + f];
  const auto y = l.forward(x, false);
  const auto yr = l.forward(rev, false);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t u = 0; u < 4; ++u) EXPECT_NEAR(y.data[t * 8 + u], yr.data[(5 - t) * 8 + 4 + u], 1e-14);
}

TEST(Blstm, FiniteDifferences) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Blstm<double> l(trial == 0 ? 8 : 1 + rng.below(5), trial == 0 ? 4 : 1 + rng.below(4));
    l.initialize(rng);
    for (std::size_t d = 0; d < 2; ++d)
      for (auto& v : l.param(d, 2).data) v = rng.uniform(-0.5, 0.5);
    const std::size_t f = l.param(0, 0).dim(0);
    const auto x = vtest::random_tensor(rng, {trial == 0 ? 1u : 2u, trial == 0 ? 5 : 1 + rng.below(6), f});
    EXPECT_LE(vtest::check_layer_gradients(l, x, rng).worst(), 1e-4);
  }
}

TEST(Blstm, RejectsNonFiniteInput) {
  Blstm<double> l(2, 2);
  Tensor<double> x({1, 3, 2});
  x.data[3] = std::nan("");
  EXPECT_THROW(l.forward(x, false), NumericError);
}

TEST(Mse, ExamplesAndGradient) {
  const Tensor<double> p({1, 2}, std::vector<double>{0.5, 0.5}), t({1, 2}, std::vector<double>{0.3, 0.2});
  EXPECT_NEAR(mse_loss(p, t).value, 0.065, 1e-15);
  EXPECT_EQ(mse_loss(t, t).value, 0.0);
  EXPECT_THROW(mse_loss(p, Tensor<double>({2})), InputError);

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto pred = vtest::random_tensor(rng, {1 + rng.below(5), 2});
    const auto target = vtest::random_tensor(rng, pred.shape, 0, 1);
    const auto g = mse_loss(pred, target).grad;
    std::vector<double> num(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double keep = pred.data[i];
      pred.data[i] = keep + 1e-5;
      const double up = mse_loss(pred, target).value;
      pred.data[i] = keep - 1e-5;
      const double down = mse_loss(pred, target).value;
      pred.data[i] = keep;
      num[i] = (up - down) / 2e-5;
    }
    EXPECT_LE(vtest::grad_relative_error(g.data, num), 1e-4);
    EXPECT_GE(mse_loss(pred, target).value, 0.0);
  }
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> w({3}, std::vector<double>{1, 2, 3});
  w.enable_grad();
  Adam<double> adam;
  for (int i = 0; i < 5; ++i) adam.step({{"w", &w}});
  EXPECT_EQ(w.data, (Buffer<double>{1, 2, 3}));
}

TEST(Adam, FirstStepIsLearningRate) {
  Tensor<double> w({1}, std::vector<double>{0.0});
  w.enable_grad();
  w.grad = {1.0};
  Adam<double> adam({0.001});
  adam.step({{"w", &w}});
  EXPECT_NEAR(w.data[0], -0.001, 1e-9);
}

TEST(Adam, QuadraticBowlConverges) {
  Tensor<double> w({1}, std::vector<double>{1.0});
  w.enable_grad();
  Adam<double> adam({0.01});
  int steps = 0;
  while (std::abs(w.data[0]) >= 1e-3 && steps < 2000) {
    w.grad = {2 * w.data[0]};
    adam.step({{"w", &w}});
    ++steps;
  }
  EXPECT_LT(std::abs(w.data[0]), 1e-3);
  EXPECT_LT(steps, 2000);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Tensor<double> w({2});
  w.enable_grad();
  w.grad = {0.0, std::numeric_limits<double>::infinity()};
  Adam<double> adam;
  try {
    adam.step({{"3.dense.weight", &w}});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("3.dense.weight"), std::string::npos);
  }
}

namespace {

std::vector<LayerSpec> tiny_stack() {
  return {LayerSpec::reshape(ReshapeMode::add_channel), LayerSpec::conv2d(3, 3, 2), LayerSpec::leaky_relu(0.1),
          LayerSpec::maxpool2d(2), LayerSpec::reshape(ReshapeMode::to_sequence), LayerSpec::blstm(3),
          LayerSpec::mean_pool_time(), LayerSpec::dense(4), LayerSpec::dropout(0.3), LayerSpec::dense(2)};
}

}  // namespace

TEST(Network, WholeStackFiniteDifferences) {
  Rng rng(13);
  Network<double> net(tiny_stack(), {6, 4}, 5);
  EXPECT_EQ(net.output_shape(), (Shape{2}));
  const auto x = vtest::random_tensor(rng, {2, 6, 4});
  const auto t = vtest::random_tensor(rng, {2, 2}, 0, 1);
  net.zero_grad();
  net.backward(mse_loss(net.forward(x, false), t).grad);
  auto params = net.parameters();
  for (auto& p : params) {
    std::vector<double> num(p.tensor->size());
    for (std::size_t i = 0; i < num.size(); ++i) {
      const double keep = p.tensor->data[i];
      p.tensor->data[i] = keep + 1e-5;
      const double up = mse_loss(net.forward(x, false), t).value;
      p.tensor->data[i] = keep - 1e-5;
      const double down = mse_loss(net.forward(x, false), t).value;
      p.tensor->data[i] = keep;
      num[i] = (up - down) / 2e-5;
    }
    EXPECT_LE(vtest::grad_relative_error(p.tensor->grad, num), 1e-4) << p.name;
  }
}

TEST(Network, ParameterNamesAndDeterminism) {
  Network<float> a(tiny_stack(), {6, 4}, 5), b(tiny_stack(), {6, 4}, 5);
  const auto pa = a.parameters();
  EXPECT_EQ(pa.front().name, "1.conv2d.weight");
  EXPECT_EQ(pa.back().name, "9.dense.bias");
  Rng rng(14);
  Tensor<float> x({3, 6, 4});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(a.forward(x, true).data, b.forward(x, true).data);
  EXPECT_THROW(Network<float>(tiny_stack(), {6}, 1), InputError);
}

TEST(Checkpoint, RoundTrip) {
  Network<float> a(tiny_stack(), {6, 4}, 5), b(tiny_stack(), {6, 4}, 99);
  const auto snap = snapshot(a, 1234);
  const auto decoded = read_checkpoint(ByteReader(encode_checkpoint(snap), "mem"));
  EXPECT_EQ(decoded, snap);
  restore(b, decoded);
  Tensor<float> x({2, 6, 4}, 0.25f);
  EXPECT_EQ(a.forward(x, false).data, b.forward(x, false).data);
  EXPECT_EQ(encode_checkpoint(snapshot(b, 1234)), encode_checkpoint(snap));

  std::string bytes = encode_checkpoint(snap);
  bytes.pop_back();
  EXPECT_THROW(read_checkpoint(ByteReader(bytes, "mem")), InputError);
  Network<float> other({LayerSpec::reshape(ReshapeMode::flatten), LayerSpec::dense(2)}, {6, 4}, 1);
  EXPECT_THROW(restore(other, snap), InputError);
}
