#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "cellseg/layers.hpp"
#include "cellseg/network.hpp"
#include "cellseg/rng.hpp"
#include "cellseg/tensor.hpp"
#include "helpers.hpp"

using namespace cellseg;

TEST_CASE("tensor shape bookkeeping") {
  TensorD t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.flat().abs().sum() == 0.0);
  t(1, 2, 3) = 5.0;
  CHECK(t[23] == 5.0);
  CHECK(t.all_finite());
  t[0] = std::nan("");
  CHECK_FALSE(t.all_finite());

  CHECK_THROWS_AS(TensorD({2, 2}, TensorD::Flat::Zero(5)), InvalidInput);
}

TEST_CASE("tensor views alias the same buffer") {
  TensorD t({2, 2, 3});
  t.channel(1).setConstant(7.0);
  CHECK(t(1, 0, 0) == 7.0);
  CHECK(t(0, 0, 0) == 0.0);
  auto m = t.as_matrix(2, 6);
  CHECK(m(1, 5) == 7.0);
  CHECK_THROWS_AS(t.as_matrix(5, 5), InvalidInput);
}

TEST_CASE("relu forward") {
  TensorD x({1, 1, 3});
  x[0] = -1.0;
  x[1] = 0.0;
  x[2] = 2.0;
  auto l = testutil::make_layer(LayerSpec::relu(1));
  auto y = layer_forward(l, x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
}

TEST_CASE("identity 1x1 conv reproduces the image") {
  Rng rng(11);
  auto x = testutil::random_tensor({1, 5, 7}, rng);
  auto l = testutil::make_layer(LayerSpec::conv(1, 1, 1));
  l.weights[0] = 1.0;
  auto y = layer_forward(l, x);
  CHECK(y.same_shape(x));
  CHECK((y.flat() == x.flat()).all());
}

TEST_CASE("maxpool takes the window maximum") {
  TensorD x({1, 2, 2});
  x[0] = 1.0;
  x[1] = 2.0;
  x[2] = 3.0;
  x[3] = 4.0;
  auto l = testutil::make_layer(LayerSpec::maxpool(1));
  auto y = layer_forward(l, x);
  CHECK(y.size() == 1);
  CHECK(y[0] == 4.0);
}

TEST_CASE("spatial extents: conv preserves, pool halves, upsample doubles") {
  Rng rng(3);
  auto x = testutil::random_tensor({2, 6, 8}, rng);
  auto conv = testutil::make_layer(LayerSpec::conv(2, 3, 3));
  testutil::random_tensor({3, 2, 3, 3}, rng).flat().eval();
  auto y = layer_forward(conv, x);
  CHECK(y.shape() == TensorD::Shape{3, 6, 8});

  auto pool = testutil::make_layer(LayerSpec::maxpool(2));
  CHECK(layer_forward(pool, x).shape() == TensorD::Shape{2, 3, 4});

  auto up = testutil::make_layer(LayerSpec::upsample(2));
  CHECK(layer_forward(up, x).shape() == TensorD::Shape{2, 12, 16});
}

TEST_CASE("shape mismatch is rejected with a diagnostic naming the layer") {
  Rng rng(5);
  auto x = testutil::random_tensor({2, 4, 4}, rng);
  auto conv = testutil::make_layer(LayerSpec::conv(3, 1, 3));
  try {
    layer_forward(conv, x, static_cast<const TensorD*>(nullptr), 7);
    FAIL("expected InvalidInput");
  } catch (const InvalidInput& e) {
    std::string msg = e.what();
    CHECK(msg.find("layer 7") != std::string::npos);
    CHECK(msg.find("conv2d") != std::string::npos);
    CHECK(msg.find("{2,4,4}") != std::string::npos);
  }
}

TEST_CASE("pool rejects odd spatial extents") {
  Rng rng(6);
  auto x = testutil::random_tensor({1, 5, 4}, rng);
  auto pool = testutil::make_layer(LayerSpec::maxpool(1));
  CHECK_THROWS_AS(layer_forward(pool, x), InvalidInput);
}

TEST_CASE("concat joins channels and backward splits them") {
  Rng rng(7);
  auto a = testutil::random_tensor({2, 3, 3}, rng);
  auto b = testutil::random_tensor({1, 3, 3}, rng);
  auto joined = concat_forward(a, b);
  CHECK(joined.shape() == TensorD::Shape{3, 3, 3});
  CHECK((joined.channel(0) == a.channel(0)).all());
  CHECK((joined.channel(2) == b.channel(0)).all());

  auto [ga, gb] = concat_backward(joined, 2);
  CHECK((ga.flat() == a.flat().eval()).all());
  CHECK((gb.flat() == b.flat().eval()).all());

  auto c = testutil::random_tensor({1, 2, 2}, rng);
  CHECK_THROWS_AS(concat_forward(a, c), InvalidInput);
}

TEST_CASE("forward traces are deterministic and replayable") {
  Rng rng(21);
  auto net = build_unet(2, 2, 8);
  init_weights(net, rng);
  auto x = testutil::random_tensor({1, 8, 8}, rng);

  ForwardTrace<double> t1, t2;
  auto y1 = net.forward(x, &t1);
  auto y2 = net.forward(x, &t2);
  CHECK(t1.complete);
  REQUIRE(t1.outputs.size() == t2.outputs.size());
  CHECK(std::memcmp(y1.data(), y2.data(), sizeof(double) * y1.size()) == 0);
  for (std::size_t i = 0; i < t1.outputs.size(); ++i) {
    REQUIRE(t1.outputs[i].same_shape(t2.outputs[i]));
    CHECK(std::memcmp(t1.outputs[i].data(), t2.outputs[i].data(),
                      sizeof(double) * t1.outputs[i].size()) == 0);
  }

  // Replaying each layer from the recorded inputs reproduces the recorded
  // outputs bit-exactly.
  for (int i = 0; i < net.layer_count(); ++i) {
    const auto& spec = net.layer(i).spec;
    const TensorD* skip = spec.kind == LayerKind::kConcat
                              ? &t1.outputs[static_cast<std::size_t>(spec.skip_from)]
                              : nullptr;
    auto replay = layer_forward(net.layer(i), t1.layer_input(i), skip, i);
    const auto& recorded = t1.outputs[static_cast<std::size_t>(i)];
    REQUIRE(replay.same_shape(recorded));
    CHECK(std::memcmp(replay.data(), recorded.data(),
                      sizeof(double) * replay.size()) == 0);
  }

  // Forward without a trace agrees with the traced run.
  auto y3 = net.forward(x);
  CHECK(std::memcmp(y1.data(), y3.data(), sizeof(double) * y1.size()) == 0);
}

TEST_CASE("finite inputs stay finite through every layer kind") {
  Rng rng(31);
  for (int n = 0; n < 5; ++n) {
    Eigen::Index c, h, w;
    auto net = testutil::build_random_net(rng, c, h, w);
    auto x = testutil::random_tensor({c, h, w}, rng, 2.0);
    ForwardTrace<double> trace;
    auto y = net.forward(x, &trace);
    CHECK(y.all_finite());
    for (const auto& o : trace.outputs) CHECK(o.all_finite());
  }
}

TEST_CASE("unet construction validates its config") {
  CHECK_THROWS_AS(build_unet(0, 4, 64), InvalidInput);
  CHECK_THROWS_AS(build_unet(2, 0, 64), InvalidInput);
  CHECK_THROWS_AS(build_unet(2, 4, 63), InvalidInput);
  auto net = build_unet(3, 4, 64);
  CHECK(net.layer(net.layer_count() - 1).spec.kind == LayerKind::kOutputHead);
  auto x = TensorD({1, 64, 64});
  CHECK(net.forward(x).shape() == TensorD::Shape{1, 64, 64});
}

TEST_CASE("32-bit scalar mode compiles and runs") {
  Network<float> net;
  Layer<float> conv;
  conv.spec = LayerSpec::conv(1, 2, 3);
  conv.weights = Tensor<float>({2, 1, 3, 3});
  conv.bias = Tensor<float>({2});
  net.add_layer(std::move(conv));
  Layer<float> act;
  act.spec = LayerSpec::relu(2);
  net.add_layer(std::move(act));
  Tensor<float> x({1, 4, 4});
  x.flat().setConstant(1.0f);
  auto y = net.forward(x);
  CHECK(y.shape() == Tensor<float>::Shape{2, 4, 4});
  CHECK(y.all_finite());
}
