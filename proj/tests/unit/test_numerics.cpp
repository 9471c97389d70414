#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "helpers.hpp"
#include "mscdt/numerics/adam.hpp"
#include "mscdt/numerics/grad_check.hpp"
#include "mscdt/numerics/ops.hpp"
#include "mscdt/numerics/tsr_io.hpp"

using namespace mscdt;
using testutil::max_diff;
using testutil::random_tensor;

namespace {

Var<double> cvar(Shape s, std::vector<double> v) {
  return Var<double>::constant(Tensor<double>(std::move(s), std::move(v)));
}

}  // namespace

TEST_CASE("softmax examples") {
  auto a = ops::softmax(cvar({2}, {1, 1}), 0).value();
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(0.5));
  CHECK(ops::softmax(cvar({1}, {0}), 0).value()[0] == 1.0);
  auto b = ops::softmax(cvar({2}, {0, std::log(3.0)}), 0).value();
  CHECK(std::abs(b[0] - 0.25) < 1e-15);
  CHECK(std::abs(b[1] - 0.75) < 1e-15);
}

TEST_CASE("softmax rows sum to one at extreme magnitudes") {
  auto x = random_tensor({6, 5}, 11, -1e4, 1e4);
  auto y = ops::softmax(Var<double>::constant(x), 1).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += y.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  Tensor<float> xf = x.cast<float>();
  auto yf = ops::softmax(Var<float>::constant(xf), 1).value();
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 5; ++j) s += yf.at(i, j);
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK_THROWS(ops::softmax(Var<double>::constant(x), 2));
}

TEST_CASE("gelu examples") {
  auto y = ops::gelu(cvar({3}, {0, 100, 1})).value();
  CHECK(y[0] == 0.0);
  CHECK(std::abs(y[1] - 100.0) < 1e-12);
  // Phi(1) from the complementary error function
  const double phi1 = 0.5 * std::erfc(-1.0 / std::numbers::sqrt2);
  CHECK(std::abs(y[2] - phi1) < 1e-15);
  CHECK(std::abs(y[2] - 0.8413447460685429) < 1e-12);
}

TEST_CASE("leaky relu examples") {
  auto y = ops::leaky_relu(cvar({3}, {2, -2, 0}), 0.1).value();
  CHECK(y[0] == 2.0);
  CHECK(std::abs(y[1] + 0.2) < 1e-15);
  CHECK(y[2] == 0.0);
}

TEST_CASE("layer norm examples and oracle") {
  auto c = ops::layer_norm(cvar({1, 3}, {4, 4, 4}), 1).value();
  for (auto v : c.data()) CHECK(v == 0.0);
  auto t = ops::layer_norm(cvar({2}, {1, 3}), 0, 0.0).value();
  CHECK(t[0] == -1.0);
  CHECK(t[1] == 1.0);
  auto x = random_tensor({4, 4, 6}, 3, -3, 3);
  auto y = ops::layer_norm(Var<double>::constant(x), 2, 1e-5).value();
  CHECK(max_diff(y, testutil::naive_layer_norm(x, 1e-5)) < 1e-12);
}

TEST_CASE("pixel unshuffle examples") {
  auto y = ops::pixel_unshuffle(cvar({2, 2, 1}, {1, 2, 3, 4}), 2).value();
  CHECK(y.shape() == Shape{1, 1, 4});
  CHECK(y.storage() == std::vector<double>{1, 2, 3, 4});
  auto x = random_tensor({8, 8, 3}, 5);
  auto back = ops::pixel_shuffle(ops::pixel_unshuffle(Var<double>::constant(x), 2), 2).value();
  CHECK(testutil::bit_equal(back, x));
  auto big = ops::pixel_unshuffle(Var<double>::constant(Tensor<double>({32, 32, 2})), 2);
  CHECK(big.shape() == Shape{16, 16, 8});
  CHECK_THROWS(ops::pixel_unshuffle(Var<double>::constant(Tensor<double>({5, 4, 1})), 2));
}

TEST_CASE("conv2d examples and oracles") {
  auto x = random_tensor({5, 5, 2}, 21);
  Tensor<double> eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  auto same = ops::conv2d(Var<double>::constant(x), Var<double>::constant(eye),
                          ops::ConvMode::pointwise_1x1)
                  .value();
  CHECK(same == x);
  auto zero = ops::conv2d(Var<double>::constant(x), Var<double>::constant(Tensor<double>({3, 3, 2})),
                          ops::ConvMode::depthwise_3x3)
                  .value();
  for (auto v : zero.data()) CHECK(v == 0.0);

  auto kp = random_tensor({2, 3}, 22);
  auto yp = ops::conv2d(Var<double>::constant(x), Var<double>::constant(kp),
                        ops::ConvMode::pointwise_1x1);
  CHECK(max_diff(yp.value(), testutil::naive_pointwise(x, kp)) < 1e-12);

  auto kd = random_tensor({3, 3, 2}, 23);
  auto yd = ops::conv2d(Var<double>::constant(x), Var<double>::constant(kd),
                        ops::ConvMode::depthwise_3x3);
  CHECK(yd.shape() == x.shape());
  CHECK(max_diff(yd.value(), testutil::naive_depthwise(x, kd)) < 1e-12);

  auto kf = random_tensor({3, 3, 2, 4}, 24);
  auto yf = ops::conv2d(Var<double>::constant(x), Var<double>::constant(kf),
                        ops::ConvMode::full_3x3);
  CHECK(max_diff(yf.value(), testutil::naive_full3x3(x, kf)) < 1e-12);

  CHECK_THROWS(ops::conv2d(Var<double>::constant(x), Var<double>::constant(random_tensor({3, 3}, 1)),
                           ops::ConvMode::pointwise_1x1));
}

TEST_CASE("linear examples and oracle") {
  auto x = random_tensor({3, 4}, 31);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  auto id = ops::linear(Var<double>::constant(x), Var<double>::constant(eye),
                        Var<double>::constant(Tensor<double>({4})))
                .value();
  CHECK(id == x);
  auto b = random_tensor({2}, 32);
  auto zb = ops::linear(Var<double>::constant(x), Var<double>::constant(Tensor<double>({4, 2})),
                        Var<double>::constant(b))
                .value();
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(zb.at(i, 0) == b[0]);
    CHECK(zb.at(i, 1) == b[1]);
  }
  auto w = random_tensor({4, 2}, 33);
  auto y = ops::linear(Var<double>::constant(x), Var<double>::constant(w), Var<double>::constant(b))
               .value();
  Tensor<double> ref({3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = b[o];
      for (std::size_t k = 0; k < 4; ++k) s += x.at(i, k) * w.at(k, o);
      ref.at(i, o) = s;
    }
  CHECK(max_diff(y, ref) < 1e-12);
  CHECK_THROWS(ops::linear(Var<double>::constant(x), Var<double>::constant(Tensor<double>({3, 2})),
                           Var<double>::constant(b)));
}

TEST_CASE("grad check examples") {
  Parameter<double> w("w", Tensor<double>({1}, 3.0));
  Parameter<double>* ps[] = {&w};
  auto r = grad_check([&] { return ops::mul(w.var(), w.var()); }, ps);
  CHECK(r.max_rel_error < 1e-10);

  Parameter<double> x("x", random_tensor({5}, 41));
  Parameter<double>* xs[] = {&x};
  auto s = grad_check([&] { return ops::sum(ops::softmax(x.var(), 0)); }, xs);
  CHECK(s.max_abs_error < 1e-9);
}

TEST_CASE("every op family passes grad check") {
  Parameter<double> a("a", random_tensor({4, 4, 3}, 51));
  Parameter<double> b("b", random_tensor({4, 4, 3}, 52));
  Parameter<double> kp("kp", random_tensor({3, 2}, 53));
  Parameter<double> kd("kd", random_tensor({3, 3, 3}, 54));
  Parameter<double> kf("kf", random_tensor({3, 3, 3, 2}, 55));
  Parameter<double> w("w", random_tensor({3, 5}, 56));
  Parameter<double> bias("bias", random_tensor({5}, 57));
  Parameter<double> cb("cb", random_tensor({3}, 58));
  Parameter<double> gamma("gamma", Tensor<double>({1}, 0.7));
  const auto tw = random_tensor({4, 4, 3}, 59);

  auto check = [](const char* name, const ScalarFn& f, std::vector<Parameter<double>*> ps) {
    auto r = grad_check(f, ps);
    INFO(name << " worst " << r.worst_parameter << "[" << r.worst_index << "]");
    CHECK(r.max_rel_error < 1e-4);
  };
  auto loss = [&](const Var<double>& y) {
    auto t = Var<double>::constant(random_tensor(y.shape(), 99));
    return ops::weighted_sum(y, t.value());
  };

  check("add/sub/mul/scale", [&] {
    return loss(ops::scale(ops::mul(ops::add(a.var(), b.var()), ops::sub(a.var(), b.var())), 0.3));
  }, {&a, &b});
  check("add_n/mean", [&] { return ops::mean(ops::add_n<double>({a.var(), b.var(), a.var()})); },
        {&a, &b});
  check("mean_abs_diff", [&] { return ops::mean_abs_diff(a.var(), b.var()); }, {&a, &b});
  check("weighted_sum/sum", [&] { return ops::add(ops::weighted_sum(a.var(), tw), ops::sum(b.var())); },
        {&a, &b});
  check("reshape", [&] { return loss(ops::reshape(a.var(), {16, 3})); }, {&a});
  check("softmax", [&] { return loss(ops::softmax(a.var(), 2)); }, {&a});
  check("gelu", [&] { return loss(ops::gelu(a.var())); }, {&a});
  check("leaky_relu", [&] { return loss(ops::leaky_relu(a.var(), 0.1)); }, {&a});
  check("layer_norm", [&] { return loss(ops::layer_norm(a.var(), 2)); }, {&a});
  check("pixel_unshuffle", [&] { return loss(ops::pixel_unshuffle(a.var(), 2)); }, {&a});
  check("pixel_shuffle", [&] {
    return loss(ops::pixel_shuffle(ops::reshape(a.var(), {2, 2, 12}), 2));
  }, {&a});
  check("conv pointwise", [&] {
    return loss(ops::conv2d(a.var(), kp.var(), ops::ConvMode::pointwise_1x1));
  }, {&a, &kp});
  check("conv depthwise", [&] {
    return loss(ops::conv2d(a.var(), kd.var(), ops::ConvMode::depthwise_3x3));
  }, {&a, &kd});
  check("conv depthwise replicate", [&] {
    return loss(ops::conv2d(a.var(), kd.var(), ops::ConvMode::depthwise_3x3, ops::Padding::replicate));
  }, {&a, &kd});
  check("conv full", [&] { return loss(ops::conv2d(a.var(), kf.var(), ops::ConvMode::full_3x3)); },
        {&a, &kf});
  check("linear", [&] {
    return loss(ops::linear(ops::reshape(a.var(), {16, 3}), w.var(), bias.var()));
  }, {&a, &w, &bias});
  check("channel bias/affine", [&] {
    return loss(ops::channel_affine(ops::add_channel_bias(a.var(), cb.var()), cb.var(), cb.var()));
  }, {&a, &cb});
  check("concat/stack/slice", [&] {
    auto c = ops::concat_last<double>({a.var(), b.var()});
    auto s = ops::stack_last<double>({ops::slice_last(c, 1), ops::slice_last(c, 4)});
    return loss(s);
  }, {&a, &b});
  check("global_avg_pool", [&] { return loss(ops::global_avg_pool(a.var())); }, {&a});
  check("channel_attention", [&] {
    return loss(ops::channel_attention(a.var(), b.var(), ops::gelu(a.var()), gamma.var(), 1));
  }, {&a, &b, &gamma});
}

TEST_CASE("detach stops gradient") {
  Parameter<double> a("a", random_tensor({3}, 1));
  backward(ops::sum(ops::mul(ops::detach(a.var()), a.var())));
  CHECK(max_diff(a.grad, a.value) == 0.0);
}

TEST_CASE("non-finite values are rejected with the op name") {
  auto x = cvar({2}, {1.0, std::numeric_limits<double>::max()});
  try {
    ops::scale(x, 10.0);
    FAIL("expected a throw");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("scale") != std::string::npos);
  }
}

TEST_CASE("parameter names are unique within a store") {
  ParameterStore<double> store;
  store.add("level0.block0.q", Tensor<double>({2}));
  CHECK_THROWS_AS(store.add("level0.block0.q", Tensor<double>({2})), std::invalid_argument);
  CHECK(store.find("level0.block0.q") != nullptr);
  CHECK(store[0].grad.shape() == store[0].value.shape());
}

TEST_CASE("gradient sinks match direct accumulation") {
  Parameter<double> a("a", random_tensor({4}, 71));
  auto f = [&] { return ops::sum(ops::gelu(a.var())); };
  backward(f());
  const Tensor<double> direct = a.grad;
  a.zero_grad();
  Gradients<double> sink;
  backward(f(), &sink);
  CHECK(max_diff(a.grad, Tensor<double>({4})) == 0.0);
  sink.apply();
  CHECK(testutil::bit_equal(a.grad, direct));
}

TEST_CASE("adam examples") {
  AdamConfig cfg;
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.99);

  Parameter<double> p("p", Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
  Tensor<double> m({2}), v({2});
  p.grad = Tensor<double>({2}, std::vector<double>{0.5, -3.0});
  adam_update(p, m, v, cfg, 1);
  for (std::size_t i = 0; i < 2; ++i) {
    const double g = std::abs(i == 0 ? 0.5 : 3.0);
    const double start = i == 0 ? 1.0 : -2.0;
    CHECK(std::abs(std::abs(p.value[i] - start) - cfg.learning_rate * g / (g + cfg.epsilon)) < 1e-15);
  }

  ParameterStore<double> store;
  auto* q = store.add("q", Tensor<double>({3}, 0.25));
  Adam<double> opt(store, cfg);
  opt.step();
  for (auto x : q->value.data()) CHECK(x == 0.25);
  CHECK(opt.steps_taken() == 1);
}

TEST_CASE("adam matches a hand-rolled two-step oracle") {
  AdamConfig cfg{1e-2, 0.9, 0.99, 1e-8};
  Parameter<double> p("p", Tensor<double>({1}, 0.5));
  Tensor<double> m({1}), v({1});
  double x = 0.5, mo = 0, vo = 0;
  const double grads[] = {0.3, -0.7};
  for (int t = 1; t <= 2; ++t) {
    const double g = grads[t - 1];
    p.grad[0] = g;
    adam_update(p, m, v, cfg, static_cast<std::uint64_t>(t));
    mo = 0.9 * mo + 0.1 * g;
    vo = 0.99 * vo + 0.01 * g * g;
    const double mh = mo / (1 - std::pow(0.9, t)), vh = vo / (1 - std::pow(0.99, t));
    x -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.epsilon);
    CHECK(std::abs(p.value[0] - x) < 1e-15);
  }
}

TEST_CASE("counter rng is a pure function of seed, key and counter") {
  CounterRng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(CounterRng(42).split("x").at(3) == CounterRng(42).split("x").at(3));
  CHECK(CounterRng(42).split("x").at(3) != CounterRng(42).split("y").at(3));
  CHECK(CounterRng(42).at(0) != CounterRng(43).at(0));
  CounterRng n(9);
  double mu = 0, m2 = 0;
  const int count = 100000;
  for (int i = 0; i < count; ++i) {
    const double z = n.normal();
    mu += z;
    m2 += z * z;
  }
  mu /= count;
  CHECK(std::abs(mu) < 0.02);
  CHECK(std::abs(m2 / count - 1.0) < 0.02);
}

TEST_CASE("tsr round trip and header") {
  auto x = random_tensor({3, 2, 5}, 81);
  auto bytes = encode_tsr(x);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "MSCDTTSR");
  CHECK(bytes[8] == 1);
  CHECK(bytes[9] == 3);
  CHECK(bytes.size() == 10 + 3 * 8 + 30 * 8);
  CHECK(testutil::bit_equal(decode_tsr<double>(bytes), x));
  auto f = encode_tsr(x.cast<float>());
  CHECK(tsr_dtype(f) == DType::f32);
  CHECK(decode_tsr<float>(f) == x.cast<float>());
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode_tsr<double>(bytes), FormatError);
  auto trunc = encode_tsr(x);
  trunc.pop_back();
  CHECK_THROWS_AS(decode_tsr<double>(trunc), FormatError);
}

TEST_CASE("sha256 known digests") {
  std::vector<std::uint8_t> empty;
  CHECK(sha256_hex(empty) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  std::vector<std::uint8_t> abc{'a', 'b', 'c'};
  CHECK(sha256_hex(abc) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("ops are deterministic") {
  auto x = random_tensor({4, 4, 3}, 91);
  auto k = random_tensor({3, 3, 3, 3}, 92);
  auto f = [&] {
    return ops::layer_norm(ops::gelu(ops::conv2d(Var<double>::constant(x), Var<double>::constant(k),
                                                 ops::ConvMode::full_3x3)),
                           2)
        .value();
  };
  CHECK(testutil::bit_equal(f(), f()));
}
