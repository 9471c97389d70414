#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mscdt/diffusion/diffusion.hpp"
#include "mscdt/numerics/adam.hpp"
#include "mscdt/numerics/grad_check.hpp"

using namespace mscdt;
using namespace mscdt::diffusion;
using testutil::max_diff;
using testutil::random_tensor;

namespace {

Var<double> cst(const Tensor<double>& t) { return Var<double>::constant(t); }

DenoiserConfig noise_cfg(std::size_t hidden) { return {hidden, DenoiserOutput::noise}; }

}  // namespace

TEST_CASE("schedule examples") {
  CHECK(ScheduleConfig{}.steps == 4);
  auto flat = build_schedule(4, 0.0, 0.0);
  for (std::size_t t = 0; t <= 4; ++t) CHECK(flat.alpha_bar_at(t) == 1.0);
  auto s = build_schedule(4, 0.1, 0.4);
  CHECK(std::abs(s.alpha_bar_at(4) - 0.9 * 0.8 * 0.7 * 0.6) < 1e-15);
  CHECK(std::abs(s.alpha_bar_at(4) - 0.3024) < 1e-15);
  for (const auto& sch : {s, build_schedule(ScheduleConfig{})}) {
    for (std::size_t t = 1; t <= 4; ++t) {
      CHECK(sch.alpha_bar_at(t) <= sch.alpha_bar_at(t - 1));
      CHECK(sch.alpha_bar_at(t) == sch.alpha_at(t) * sch.alpha_bar_at(t - 1));
      CHECK(sch.alpha_at(t) == 1.0 - sch.beta_at(t));
    }
  }
  CHECK(build_schedule(ScheduleConfig{}).beta_at(4) == 0.99);
  CHECK_THROWS(build_schedule(0, 0.1, 0.2));
  CHECK_THROWS(build_schedule(4, 0.3, 0.2));
  CHECK_THROWS(build_schedule(4, 0.1, 1.0));
}

TEST_CASE("forward sample examples") {
  auto s = build_schedule(4, 0.1, 0.4);
  auto L = random_tensor({3, 2}, 1);
  auto flat = build_schedule(4, 0.0, 0.0);
  CHECK(forward_sample(cst(L), flat, 2, random_tensor({3, 2}, 2)).value() == L);
  auto y = forward_sample(cst(L), s, 3, Tensor<double>({3, 2})).value();
  for (std::size_t i = 0; i < L.size(); ++i) CHECK(y[i] == std::sqrt(s.alpha_bar_at(3)) * L[i]);
  auto one = forward_sample(cst(Tensor<double>({1}, 1.0)), s, 4, Tensor<double>({1}, 1.0)).value()[0];
  CHECK(std::abs(one - (std::sqrt(0.3024) + std::sqrt(0.6976))) < 1e-15);
  CHECK(std::abs(one - 1.385134) < 1e-6);
  CHECK_THROWS(forward_sample(cst(L), s, 0, L));
  CHECK_THROWS(forward_sample(cst(L), s, 5, L));
  CHECK_THROWS(forward_sample(cst(L), s, 1, Tensor<double>({2, 3})));
}

TEST_CASE("forward sample variance") {
  auto s = build_schedule(ScheduleConfig{});
  const std::size_t n = 100000;
  CounterRng rng(5);
  for (std::size_t t = 1; t <= 4; ++t) {
    auto eps = gaussian<double>({n}, rng);
    auto y = forward_sample(cst(Tensor<double>({n})), s, t, eps).value();
    double mu = 0, m2 = 0;
    for (auto v : y.data()) mu += v;
    mu /= n;
    for (auto v : y.data()) m2 += (v - mu) * (v - mu);
    const double var = m2 / (n - 1), expect = 1.0 - s.alpha_bar_at(t);
    CHECK(std::abs(var - expect) < 3.0 * expect * std::sqrt(2.0 / (n - 1)));
  }
}

TEST_CASE("reverse step examples") {
  auto flat = build_schedule(4, 0.0, 0.0);
  auto L = random_tensor({2, 2}, 3);
  CHECK(reverse_step(cst(L), cst(Tensor<double>({2, 2})), 2, flat).value() == L);
  CHECK_THROWS(reverse_step(cst(L), cst(random_tensor({2, 2}, 4)), 2, flat));
}

TEST_CASE("reverse step single-step identity") {
  for (auto [b0, b1] : {std::pair{0.1, 0.4}, std::pair{0.1, 0.99}}) {
    auto s = build_schedule(4, b0, b1);
    auto L = random_tensor({8, 2}, 7), eps = random_tensor({8, 2}, 8);
    for (std::size_t t = 1; t <= 4; ++t) {
      auto lt = forward_sample(cst(L), s, t, eps);
      auto prev = reverse_step(lt, cst(eps), t, s).value();
      const double ab = s.alpha_bar_at(t), abp = s.alpha_bar_at(t - 1), a = s.alpha_at(t);
      const double ct = std::sqrt(a) * (1 - abp) / std::sqrt(1 - ab);
      for (std::size_t i = 0; i < L.size(); ++i) {
        CHECK(std::abs(prev[i] - (std::sqrt(abp) * L[i] + ct * eps[i])) < 1e-10);
      }
    }
  }
}

TEST_CASE("denoise_full with a zero denoiser and zero betas returns the start") {
  ParameterStore<double> store;
  auto flat = build_schedule(4, 0.0, 0.0);
  for (auto out : {DenoiserOutput::noise, DenoiserOutput::clean}) {
    ParameterStore<double> st;
    Denoiser<double> den(Initializer<double>(st, 1, "den"), 3, 2, 4, flat, {8, out});
    st.find("den.fc2.weight")->value.fill(0.0);
    auto start = random_tensor({3, 2}, 2);
    auto out_l = denoise_full(cst(start), cst(random_tensor({4}, 3)), den, flat).value();
    CHECK(out_l == start);
  }
}

TEST_CASE("denoise_full is deterministic") {
  ParameterStore<double> store;
  auto s = build_schedule(ScheduleConfig{});
  Denoiser<double> den(Initializer<double>(store, 1, "den"), 3, 2, 4, s, {8, DenoiserOutput::clean});
  auto start = random_tensor({3, 2}, 2), c = random_tensor({4}, 3);
  CHECK(testutil::bit_equal(denoise_full(cst(start), cst(c), den, s).value(),
                            denoise_full(cst(start), cst(c), den, s).value()));
}

TEST_CASE("clean output is converted to a noise estimate") {
  auto s = build_schedule(ScheduleConfig{});
  ParameterStore<double> a, b;
  Denoiser<double> raw(Initializer<double>(a, 4, "den"), 3, 2, 5, s, noise_cfg(8));
  Denoiser<double> clean(Initializer<double>(b, 4, "den"), 3, 2, 5, s, {8, DenoiserOutput::clean});
  auto lt = random_tensor({3, 2}, 5), c = random_tensor({5}, 6);
  for (std::size_t t = 1; t <= 4; ++t) {
    auto x0 = raw.predict(cst(lt), t, cst(c)).value();
    auto e = clean.predict(cst(lt), t, cst(c)).value();
    const double ab = s.alpha_bar_at(t);
    for (std::size_t i = 0; i < lt.size(); ++i) {
      CHECK(std::abs(e[i] - (lt[i] - std::sqrt(ab) * x0[i]) / std::sqrt(1 - ab)) < 1e-12);
    }
  }
  CHECK_THROWS(raw.predict(cst(lt), 0, cst(c)));
  CHECK_THROWS(raw.predict(cst(lt), 1, cst(random_tensor({4}, 1))));
  CHECK_THROWS(raw.predict(cst(random_tensor({4, 2}, 1)), 1, cst(c)));
}

TEST_CASE("denoiser overfit on one pair reaches the analytic endpoint") {
  auto s = build_schedule(4, 0.1, 0.4);
  const auto L = random_tensor({4, 2}, 11), eps = random_tensor({4, 2}, 12), c = random_tensor({3}, 13);
  // states visited when every estimate equals eps, from the closed-form recurrence
  std::vector<Tensor<double>> states(5);
  states[4] = forward_sample(cst(L), s, 4, eps).value();
  for (std::size_t t = 4; t >= 1; --t) {
    Tensor<double> prev(L.shape());
    const double coef = (1 - s.alpha_at(t)) / std::sqrt(1 - s.alpha_bar_at(t));
    for (std::size_t i = 0; i < L.size(); ++i) prev[i] = (states[t][i] - coef * eps[i]) / std::sqrt(s.alpha_at(t));
    states[t - 1] = prev;
  }
  ParameterStore<double> store;
  Denoiser<double> den(Initializer<double>(store, 2, "den"), 4, 2, 3, s, noise_cfg(32));
  double lr = 3e-3;
  for (int phase = 0; phase < 4; ++phase, lr *= 0.3) {
    Adam<double> opt(store, AdamConfig{lr, 0.9, 0.99, 1e-8});
    for (int it = 0; it < 1000; ++it) {
      std::vector<Var<double>> terms;
      for (std::size_t t = 1; t <= 4; ++t) {
        auto d = ops::sub(den.predict(cst(states[t]), t, cst(c)), cst(eps));
        terms.push_back(ops::mean(ops::mul(d, d)));
      }
      store.zero_grad();
      backward(ops::add_n(terms));
      opt.step();
    }
  }
  auto end = denoise_full(cst(states[4]), cst(c), den, s).value();
  CHECK(max_diff(end, states[0]) < 1e-3);
}

TEST_CASE("loss_dm examples and oracle") {
  auto L = random_tensor({5, 2}, 21);
  CHECK(loss_dm(cst(L), cst(L)).value()[0] == 0.0);
  Tensor<double> shifted(L.shape());
  for (std::size_t i = 0; i < L.size(); ++i) shifted[i] = L[i] + 2.0;
  CHECK(std::abs(loss_dm(cst(shifted), cst(L)).value()[0] - 2.0) < 1e-12);
  auto h = random_tensor({5, 2}, 22);
  double s = 0;
  for (std::size_t i = 0; i < L.size(); ++i) s += std::abs(h[i] - L[i]);
  CHECK(std::abs(loss_dm(cst(h), cst(L)).value()[0] - s / 10.0) < 1e-12);
  CHECK_THROWS(loss_dm(cst(h), cst(random_tensor({2, 5}, 1))));
}

TEST_CASE("denoiser gradients through the full rollout") {
  for (auto out : {DenoiserOutput::noise, DenoiserOutput::clean}) {
    auto s = build_schedule(4, 0.1, 0.4);
    ParameterStore<double> store;
    Denoiser<double> den(Initializer<double>(store, 3, "den"), 2, 2, 3, s, {6, out});
    Parameter<double> cond("cond", random_tensor({3}, 31));
    Parameter<double> start("start", random_tensor({2, 2}, 32));
    const auto target = random_tensor({2, 2}, 33);
    std::vector<Parameter<double>*> ps{&cond, &start};
    for (auto& p : store) ps.push_back(p.get());
    auto r = grad_check([&] {
      return ops::weighted_sum(denoise_full(start.var(), cond.var(), den, s), target);
    }, ps);
    INFO(r.worst_parameter);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("denoiser gradients at every step of the default schedule") {
  auto s = build_schedule(ScheduleConfig{});
  for (auto out : {DenoiserOutput::noise, DenoiserOutput::clean}) {
    ParameterStore<double> store;
    Denoiser<double> den(Initializer<double>(store, 3, "den"), 2, 2, 3, s, {6, out});
    Parameter<double> cond("cond", random_tensor({3}, 41));
    Parameter<double> lt("lt", random_tensor({2, 2}, 42));
    const auto target = random_tensor({2, 2}, 43);
    std::vector<Parameter<double>*> ps{&cond, &lt};
    for (auto& p : store) ps.push_back(p.get());
    for (std::size_t t = 1; t <= 4; ++t) {
      auto r = grad_check([&] { return ops::weighted_sum(den.predict(lt.var(), t, cond.var()), target); }, ps);
      INFO(r.worst_parameter << " t=" << t);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}
