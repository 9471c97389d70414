#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "mscdt/numerics/grad_check.hpp"
#include "mscdt/numerics/tsr_io.hpp"
#include "mscdt/pipeline/checkpoint.hpp"

using namespace mscdt;
using namespace mscdt::pipeline;
using testutil::bit_equal;
using testutil::max_diff;
using testutil::random_tensor;

namespace {

std::vector<evaluation::PhantomPair> small_corpus(std::size_t n, std::uint64_t seed = 300) {
  evaluation::PhantomSpec spec;
  spec.size = 16;
  std::vector<evaluation::PhantomPair> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(evaluation::gen_phantom(seed + i, spec));
  return out;
}

TrainConfig small_train() {
  TrainConfig c;
  c.steps = 8;
  c.batch = 2;
  c.adam.learning_rate = 1e-3;
  return c;
}

double oracle_loss_tm(const std::vector<Image>& pred, const std::vector<Image>& truth, int tau) {
  double total = 0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const auto mask = texture::mask_of(truth[k], tau);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < truth[k].size(); ++i) {
      const double m = mask.grid.data[i];
      a += std::abs(truth[k][i] - pred[k][i]);
      b += std::abs(truth[k][i] * m - pred[k][i] * m);
    }
    total += a / truth[k].size() + b / truth[k].size();
  }
  return total;
}

}  // namespace

TEST_CASE("loss_tm examples and oracle") {
  texture::TextureConfig tex;
  std::vector<Image> truth{random_tensor({8, 8}, 1, 0, 1), random_tensor({8, 8}, 2, 0, 1)};
  CHECK(loss_tm_value(truth, truth, tex) == 0.0);

  tex.tau = 0;
  std::vector<Image> shifted = truth;
  for (auto& im : shifted)
    for (auto& v : im.data()) v += 1.0;
  CHECK(std::abs(loss_tm_value(shifted, truth, tex) - 4.0) < 1e-12);

  tex.tau = 180;
  std::vector<Image> pred{random_tensor({8, 8}, 3, 0, 1), random_tensor({8, 8}, 4, 0, 1)};
  CHECK(std::abs(loss_tm_value(pred, truth, tex) - oracle_loss_tm(pred, truth, 180)) < 1e-12);
  CHECK_THROWS(loss_tm_value({pred[0]}, truth, tex));
}

TEST_CASE("train config json round trip") {
  TrainConfig c = small_train();
  c.precision = Precision::f64;
  c.texture.tau = 150;
  c.model.denoiser.output = diffusion::DenoiserOutput::noise;
  c.model.unet.channels = {6, 12};
  nlohmann::json j = c;
  TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.texture.tau == 150);
  CHECK(back.model.unet.channels == std::vector<std::size_t>{6, 12});
  CHECK(back.precision == Precision::f64);
  CHECK(parse_precision("f32") == Precision::f32);
  CHECK_THROWS(parse_precision("f16"));
  TrainConfig bad = c;
  bad.batch = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("model configs") {
  auto toy = ModelConfig::toy();
  CHECK(toy.unet.levels == 2);
  CHECK(toy.unet.channels == std::vector<std::size_t>{8, 16});
  CHECK(toy.unet.blocks == std::vector<std::size_t>{1, 1});
  CHECK(toy.latent_dim() == 32);
  CHECK(toy.tracers() == 2);
  CHECK(toy.schedule.steps == 4);
  auto ref = ModelConfig::reference();
  CHECK(ref.latent_dim() == 256);
  CHECK(ref.lpeb.channels == 64);
  TrainConfig t;
  CHECK(t.adam.learning_rate == 2e-4);
  CHECK(t.weight_dm == 1.0);
  CHECK(t.weight_tm == 1.0);
}

TEST_CASE("train step losses add up and are deterministic") {
  const auto corpus = small_corpus(2);
  const auto cfg = small_train();
  auto run = [&](std::size_t threads) {
    auto c = cfg;
    c.threads = threads;
    Model<double> model(c.model);
    Adam<double> opt(model.parameters(), c.adam);
    return train<double>(model, opt, corpus, c);
  };
  const auto a = run(1), b = run(1), c = run(2);
  REQUIRE(a.size() == cfg.steps);
  for (std::size_t s = 0; s < a.size(); ++s) {
    CHECK(std::abs(a[s].total - (a[s].dm + a[s].tm)) < 1e-12);
    CHECK(a[s].total == b[s].total);
    CHECK(a[s].dm == b[s].dm);
    CHECK(a[s].total == c[s].total);
  }
}

TEST_CASE("one step reaches every parameter") {
  const auto corpus = small_corpus(2, 400);
  for (bool teacher : {true, false}) {
    auto cfg = small_train();
    cfg.teacher_forcing = teacher ? 1.0 : 0.0;
    Model<double> model(cfg.model);
    Adam<double> opt(model.parameters(), cfg.adam);
    train_step<double>(corpus, model, opt, cfg, 0);
    for (const auto& p : model.parameters()) {
      double mag = 0;
      for (auto g : p->grad.data()) mag = std::max(mag, std::abs(g));
      INFO(p->name() << (teacher ? " (teacher)" : ""));
      CHECK(mag > 0.0);
    }
  }
}

TEST_CASE("non-finite values abort the step with a diagnostic") {
  auto corpus = small_corpus(1);
  auto cfg = small_train();
  Model<double> model(cfg.model);
  Adam<double> opt(model.parameters(), cfg.adam);
  model.parameters().find("unet.stem")->value[0] = std::numeric_limits<double>::infinity();
  try {
    train_step<double>(corpus, model, opt, cfg, 3);
    FAIL("expected a throw");
  } catch (const NonFiniteError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("train_step 3") != std::string::npos);
    CHECK(msg.find("sample 0") != std::string::npos);
    CHECK(msg.find("op '") != std::string::npos);
  }
}

TEST_CASE("full loss gradients on sampled entries") {
  const auto corpus = small_corpus(1, 500);
  auto cfg = small_train();
  cfg.model.unet.residual_init_scale = 1.0;
  Model<double> model(cfg.model);
  const auto noise = draw_sample_noise<double>(model.config(), 5, 0, 0);
  std::vector<GradEntry> entries;
  CounterRng pick(17);
  const auto& store = model.parameters();
  for (int i = 0; i < 10; ++i) {
    auto& p = store[pick.uniform_index(store.size())];
    entries.push_back({&p, pick.uniform_index(p.value.size())});
  }
  for (bool teacher : {true, false}) {
    auto r = grad_check_entries([&] { return forward_sample_loss(model, corpus[0], cfg, noise, teacher).total; },
                                entries);
    INFO(r.worst_parameter << "[" << r.worst_index << "]");
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("separate contract") {
  auto cfg = small_train();
  Model<double> model(cfg.model);
  const auto ph = small_corpus(1)[0];
  auto sep = separate(model, ph.dual, cfg.texture, 9);
  REQUIRE(sep.fused.size() == 2);
  REQUIRE(sep.raw.size() == 2);
  CHECK(sep.prior.shape() == Shape{32, 2});
  CHECK(sep.dual_mask.grid.rows == 16);
  auto again = separate(model, ph.dual, cfg.texture, 9);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(bit_equal(sep.fused[k], again.fused[k]));
    CHECK(sep.raw[k].shape() == ph.dual.shape());
  }
  auto other = separate(model, ph.dual, cfg.texture, 10);
  CHECK(max_diff(other.prior, sep.prior) > 0.0);

  texture::TextureConfig one = cfg.texture;
  one.alpha = 1.0;
  auto plain = separate(model, ph.dual, one, 9);
  for (std::size_t k = 0; k < 2; ++k) CHECK(bit_equal(plain.fused[k], plain.raw[k]));

  auto f32 = Model<float>(cfg.model);
  CHECK(separate(f32, ph.dual, cfg.texture, 9).fused.size() == 2);
}

TEST_CASE("checkpoint round trip") {
  const auto corpus = small_corpus(2);
  auto cfg = small_train();
  cfg.steps = 3;
  Model<double> model(cfg.model);
  Adam<double> opt(model.parameters(), cfg.adam);
  auto hist = train<double>(model, opt, corpus, cfg);
  const auto dir = testutil::temp_dir("ckpt");
  CheckpointMeta meta{cfg, 3, hist};
  const auto hash = save_checkpoint(model, &opt, meta, dir, nlohmann::json{{"note", "x"}});
  CHECK(checkpoint_hash(dir) == hash);
  CHECK(checkpoint_precision(dir) == Precision::f64);

  auto loaded = load_checkpoint<double>(dir);
  CHECK(loaded.content_hash == hash);
  CHECK(loaded.meta.step == 3);
  CHECK(loaded.meta.loss_tail.size() == 3);
  CHECK(loaded.meta.loss_tail[2].total == hist[2].total);
  REQUIRE(loaded.optimizer);
  CHECK(loaded.optimizer->steps_taken() == 3);
  const auto& a = model.parameters();
  const auto& b = loaded.model->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name() == b[i].name());
    CHECK(bit_equal(a[i].value, b[i].value));
    CHECK(bit_equal(opt.first_moment(i), loaded.optimizer->first_moment(i)));
    CHECK(bit_equal(opt.second_moment(i), loaded.optimizer->second_moment(i)));
  }
  auto s1 = separate(model, corpus[0].dual, cfg.texture, 4);
  auto s2 = separate(*loaded.model, corpus[0].dual, cfg.texture, 4);
  for (std::size_t k = 0; k < 2; ++k) CHECK(bit_equal(s1.fused[k], s2.fused[k]));

  // resumed training continues the same trajectory
  cfg.steps = 5;
  auto cont = train<double>(model, opt, corpus, cfg);
  auto resumed = train<double>(*loaded.model, *loaded.optimizer, corpus, cfg);
  REQUIRE(cont.size() == 2);
  CHECK(cont[1].total == resumed[1].total);
}

TEST_CASE("checkpoint corruption is rejected") {
  auto cfg = small_train();
  Model<float> model(cfg.model);
  const auto dir = testutil::temp_dir("ckpt_bad");
  save_checkpoint<float>(model, nullptr, CheckpointMeta{cfg, 0, {}}, dir);
  auto loaded = load_checkpoint<float>(dir);
  CHECK_FALSE(loaded.optimizer);
  const auto blob = dir / "params" / "unet.head.tsr";
  REQUIRE(std::filesystem::exists(blob));
  auto bytes = read_file_bytes(blob);
  bytes.back() ^= 0x01;
  write_file_bytes(blob, bytes);
  try {
    load_checkpoint<float>(dir);
    FAIL("expected a throw");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("hash mismatch") != std::string::npos);
  }
  CHECK_THROWS_AS(load_checkpoint<float>(testutil::temp_dir("ckpt_missing")), CheckpointError);
}
