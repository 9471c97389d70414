#include "mscdt/pipeline/model.hpp"

#include <cmath>
#include <exception>
#include <stdexcept>
#include <thread>

namespace mscdt::pipeline {

template <typename T>
Model<T>::Model(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      schedule_(diffusion::build_schedule(cfg_.schedule)),
      store_(std::make_unique<ParameterStore<T>>()),
      msp_(Initializer<T>(*store_, cfg_.init_seed, "lpeb"), cfg_.lpeb,
           cfg_.tracers()),
      condition_(Initializer<T>(*store_, cfg_.init_seed, "cond"), cfg_.lpeb, 1),
      denoiser_(Initializer<T>(*store_, cfg_.init_seed, "denoiser"),
                cfg_.latent_dim(), cfg_.tracers(), cfg_.latent_dim(),
                schedule_, cfg_.denoiser),
      unet_(Initializer<T>(*store_, cfg_.init_seed, "unet"), cfg_.unet) {}

namespace {

template <typename T>
Var<T> as_var(const Image& im) {
  return Var<T>::constant(im.cast<T>());
}

void check_targets(std::size_t outputs, const std::vector<Image>& targets) {
  if (outputs != targets.size()) {
    throw std::invalid_argument("loss_tm: " + std::to_string(outputs) +
                                " outputs vs " + std::to_string(targets.size()) +
                                " targets");
  }
}

}  // namespace

template <typename T>
Var<T> loss_tm(const std::vector<Var<T>>& separated,
               const std::vector<Image>& targets,
               const texture::TextureConfig& tex) {
  check_targets(separated.size(), targets);
  std::vector<Var<T>> terms;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto mask = texture::mask_of(targets[k], tex.tau);
    const Var<T> target = as_var<T>(targets[k]);
    const Var<T> target_tex = as_var<T>(texture::masked_texture(targets[k], mask));
    const Var<T> pred_tex =
        ops::mul(separated[k], Var<T>::constant(mask.template as_tensor<T>()));
    terms.push_back(ops::mean_abs_diff(separated[k], target));
    terms.push_back(ops::mean_abs_diff(pred_tex, target_tex));
  }
  return ops::add_n(terms);
}

double loss_tm_value(const std::vector<Image>& separated,
                     const std::vector<Image>& targets,
                     const texture::TextureConfig& tex) {
  std::vector<Var<double>> vars;
  for (const auto& s : separated) vars.push_back(Var<double>::constant(s));
  return loss_tm(vars, targets, tex).value()[0];
}

template <typename T>
SampleNoise<T> draw_sample_noise(const ModelConfig& cfg, std::uint64_t seed,
                                 std::uint64_t step, std::uint64_t sample) {
  CounterRng base = CounterRng(seed).split("train").split(step).split(sample);
  const Shape shape{cfg.latent_dim(), cfg.tracers()};
  SampleNoise<T> n;
  CounterRng r1 = base.split("rollout");
  n.rollout_eps = diffusion::gaussian<T>(shape, r1);
  CounterRng r2 = base.split("eps");
  n.eps_step = 1 + r2.uniform_index(cfg.schedule.steps);
  n.eps = diffusion::gaussian<T>(shape, r2);
  return n;
}

template <typename T>
SampleForward<T> forward_sample_loss(const Model<T>& model,
                                     const evaluation::PhantomPair& sample,
                                     const TrainConfig& cfg,
                                     const SampleNoise<T>& noise,
                                     bool teacher_forcing) {
  const auto& sched = model.schedule();
  const Var<T> dual = as_var<T>(sample.dual);
  std::vector<Var<T>> singles;
  for (const auto& s : sample.singles) singles.push_back(as_var<T>(s));
  const auto dual_mask = texture::mask_of(sample.dual, cfg.texture.tau);
  const Var<T> masked_dual = as_var<T>(texture::masked_texture(sample.dual, dual_mask));

  SampleForward<T> out;
  out.prior = latent_prior::extract_msp(model.msp_encoder(), dual, singles);
  const Var<T> condition =
      latent_prior::extract_condition(model.condition_encoder(), dual, masked_dual);
  const Var<T> start =
      diffusion::forward_sample(out.prior, sched, sched.steps(), noise.rollout_eps);
  out.prior_hat = diffusion::denoise_full(start, condition, model.denoiser(), sched);
  out.dm = diffusion::loss_dm(out.prior_hat, out.prior);
  if (cfg.weight_eps != 0.0) {
    const Var<T> noisy =
        diffusion::forward_sample(out.prior, sched, noise.eps_step, noise.eps);
    const Var<T> eps_hat = model.denoiser().predict(noisy, noise.eps_step, condition);
    out.dm = ops::add(out.dm, ops::scale(ops::mean_abs_diff(eps_hat, Var<T>::constant(noise.eps)),
                                         static_cast<T>(cfg.weight_eps)));
  }
  const Var<T>& prior_in = teacher_forcing ? out.prior : out.prior_hat;
  out.separated = model.unet().forward(dual, masked_dual, prior_in);
  out.tm = loss_tm(out.separated, sample.singles, cfg.texture);
  out.total = ops::add(ops::scale(out.dm, static_cast<T>(cfg.weight_dm)),
                       ops::scale(out.tm, static_cast<T>(cfg.weight_tm)));
  return out;
}

template <typename T>
StepLosses train_step(std::span<const evaluation::PhantomPair> batch,
                      Model<T>& model, Adam<T>& optimizer,
                      const TrainConfig& cfg, std::uint64_t step_index) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  const std::size_t n = batch.size();
  const bool teacher =
      static_cast<double>(step_index) < cfg.teacher_forcing * static_cast<double>(cfg.steps);
  const T inv_batch = static_cast<T>(1.0 / static_cast<double>(n));

  std::vector<Gradients<T>> grads(n);
  std::vector<StepLosses> per(n);
  std::vector<std::exception_ptr> errors(n);

  auto run = [&](std::size_t i) {
    try {
      const auto noise = draw_sample_noise<T>(model.config(), cfg.seed, step_index, i);
      const auto fwd = forward_sample_loss(model, batch[i], cfg, noise, teacher);
      per[i] = {static_cast<double>(fwd.total.value()[0]),
                static_cast<double>(fwd.dm.value()[0]),
                static_cast<double>(fwd.tm.value()[0])};
      backward(ops::scale(fwd.total, inv_batch), &grads[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t workers = std::min(cfg.threads, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const NonFiniteError& e) {
      throw NonFiniteError("train_step " + std::to_string(step_index) +
                           ", sample " + std::to_string(i) + ": " + e.what());
    }
  }

  // Fixed-order reduction keeps updates independent of the thread count.
  model.parameters().zero_grad();
  for (const auto& g : grads) g.apply();
  optimizer.step();

  StepLosses s;
  for (const auto& p : per) {
    s.total += p.total;
    s.dm += p.dm;
    s.tm += p.tm;
  }
  s.total /= static_cast<double>(n);
  s.dm /= static_cast<double>(n);
  s.tm /= static_cast<double>(n);
  return s;
}

template <typename T>
std::vector<StepLosses> train(
    Model<T>& model, Adam<T>& optimizer,
    std::span<const evaluation::PhantomPair> corpus, const TrainConfig& cfg,
    const std::function<void(std::uint64_t, const StepLosses&)>& on_step) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  std::vector<StepLosses> history;
  history.reserve(cfg.steps);
  std::vector<evaluation::PhantomPair> batch(cfg.batch);
  const std::uint64_t first = optimizer.steps_taken();
  for (std::uint64_t s = first; s < cfg.steps; ++s) {
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      batch[i] = corpus[(s * cfg.batch + i) % corpus.size()];
    }
    history.push_back(train_step<T>(batch, model, optimizer, cfg, s));
    if (on_step) on_step(s, history.back());
  }
  return history;
}

template <typename T>
Separation separate(const Model<T>& model, const Image& dual,
                    const texture::TextureConfig& tex, std::uint64_t seed) {
  tex.validate();
  const auto& cfg = model.config();
  Separation out;
  out.dual_mask = texture::mask_of(dual, tex.tau);
  const Var<T> dual_v = as_var<T>(dual);
  const Var<T> masked = as_var<T>(texture::masked_texture(dual, out.dual_mask));
  const Var<T> condition =
      latent_prior::extract_condition(model.condition_encoder(), dual_v, masked);
  CounterRng rng = CounterRng(seed).split("separate");
  const Var<T> start = Var<T>::constant(
      diffusion::gaussian<T>(Shape{cfg.latent_dim(), cfg.tracers()}, rng));
  const Var<T> prior =
      diffusion::denoise_full(start, condition, model.denoiser(), model.schedule());
  const auto images = model.unet().forward(dual_v, masked, prior);
  out.prior = prior.value().template cast<double>();
  for (const auto& im : images) {
    Image raw = im.value().template cast<double>();
    const Image tex_part = texture::masked_texture(raw, texture::mask_of(raw, tex.tau));
    out.fused.push_back(texture::fuse(raw, tex_part, tex.alpha));
    out.raw.push_back(std::move(raw));
  }
  return out;
}

#define MSCDT_INSTANTIATE(T)                                                    \
  template class Model<T>;                                                      \
  template Var<T> loss_tm(const std::vector<Var<T>>&, const std::vector<Image>&, \
                          const texture::TextureConfig&);                       \
  template SampleNoise<T> draw_sample_noise(const ModelConfig&, std::uint64_t,   \
                                            std::uint64_t, std::uint64_t);      \
  template SampleForward<T> forward_sample_loss(                                \
      const Model<T>&, const evaluation::PhantomPair&, const TrainConfig&,      \
      const SampleNoise<T>&, bool);                                             \
  template StepLosses train_step(std::span<const evaluation::PhantomPair>,      \
                                 Model<T>&, Adam<T>&, const TrainConfig&,       \
                                 std::uint64_t);                                \
  template std::vector<StepLosses> train(                                       \
      Model<T>&, Adam<T>&, std::span<const evaluation::PhantomPair>,            \
      const TrainConfig&,                                                       \
      const std::function<void(std::uint64_t, const StepLosses&)>&);            \
  template Separation separate(const Model<T>&, const Image&,                   \
                               const texture::TextureConfig&, std::uint64_t);

MSCDT_INSTANTIATE(float)
MSCDT_INSTANTIATE(double)
#undef MSCDT_INSTANTIATE

}  // namespace mscdt::pipeline
