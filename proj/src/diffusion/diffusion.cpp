#include "mscdt/diffusion/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mscdt::diffusion {

DiffusionSchedule build_schedule(std::size_t steps, double beta_start,
                                 double beta_end) {
  if (steps < 1) throw std::invalid_argument("schedule: T must be >= 1");
  if (!(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("schedule: need 0 <= beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.alpha_bar.push_back(1.0);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac =
        steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double b = beta_start + (beta_end - beta_start) * frac;
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(s.alpha.back() * s.alpha_bar.back());
  }
  return s;
}

namespace {

void check_step(std::size_t t, const DiffusionSchedule& sched) {
  if (t < 1 || t > sched.steps()) {
    throw std::out_of_range("diffusion: step " + std::to_string(t) +
                            " outside 1.." + std::to_string(sched.steps()));
  }
}

}  // namespace

template <typename T>
Var<T> forward_sample(const Var<T>& latent, const DiffusionSchedule& sched,
                      std::size_t t, const Tensor<T>& eps) {
  check_step(t, sched);
  if (eps.shape() != latent.shape()) {
    throw ShapeError("forward_sample: noise " + shape_string(eps.shape()) +
                     " vs latent " + shape_string(latent.shape()));
  }
  const double ab = sched.alpha_bar_at(t);
  Tensor<T> noise = eps;
  const T sigma = static_cast<T>(std::sqrt(1.0 - ab));
  for (auto& v : noise.data()) v *= sigma;
  return ops::add(ops::scale(latent, static_cast<T>(std::sqrt(ab))),
                  Var<T>::constant(std::move(noise)));
}

template <typename T>
Var<T> reverse_step(const Var<T>& latent_t, const Var<T>& eps_hat,
                    std::size_t t, const DiffusionSchedule& sched) {
  check_step(t, sched);
  const double a = sched.alpha_at(t);
  const double one_minus_ab = 1.0 - sched.alpha_bar_at(t);
  double coef = 0.0;
  if (one_minus_ab <= 0.0) {
    for (T v : eps_hat.value().data()) {
      if (v != T{0}) {
        throw std::domain_error(
            "reverse_step: alpha_bar_t == 1 with non-zero noise estimate");
      }
    }
  } else {
    coef = (1.0 - a) / std::sqrt(one_minus_ab);
  }
  const T inv_sqrt_a = static_cast<T>(1.0 / std::sqrt(a));
  return ops::scale(ops::sub(latent_t, ops::scale(eps_hat, static_cast<T>(coef))),
                    inv_sqrt_a);
}

template <typename T>
Tensor<T> gaussian(Shape shape, CounterRng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  return t;
}

template <typename T>
Denoiser<T>::Denoiser(Initializer<T> init, std::size_t latent_dim,
                      std::size_t tracers, std::size_t condition_dim,
                      const DiffusionSchedule& sched, const DenoiserConfig& cfg)
    : latent_dim_(latent_dim),
      tracers_(tracers),
      condition_dim_(condition_dim),
      steps_(sched.steps()),
      output_(cfg.output),
      alpha_bar_(sched.alpha_bar) {
  const std::size_t steps = steps_;
  if (cfg.hidden == 0) throw std::invalid_argument("denoiser: hidden must be > 0");
  const std::size_t in = latent_dim * tracers + condition_dim + steps;
  const std::size_t widths[] = {in, cfg.hidden, cfg.hidden, latent_dim * tracers};
  for (std::size_t l = 0; l < 3; ++l) {
    auto sub = init.child("fc" + std::to_string(l));
    layers_.push_back(
        {sub.fan_in("weight", Shape{widths[l], widths[l + 1]}, widths[l]),
         sub.constant("bias", Shape{widths[l + 1]}, 0.0)});
  }
}

template <typename T>
Var<T> Denoiser<T>::predict(const Var<T>& latent, std::size_t t,
                            const Var<T>& condition) const {
  if (latent.value().size() != latent_size()) {
    throw ShapeError("denoiser: latent " + shape_string(latent.shape()) +
                     " does not hold d*N = " + std::to_string(latent_size()));
  }
  if (condition.shape() != Shape{condition_dim_}) {
    throw ShapeError("denoiser: condition " + shape_string(condition.shape()) +
                     " expected {" + std::to_string(condition_dim_) + "}");
  }
  if (t < 1 || t > steps_) throw std::out_of_range("denoiser: bad timestep");
  Tensor<T> one_hot(Shape{steps_});
  one_hot[t - 1] = T{1};
  Var<T> h = ops::concat_last<T>({ops::reshape(latent, Shape{latent_size()}),
                                  condition, Var<T>::constant(one_hot)});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = ops::linear(h, layers_[l].weight->var(), layers_[l].bias->var());
    if (l + 1 < layers_.size()) h = ops::gelu(h);
  }
  h = ops::reshape(h, latent.shape());
  if (output_ == DenoiserOutput::noise) return h;
  const double ab = alpha_bar_[t];
  if (ab >= 1.0) return ops::scale(h, T{0});
  return ops::scale(ops::sub(latent, ops::scale(h, static_cast<T>(std::sqrt(ab)))),
                    static_cast<T>(1.0 / std::sqrt(1.0 - ab)));
}

template <typename T>
Var<T> denoise_full(const Var<T>& start, const Var<T>& condition,
                    const Denoiser<T>& denoiser,
                    const DiffusionSchedule& sched) {
  Var<T> x = start;
  for (std::size_t t = sched.steps(); t >= 1; --t) {
    x = reverse_step(x, denoiser.predict(x, t, condition), t, sched);
  }
  return x;
}

template <typename T>
Var<T> loss_dm(const Var<T>& latent_hat, const Var<T>& latent) {
  return ops::mean_abs_diff(latent_hat, latent);
}

#define MSCDT_INSTANTIATE(T)                                                   \
  template Var<T> forward_sample(const Var<T>&, const DiffusionSchedule&,      \
                                 std::size_t, const Tensor<T>&);               \
  template Var<T> reverse_step(const Var<T>&, const Var<T>&, std::size_t,      \
                               const DiffusionSchedule&);                      \
  template Tensor<T> gaussian(Shape, CounterRng&);                             \
  template class Denoiser<T>;                                                  \
  template Var<T> denoise_full(const Var<T>&, const Var<T>&,                   \
                               const Denoiser<T>&, const DiffusionSchedule&);  \
  template Var<T> loss_dm(const Var<T>&, const Var<T>&);

MSCDT_INSTANTIATE(float)
MSCDT_INSTANTIATE(double)
#undef MSCDT_INSTANTIATE

}  // namespace mscdt::diffusion
