#pragma once

#include <cstddef>
#include <vector>

#include "mscdt/numerics/init.hpp"
#include "mscdt/numerics/ops.hpp"
#include "mscdt/numerics/rng.hpp"

namespace mscdt::diffusion {

struct ScheduleConfig {
  std::size_t steps = 4;
  double beta_start = 0.1;
  double beta_end = 0.99;
};

/// Noise schedule indexed by t = 1..T; index 0 of alpha_bar is the clean
/// state (alpha_bar_0 = 1).
struct DiffusionSchedule {
  std::vector<double> beta;       // [1..T] stored at [t-1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // [0..T]; alpha_bar[t] = alpha_t * alpha_bar[t-1]

  std::size_t steps() const noexcept { return beta.size(); }
  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t); }
};

/// Linearly spaced betas from beta_start to beta_end over T steps.
DiffusionSchedule build_schedule(std::size_t steps, double beta_start,
                                 double beta_end);
inline DiffusionSchedule build_schedule(const ScheduleConfig& cfg) {
  return build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
}

/// L_t = sqrt(abar_t) L + sqrt(1 - abar_t) eps
template <typename T>
Var<T> forward_sample(const Var<T>& latent, const DiffusionSchedule& sched,
                      std::size_t t, const Tensor<T>& eps);

/// L_{t-1} = (L_t - eps_hat (1 - alpha_t) / sqrt(1 - abar_t)) / sqrt(alpha_t).
/// Deterministic; throws when abar_t == 1 and eps_hat is non-zero.
template <typename T>
Var<T> reverse_step(const Var<T>& latent_t, const Var<T>& eps_hat,
                    std::size_t t, const DiffusionSchedule& sched);

/// Unit-Gaussian tensor drawn from `rng`.
template <typename T>
Tensor<T> gaussian(Shape shape, CounterRng& rng);

enum class DenoiserOutput { clean, noise };

struct DenoiserConfig {
  std::size_t hidden = 128;
  /// clean: the MLP predicts L_0 and eps_hat = (L_t - sqrt(ab_t) L_0) / sqrt(1 - ab_t).
  /// noise: the MLP output is eps_hat.
  DenoiserOutput output = DenoiserOutput::clean;
};

/// MLP noise estimator over [flatten(L_t), condition, one_hot(t)].
template <typename T>
class Denoiser {
 public:
  Denoiser(Initializer<T> init, std::size_t latent_dim, std::size_t tracers,
           std::size_t condition_dim, const DiffusionSchedule& sched,
           const DenoiserConfig& cfg);

  /// Noise estimate with the shape of `latent` ({d, N}).
  Var<T> predict(const Var<T>& latent, std::size_t t,
                 const Var<T>& condition) const;

  std::size_t latent_size() const noexcept { return latent_dim_ * tracers_; }

 private:
  struct Layer {
    Parameter<T>* weight;
    Parameter<T>* bias;
  };
  std::size_t latent_dim_, tracers_, condition_dim_, steps_;
  DenoiserOutput output_;
  std::vector<double> alpha_bar_;
  std::vector<Layer> layers_;
};

/// T reverse steps from `start` (the state at step T) down to t = 0.
template <typename T>
Var<T> denoise_full(const Var<T>& start, const Var<T>& condition,
                    const Denoiser<T>& denoiser,
                    const DiffusionSchedule& sched);

/// Mean absolute error over all d * N latent elements.
template <typename T>
Var<T> loss_dm(const Var<T>& latent_hat, const Var<T>& latent);

}  // namespace mscdt::diffusion
