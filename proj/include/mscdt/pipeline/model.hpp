#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mscdt/evaluation/phantom.hpp"
#include "mscdt/numerics/adam.hpp"
#include "mscdt/pipeline/config.hpp"

namespace mscdt::pipeline {

/// LPEB, condition encoder, denoiser and transformer sharing one store.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterStore<T>& parameters() noexcept { return *store_; }
  const ParameterStore<T>& parameters() const noexcept { return *store_; }

  const latent_prior::PriorEncoder<T>& msp_encoder() const noexcept { return msp_; }
  const latent_prior::PriorEncoder<T>& condition_encoder() const noexcept { return condition_; }
  const diffusion::Denoiser<T>& denoiser() const noexcept { return denoiser_; }
  const transformer::UNet<T>& unet() const noexcept { return unet_; }
  transformer::UNet<T>& unet() noexcept { return unet_; }
  latent_prior::PriorEncoder<T>& msp_encoder() noexcept { return msp_; }
  latent_prior::PriorEncoder<T>& condition_encoder() noexcept { return condition_; }
  const diffusion::DiffusionSchedule& schedule() const noexcept { return schedule_; }

 private:
  ModelConfig cfg_;
  diffusion::DiffusionSchedule schedule_;
  std::unique_ptr<ParameterStore<T>> store_;
  latent_prior::PriorEncoder<T> msp_;
  latent_prior::PriorEncoder<T> condition_;
  diffusion::Denoiser<T> denoiser_;
  transformer::UNet<T> unet_;
};

/// Sum over tracers of L1(I_k, I^_k) + L1(U_k, U^_k), with the texture
/// mask of each target applied to both target and prediction. L1 is the
/// per-image mean absolute error.
template <typename T>
Var<T> loss_tm(const std::vector<Var<T>>& separated,
               const std::vector<Image>& targets,
               const texture::TextureConfig& tex);

/// Plain-value variant used for evaluation.
double loss_tm_value(const std::vector<Image>& separated,
                     const std::vector<Image>& targets,
                     const texture::TextureConfig& tex);

/// Random draws used by one sample's training forward pass.
template <typename T>
struct SampleNoise {
  Tensor<T> rollout_eps;     // noise for L_T
  std::size_t eps_step = 1;  // timestep of the noise-prediction term
  Tensor<T> eps;             // noise for that term
};

template <typename T>
SampleNoise<T> draw_sample_noise(const ModelConfig& cfg, std::uint64_t seed,
                                 std::uint64_t step, std::uint64_t sample);

template <typename T>
struct SampleForward {
  Var<T> total;
  Var<T> dm;
  Var<T> tm;
  Var<T> prior;      // L from the LPEB on ground truth
  Var<T> prior_hat;  // rollout estimate
  std::vector<Var<T>> separated;
};

/// Full training graph for one phantom.
template <typename T>
SampleForward<T> forward_sample_loss(const Model<T>& model,
                                     const evaluation::PhantomPair& sample,
                                     const TrainConfig& cfg,
                                     const SampleNoise<T>& noise,
                                     bool teacher_forcing);

struct StepLosses {
  double total = 0.0;
  double dm = 0.0;
  double tm = 0.0;
};

/// Forward, backward and one Adam update over `batch` (batch mean of the
/// per-sample losses). `step_index` is 0-based and selects the noise
/// streams and the teacher-forcing phase.
template <typename T>
StepLosses train_step(std::span<const evaluation::PhantomPair> batch,
                      Model<T>& model, Adam<T>& optimizer,
                      const TrainConfig& cfg, std::uint64_t step_index);

/// Runs cfg.steps steps, cycling through `corpus` in order.
template <typename T>
std::vector<StepLosses> train(
    Model<T>& model, Adam<T>& optimizer,
    std::span<const evaluation::PhantomPair> corpus, const TrainConfig& cfg,
    const std::function<void(std::uint64_t, const StepLosses&)>& on_step = {});

struct Separation {
  std::vector<Image> fused;
  std::vector<Image> raw;
  Tensor<double> prior;  // {d, N}
  texture::TextureMask dual_mask;
};

/// Inference: condition from the dual image, diffusion rollout from seeded
/// noise, transformer, then texture fusion of each output with its own mask.
template <typename T>
Separation separate(const Model<T>& model, const Image& dual,
                    const texture::TextureConfig& tex, std::uint64_t seed);

}  // namespace mscdt::pipeline
