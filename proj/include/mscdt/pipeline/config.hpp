#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mscdt/diffusion/diffusion.hpp"
#include "mscdt/latent_prior/lpeb.hpp"
#include "mscdt/numerics/adam.hpp"
#include "mscdt/texture/texture.hpp"
#include "mscdt/transformer/transformer.hpp"

namespace mscdt::pipeline {

enum class Precision { f32, f64 };

std::string precision_name(Precision p);
Precision parse_precision(const std::string& s);

/// Everything needed to rebuild a model's architecture and initial weights.
struct ModelConfig {
  transformer::UNetConfig unet;
  latent_prior::LpebConfig lpeb;
  diffusion::DenoiserConfig denoiser;
  diffusion::ScheduleConfig schedule;
  std::uint64_t init_seed = 1;

  std::size_t latent_dim() const noexcept { return unet.latent_dim; }
  std::size_t tracers() const noexcept { return unet.tracers; }
  void validate() const;

  /// Desk-scale configuration: 2 levels, channels [8, 16], blocks [1, 1],
  /// d = 32, N = 2, T = 4, LPEB width 16.
  static ModelConfig toy();
  /// Full-size configuration: 4 levels, heads [1, 2, 4, 8], channels
  /// [48, 96, 192, 384], blocks [3, 5, 6, 6], d = 256, LPEB width 64.
  static ModelConfig reference();
};

struct TrainConfig {
  ModelConfig model = ModelConfig::toy();
  AdamConfig adam;
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::uint64_t seed = 7;
  Precision precision = Precision::f32;
  texture::TextureConfig texture;
  /// Fraction of steps during which the transformer sees the encoded prior
  /// instead of the diffusion rollout.
  double teacher_forcing = 0.25;
  double weight_dm = 1.0;
  double weight_tm = 1.0;
  /// Weight of the single-step noise-prediction term inside LOSS_DM.
  double weight_eps = 1.0;
  std::size_t threads = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const texture::TextureConfig& c);
void from_json(const nlohmann::json& j, texture::TextureConfig& c);

}  // namespace mscdt::pipeline
