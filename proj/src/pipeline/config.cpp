#include "mscdt/pipeline/config.hpp"

#include <stdexcept>

namespace mscdt::pipeline {

using nlohmann::json;

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw std::invalid_argument("unknown precision '" + s + "' (expected f32 or f64)");
}

void ModelConfig::validate() const {
  unet.validate();
  lpeb.validate();
  if (lpeb.latent_dim != unet.latent_dim) {
    throw std::invalid_argument("model: lpeb.latent_dim must equal unet.latent_dim");
  }
  if (unet.input_channels != 2) {
    throw std::invalid_argument("model: the transformer takes (dual, masked dual)");
  }
  if (schedule.steps < 1) throw std::invalid_argument("model: schedule steps must be >= 1");
  diffusion::build_schedule(schedule);  // range checks
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.unet = transformer::UNetConfig{};
  c.lpeb.channels = 16;
  c.lpeb.latent_dim = c.unet.latent_dim;
  c.denoiser.hidden = 128;
  return c;
}

ModelConfig ModelConfig::reference() {
  ModelConfig c;
  c.unet = transformer::UNetConfig::reference();
  c.lpeb.channels = 64;
  c.lpeb.latent_dim = c.unet.latent_dim;
  c.denoiser.hidden = 512;
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  texture.validate();
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (threads < 1) throw std::invalid_argument("train: threads must be >= 1");
  if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("train: lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
  }
  if (!(teacher_forcing >= 0.0 && teacher_forcing <= 1.0)) {
    throw std::invalid_argument("train: teacher_forcing must lie in [0, 1]");
  }
}

void to_json(json& j, const texture::TextureConfig& c) {
  j = json{{"tau", c.tau}, {"alpha", c.alpha}};
}

void from_json(const json& j, texture::TextureConfig& c) {
  c.tau = j.value("tau", c.tau);
  c.alpha = j.value("alpha", c.alpha);
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"unet",
            {{"levels", c.unet.levels},
             {"heads", c.unet.heads},
             {"channels", c.unet.channels},
             {"blocks", c.unet.blocks},
             {"gdfn_expansion", c.unet.gdfn_expansion},
             {"tracers", c.unet.tracers},
             {"latent_dim", c.unet.latent_dim},
             {"input_channels", c.unet.input_channels},
             {"input_skip", c.unet.input_skip},
             {"residual_init_scale", c.unet.residual_init_scale}}},
           {"lpeb",
            {{"channels", c.lpeb.channels},
             {"latent_dim", c.lpeb.latent_dim},
             {"residual_blocks", c.lpeb.residual_blocks},
             {"unshuffle", c.lpeb.unshuffle},
             {"leaky_slope", c.lpeb.leaky_slope}}},
           {"denoiser",
            {{"hidden", c.denoiser.hidden},
             {"output", c.denoiser.output == diffusion::DenoiserOutput::clean ? "clean" : "noise"}}},
           {"schedule",
            {{"steps", c.schedule.steps},
             {"beta_start", c.schedule.beta_start},
             {"beta_end", c.schedule.beta_end}}},
           {"init_seed", c.init_seed}};
}

void from_json(const json& j, ModelConfig& c) {
  if (j.contains("unet")) {
    const auto& u = j.at("unet");
    c.unet.levels = u.value("levels", c.unet.levels);
    c.unet.heads = u.value("heads", c.unet.heads);
    c.unet.channels = u.value("channels", c.unet.channels);
    c.unet.blocks = u.value("blocks", c.unet.blocks);
    c.unet.gdfn_expansion = u.value("gdfn_expansion", c.unet.gdfn_expansion);
    c.unet.tracers = u.value("tracers", c.unet.tracers);
    c.unet.latent_dim = u.value("latent_dim", c.unet.latent_dim);
    c.unet.input_channels = u.value("input_channels", c.unet.input_channels);
    c.unet.input_skip = u.value("input_skip", c.unet.input_skip);
    c.unet.residual_init_scale = u.value("residual_init_scale", c.unet.residual_init_scale);
    c.lpeb.latent_dim = c.unet.latent_dim;
  }
  if (j.contains("lpeb")) {
    const auto& l = j.at("lpeb");
    c.lpeb.channels = l.value("channels", c.lpeb.channels);
    c.lpeb.latent_dim = l.value("latent_dim", c.lpeb.latent_dim);
    c.lpeb.residual_blocks = l.value("residual_blocks", c.lpeb.residual_blocks);
    c.lpeb.unshuffle = l.value("unshuffle", c.lpeb.unshuffle);
    c.lpeb.leaky_slope = l.value("leaky_slope", c.lpeb.leaky_slope);
  }
  if (j.contains("denoiser")) {
    const auto& d = j.at("denoiser");
    c.denoiser.hidden = d.value("hidden", c.denoiser.hidden);
    if (d.contains("output")) {
      const std::string o = d.at("output");
      if (o != "clean" && o != "noise") {
        throw std::invalid_argument("denoiser.output must be 'clean' or 'noise'");
      }
      c.denoiser.output = o == "clean" ? diffusion::DenoiserOutput::clean
                                       : diffusion::DenoiserOutput::noise;
    }
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    c.schedule.steps = s.value("steps", c.schedule.steps);
    c.schedule.beta_start = s.value("beta_start", c.schedule.beta_start);
    c.schedule.beta_end = s.value("beta_end", c.schedule.beta_end);
  }
  c.init_seed = j.value("init_seed", c.init_seed);
}

void to_json(json& j, const TrainConfig& c) {
  json tex;
  to_json(tex, c.texture);
  j = json{{"model", c.model},
           {"adam",
            {{"learning_rate", c.adam.learning_rate},
             {"beta1", c.adam.beta1},
             {"beta2", c.adam.beta2},
             {"epsilon", c.adam.epsilon}}},
           {"steps", c.steps},
           {"batch", c.batch},
           {"seed", c.seed},
           {"precision", precision_name(c.precision)},
           {"texture", tex},
           {"teacher_forcing", c.teacher_forcing},
           {"weight_dm", c.weight_dm},
           {"weight_tm", c.weight_tm},
           {"weight_eps", c.weight_eps},
           {"threads", c.threads}};
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.learning_rate = a.value("learning_rate", c.adam.learning_rate);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.epsilon = a.value("epsilon", c.adam.epsilon);
  }
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision"));
  if (j.contains("texture")) from_json(j.at("texture"), c.texture);
  c.teacher_forcing = j.value("teacher_forcing", c.teacher_forcing);
  c.weight_dm = j.value("weight_dm", c.weight_dm);
  c.weight_tm = j.value("weight_tm", c.weight_tm);
  c.weight_eps = j.value("weight_eps", c.weight_eps);
  c.threads = j.value("threads", c.threads);
}

}  // namespace mscdt::pipeline
