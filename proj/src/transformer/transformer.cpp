#include "mscdt/transformer/transformer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mscdt::transformer {

using ops::ConvMode;

void UNetConfig::validate() const {
  if (levels < 1) throw std::invalid_argument("unet: levels must be >= 1");
  if (heads.size() != levels || channels.size() != levels ||
      blocks.size() != levels) {
    throw std::invalid_argument(
        "unet: heads/channels/blocks must each have one entry per level");
  }
  for (std::size_t i = 0; i < levels; ++i) {
    if (channels[i] == 0 || heads[i] == 0 || channels[i] % heads[i] != 0) {
      throw std::invalid_argument("unet: level " + std::to_string(i) + " has " +
                                  std::to_string(heads[i]) +
                                  " heads not dividing " +
                                  std::to_string(channels[i]) + " channels");
    }
  }
  if (gdfn_expansion < 1.0) {
    throw std::invalid_argument("unet: gdfn_expansion must be >= 1");
  }
  if (tracers == 0 || latent_dim == 0 || input_channels == 0) {
    throw std::invalid_argument("unet: tracers, latent_dim, input_channels must be > 0");
  }
  if (!(residual_init_scale >= 0.0)) {
    throw std::invalid_argument("unet: residual_init_scale must be >= 0");
  }
}

UNetConfig UNetConfig::reference() {
  UNetConfig c;
  c.levels = 4;
  c.heads = {1, 2, 4, 8};
  c.channels = {48, 96, 192, 384};
  c.blocks = {3, 5, 6, 6};
  c.latent_dim = 256;
  return c;
}

template <typename T>
BlockParams<T> BlockParams<T>::create(Initializer<T> init, std::size_t channels,
                                      std::size_t heads, double expansion,
                                      std::size_t prior_size) {
  BlockParams p;
  p.channels = channels;
  p.heads = heads;
  p.hidden = static_cast<std::size_t>(std::lround(expansion * static_cast<double>(channels)));
  const std::size_t c = channels, h = p.hidden;
  p.attn_mod = latent_prior::Modulation<T>::create(init.child("attn_mod"), prior_size, c);
  p.ffn_mod = latent_prior::Modulation<T>::create(init.child("ffn_mod"), prior_size, c);
  auto a = init.child("mdta");
  p.q_pointwise = a.fan_in("q_proj", Shape{c, c}, c);
  p.k_pointwise = a.fan_in("k_proj", Shape{c, c}, c);
  p.v_pointwise = a.fan_in("v_proj", Shape{c, c}, c);
  p.q_depthwise = a.fan_in("q_dw", Shape{3, 3, c}, 9);
  p.k_depthwise = a.fan_in("k_dw", Shape{3, 3, c}, 9);
  p.v_depthwise = a.fan_in("v_dw", Shape{3, 3, c}, 9);
  p.attn_out = a.fan_in("out_proj", Shape{c, c}, c);
  p.gamma = a.constant("gamma", Shape{heads}, 1.0);
  auto f = init.child("gdfn");
  p.gate_pointwise = f.fan_in("gate_proj", Shape{c, h}, c);
  p.gate_depthwise = f.fan_in("gate_dw", Shape{3, 3, h}, 9);
  p.value_pointwise = f.fan_in("value_proj", Shape{c, h}, c);
  p.value_depthwise = f.fan_in("value_dw", Shape{3, 3, h}, 9);
  p.ffn_out = f.fan_in("out_proj", Shape{h, c}, h);
  return p;
}

template <typename T>
void BlockParams<T>::zero_output_projections() {
  scale_output_projections(T{0});
}

template <typename T>
void BlockParams<T>::scale_output_projections(T factor) {
  for (auto& v : attn_out->value.data()) v *= factor;
  for (auto& v : ffn_out->value.data()) v *= factor;
}

template <typename T>
Var<T> mdta(const Var<T>& modulated, const Var<T>& residual,
            const BlockParams<T>& p, AttentionProbe<T>* probe) {
  auto project = [&](Parameter<T>* pw, Parameter<T>* dw) {
    return ops::conv2d(ops::conv2d(modulated, pw->var(), ConvMode::pointwise_1x1),
                       dw->var(), ConvMode::depthwise_3x3);
  };
  const Var<T> q = project(p.q_pointwise, p.q_depthwise);
  const Var<T> k = project(p.k_pointwise, p.k_depthwise);
  const Var<T> v = project(p.v_pointwise, p.v_depthwise);
  const Var<T> attended = ops::channel_attention(
      q, k, v, p.gamma->var(), p.heads, probe ? &probe->maps : nullptr);
  return ops::add(ops::conv2d(attended, p.attn_out->var(), ConvMode::pointwise_1x1),
                  residual);
}

template <typename T>
Var<T> gdfn(const Var<T>& modulated, const Var<T>& residual,
            const BlockParams<T>& p) {
  const Var<T> gate = ops::conv2d(
      ops::conv2d(modulated, p.gate_pointwise->var(), ConvMode::pointwise_1x1),
      p.gate_depthwise->var(), ConvMode::depthwise_3x3);
  const Var<T> value = ops::conv2d(
      ops::conv2d(modulated, p.value_pointwise->var(), ConvMode::pointwise_1x1),
      p.value_depthwise->var(), ConvMode::depthwise_3x3);
  const Var<T> gated = ops::mul(ops::gelu(gate), value);
  return ops::add(ops::conv2d(gated, p.ffn_out->var(), ConvMode::pointwise_1x1),
                  residual);
}

template <typename T>
Var<T> transformer_block(const Var<T>& features, const Var<T>& prior_flat,
                         const BlockParams<T>& p, AttentionProbe<T>* probe) {
  const Var<T> attn_in = latent_prior::modulate(features, prior_flat, p.attn_mod);
  const Var<T> after_attn = mdta(attn_in, features, p, probe);
  const Var<T> ffn_in = latent_prior::modulate(after_attn, prior_flat, p.ffn_mod);
  return gdfn(ffn_in, after_attn, p);
}

template <typename T>
UNet<T>::UNet(Initializer<T> init, const UNetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto& c = cfg_.channels;
  const std::size_t prior = cfg_.latent_dim * cfg_.tracers;
  const std::size_t cin = cfg_.input_channels;
  stem_ = init.fan_in("stem", Shape{3, 3, cin, c[0]}, 9 * cin);
  stem_bias_ = init.constant("stem_bias", Shape{c[0]}, 0.0);
  encoder_.resize(cfg_.levels);
  decoder_.resize(cfg_.levels - 1);
  for (std::size_t l = 0; l < cfg_.levels; ++l) {
    auto level = init.child("level" + std::to_string(l));
    for (std::size_t b = 0; b < cfg_.blocks[l]; ++b) {
      encoder_[l].push_back(BlockParams<T>::create(
          level.child("enc" + std::to_string(b)), c[l], cfg_.heads[l],
          cfg_.gdfn_expansion, prior));
    }
    if (l + 1 < cfg_.levels) {
      down_.push_back(level.fan_in("down", Shape{4 * c[l], c[l + 1]}, 4 * c[l]));
      up_.push_back(level.fan_in("up", Shape{c[l + 1], 4 * c[l]}, c[l + 1]));
      skip_fuse_.push_back(level.fan_in("skip_fuse", Shape{2 * c[l], c[l]}, 2 * c[l]));
      for (std::size_t b = 0; b < cfg_.blocks[l]; ++b) {
        decoder_[l].push_back(BlockParams<T>::create(
            level.child("dec" + std::to_string(b)), c[l], cfg_.heads[l],
            cfg_.gdfn_expansion, prior));
      }
    }
  }
  const std::size_t head_in = c[0] + (cfg_.input_skip ? cin : 0);
  head_ = init.fan_in("head", Shape{3, 3, head_in, cfg_.tracers}, 9 * head_in);
  head_bias_ = init.constant("head_bias", Shape{cfg_.tracers}, 0.0);
  if (cfg_.residual_init_scale != 1.0) {
    const T s = static_cast<T>(cfg_.residual_init_scale);
    for (auto& level : encoder_)
      for (auto& b : level) b.scale_output_projections(s);
    for (auto& level : decoder_)
      for (auto& b : level) b.scale_output_projections(s);
  }
}

template <typename T>
std::vector<Var<T>> UNet<T>::forward(const Var<T>& dual,
                                     const Var<T>& masked_dual,
                                     const Var<T>& prior,
                                     AttentionProbe<T>* probe) const {
  if (dual.shape().size() != 2 || dual.shape() != masked_dual.shape()) {
    throw ShapeError("unet: inputs must be equal {H, W} images");
  }
  const std::size_t f = cfg_.downsample_factor();
  if (dual.shape()[0] % f != 0 || dual.shape()[1] % f != 0) {
    throw ShapeError("unet: extents " + shape_string(dual.shape()) +
                     " not divisible by " + std::to_string(f));
  }
  const std::size_t prior_size = cfg_.latent_dim * cfg_.tracers;
  if (prior.value().size() != prior_size) {
    throw ShapeError("unet: prior " + shape_string(prior.shape()) +
                     " does not hold d*N = " + std::to_string(prior_size));
  }
  const Var<T> prior_flat = ops::reshape(prior, Shape{prior_size});

  const Var<T> input = ops::stack_last<T>({dual, masked_dual});
  Var<T> x = ops::add_channel_bias(ops::conv2d(input, stem_->var(), ConvMode::full_3x3),
                            stem_bias_->var());
  std::vector<Var<T>> skips;
  for (std::size_t l = 0; l < cfg_.levels; ++l) {
    for (const auto& blk : encoder_[l]) x = transformer_block(x, prior_flat, blk, probe);
    if (l + 1 < cfg_.levels) {
      skips.push_back(x);
      x = ops::conv2d(ops::pixel_unshuffle(x, 2), down_[l]->var(),
                      ConvMode::pointwise_1x1);
    }
  }
  for (std::size_t l = cfg_.levels - 1; l-- > 0;) {
    x = ops::pixel_shuffle(ops::conv2d(x, up_[l]->var(), ConvMode::pointwise_1x1), 2);
    x = ops::conv2d(ops::concat_last<T>({x, skips[l]}), skip_fuse_[l]->var(),
                    ConvMode::pointwise_1x1);
    for (const auto& blk : decoder_[l]) x = transformer_block(x, prior_flat, blk, probe);
  }
  if (cfg_.input_skip) x = ops::concat_last<T>({x, input});
  x = ops::add_channel_bias(ops::conv2d(x, head_->var(), ConvMode::full_3x3),
                            head_bias_->var());
  std::vector<Var<T>> out;
  out.reserve(cfg_.tracers);
  for (std::size_t k = 0; k < cfg_.tracers; ++k) out.push_back(ops::slice_last(x, k));
  return out;
}

template <typename T>
void UNet<T>::zero_block_outputs() {
  for (auto& level : encoder_) {
    for (auto& b : level) b.zero_output_projections();
  }
  for (auto& level : decoder_) {
    for (auto& b : level) b.zero_output_projections();
  }
}

#define MSCDT_INSTANTIATE(T)                                                   \
  template struct BlockParams<T>;                                              \
  template Var<T> mdta(const Var<T>&, const Var<T>&, const BlockParams<T>&,    \
                       AttentionProbe<T>*);                                    \
  template Var<T> gdfn(const Var<T>&, const Var<T>&, const BlockParams<T>&);   \
  template Var<T> transformer_block(const Var<T>&, const Var<T>&,              \
                                    const BlockParams<T>&, AttentionProbe<T>*); \
  template class UNet<T>;

MSCDT_INSTANTIATE(float)
MSCDT_INSTANTIATE(double)
#undef MSCDT_INSTANTIATE

}  // namespace mscdt::transformer
