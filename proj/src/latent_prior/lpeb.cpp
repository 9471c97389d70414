#include "mscdt/latent_prior/lpeb.hpp"

#include <stdexcept>
#include <string>

namespace mscdt::latent_prior {

using ops::ConvMode;

void LpebConfig::validate() const {
  if (channels == 0) throw std::invalid_argument("lpeb: channels must be > 0");
  if (latent_dim == 0) throw std::invalid_argument("lpeb: latent_dim must be > 0");
  if (unshuffle == 0) throw std::invalid_argument("lpeb: unshuffle must be > 0");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) {
    throw std::invalid_argument("lpeb: leaky_slope must lie in (0, 1)");
  }
}

template <typename T>
PriorEncoder<T>::PriorEncoder(Initializer<T> init, const LpebConfig& cfg,
                              std::size_t heads)
    : cfg_(cfg) {
  cfg_.validate();
  if (heads == 0) throw std::invalid_argument("lpeb: needs at least one head");
  const std::size_t c = cfg_.channels;
  const std::size_t in = 2 * cfg_.unshuffle * cfg_.unshuffle;
  stem_ = init.fan_in("stem", Shape{3, 3, in, c}, 9 * in);
  stem_bias_ = init.constant("stem_bias", Shape{c}, 0.0);
  for (std::size_t b = 0; b < cfg_.residual_blocks; ++b) {
    auto sub = init.child("res" + std::to_string(b));
    blocks_.push_back({sub.fan_in("conv1", Shape{3, 3, c, c}, 9 * c),
                       sub.constant("bias1", Shape{c}, 0.0),
                       sub.fan_in("conv2", Shape{3, 3, c, c}, 9 * c, 0.5),
                       sub.constant("bias2", Shape{c}, 0.0)});
  }
  for (std::size_t k = 0; k < heads; ++k) {
    auto sub = init.child("head" + std::to_string(k));
    heads_.push_back({sub.fan_in("weight", Shape{c, cfg_.latent_dim}, c),
                      sub.constant("bias", Shape{cfg_.latent_dim}, 0.0)});
  }
}

template <typename T>
Var<T> PriorEncoder<T>::trunk(const Var<T>& first, const Var<T>& second) const {
  if (first.shape().size() != 2 || first.shape() != second.shape()) {
    throw ShapeError("lpeb: inputs must be equal {H, W} images, got " +
                     shape_string(first.shape()) + " and " +
                     shape_string(second.shape()));
  }
  const T slope = static_cast<T>(cfg_.leaky_slope);
  Var<T> x = ops::stack_last<T>({first, second});
  x = ops::pixel_unshuffle(x, cfg_.unshuffle);
  x = ops::conv2d(x, stem_->var(), ConvMode::full_3x3);
  x = ops::leaky_relu(ops::add_channel_bias(x, stem_bias_->var()), slope);
  for (const auto& b : blocks_) {
    Var<T> r = ops::conv2d(x, b.conv1->var(), ConvMode::full_3x3);
    r = ops::leaky_relu(ops::add_channel_bias(r, b.bias1->var()), slope);
    r = ops::conv2d(r, b.conv2->var(), ConvMode::full_3x3);
    r = ops::add_channel_bias(r, b.bias2->var());
    x = ops::add(x, r);
  }
  return ops::global_avg_pool(x);
}

template <typename T>
Var<T> PriorEncoder<T>::head(std::size_t k, const Var<T>& pooled) const {
  const auto& h = heads_.at(k);
  return ops::linear(pooled, h.weight->var(), h.bias->var());
}

template <typename T>
void PriorEncoder<T>::zero_heads() {
  for (auto& h : heads_) {
    h.weight->value.fill(T{0});
    h.bias->value.fill(T{0});
  }
}

template <typename T>
Var<T> extract_msp(const PriorEncoder<T>& enc, const Var<T>& dual,
                   const std::vector<Var<T>>& singles) {
  if (singles.empty()) throw std::invalid_argument("extract_msp: no tracers");
  if (singles.size() != enc.head_count()) {
    throw std::invalid_argument("extract_msp: " + std::to_string(singles.size()) +
                                " tracers but encoder has " +
                                std::to_string(enc.head_count()) + " heads");
  }
  std::vector<Var<T>> columns;
  columns.reserve(singles.size());
  for (std::size_t k = 0; k < singles.size(); ++k) {
    columns.push_back(enc.head(k, enc.trunk(dual, singles[k])));
  }
  return ops::stack_last(columns);
}

template <typename T>
Var<T> extract_condition(const PriorEncoder<T>& enc, const Var<T>& dual,
                         const Var<T>& masked_dual) {
  return enc.head(0, enc.trunk(dual, masked_dual));
}

template <typename T>
Modulation<T> Modulation<T>::create(Initializer<T> init,
                                    std::size_t prior_size,
                                    std::size_t channels) {
  // Small weights keep the block close to plain normalization at start.
  return {init.fan_in("scale_weight", Shape{prior_size, channels}, prior_size, 0.1),
          init.constant("scale_bias", Shape{channels}, 1.0),
          init.fan_in("shift_weight", Shape{prior_size, channels}, prior_size, 0.1),
          init.constant("shift_bias", Shape{channels}, 0.0)};
}

template <typename T>
Var<T> modulate(const Var<T>& features, const Var<T>& prior_flat,
                const Var<T>& scale_weight, const Var<T>& scale_bias,
                const Var<T>& shift_weight, const Var<T>& shift_bias) {
  if (features.shape().empty()) throw ShapeError("modulate: scalar features");
  const std::size_t channels = features.shape().back();
  if (scale_weight.shape().size() != 2 || scale_weight.shape()[1] != channels ||
      shift_weight.shape() != scale_weight.shape()) {
    throw ShapeError("modulate: maps " + shape_string(scale_weight.shape()) +
                     " do not produce " + std::to_string(channels) +
                     " channels");
  }
  const Var<T> scale = ops::linear(prior_flat, scale_weight, scale_bias);
  const Var<T> shift = ops::linear(prior_flat, shift_weight, shift_bias);
  const Var<T> normed = ops::layer_norm(features, features.shape().size() - 1);
  return ops::channel_affine(normed, scale, shift);
}

template <typename T>
Var<T> modulate(const Var<T>& features, const Var<T>& prior_flat,
                const Modulation<T>& maps) {
  return modulate(features, prior_flat, maps.scale_weight->var(),
                  maps.scale_bias->var(), maps.shift_weight->var(),
                  maps.shift_bias->var());
}

#define MSCDT_INSTANTIATE(T)                                                  \
  template class PriorEncoder<T>;                                             \
  template struct Modulation<T>;                                              \
  template Var<T> extract_msp(const PriorEncoder<T>&, const Var<T>&,          \
                              const std::vector<Var<T>>&);                    \
  template Var<T> extract_condition(const PriorEncoder<T>&, const Var<T>&,    \
                                    const Var<T>&);                           \
  template Var<T> modulate(const Var<T>&, const Var<T>&, const Var<T>&,       \
                           const Var<T>&, const Var<T>&, const Var<T>&);      \
  template Var<T> modulate(const Var<T>&, const Var<T>&, const Modulation<T>&);

MSCDT_INSTANTIATE(float)
MSCDT_INSTANTIATE(double)
#undef MSCDT_INSTANTIATE

}  // namespace mscdt::latent_prior
