#pragma once

#include <cstddef>
#include <vector>

#include "mscdt/numerics/init.hpp"
#include "mscdt/numerics/ops.hpp"

namespace mscdt::latent_prior {

struct LpebConfig {
  std::size_t channels = 64;
  std::size_t latent_dim = 256;
  std::size_t residual_blocks = 2;
  std::size_t unshuffle = 2;
  double leaky_slope = 0.1;
  void validate() const;
};

/// Conv trunk over a 2-channel image pair followed by one linear head per
/// output column:
///   stack -> pixel_unshuffle -> conv3x3 -> LReLU -> residual blocks ->
///   global average pool -> linear head.
template <typename T>
class PriorEncoder {
 public:
  PriorEncoder(Initializer<T> init, const LpebConfig& cfg, std::size_t heads);

  const LpebConfig& config() const noexcept { return cfg_; }
  std::size_t head_count() const noexcept { return heads_.size(); }

  /// Pooled trunk features, shape {channels}.
  Var<T> trunk(const Var<T>& first, const Var<T>& second) const;
  /// Head k applied to pooled features, shape {latent_dim}.
  Var<T> head(std::size_t k, const Var<T>& pooled) const;

  /// Zeroes every head's weight and bias.
  void zero_heads();

 private:
  struct Residual {
    Parameter<T>* conv1;
    Parameter<T>* bias1;
    Parameter<T>* conv2;
    Parameter<T>* bias2;
  };
  struct Head {
    Parameter<T>* weight;
    Parameter<T>* bias;
  };

  LpebConfig cfg_;
  Parameter<T>* stem_ = nullptr;
  Parameter<T>* stem_bias_ = nullptr;
  std::vector<Residual> blocks_;
  std::vector<Head> heads_;
};

/// One column per tracer: column k comes from (dual, singles[k]) through the
/// shared trunk and head k. Result shape {d, N}.
template <typename T>
Var<T> extract_msp(const PriorEncoder<T>& enc, const Var<T>& dual,
                   const std::vector<Var<T>>& singles);

/// Condition vector from (dual, dual masked by its texture), shape {d}.
/// Uses a single-head encoder with its own parameters.
template <typename T>
Var<T> extract_condition(const PriorEncoder<T>& enc, const Var<T>& dual,
                         const Var<T>& masked_dual);

/// The four linear maps feeding one prior-modulated normalization.
template <typename T>
struct Modulation {
  Parameter<T>* scale_weight = nullptr;  // {d*N, C}
  Parameter<T>* scale_bias = nullptr;    // {C}
  Parameter<T>* shift_weight = nullptr;  // {d*N, C}
  Parameter<T>* shift_bias = nullptr;    // {C}

  /// scale = 1 + small, shift = small.
  static Modulation create(Initializer<T> init, std::size_t prior_size,
                           std::size_t channels);
};

/// M' = (W1 L) * Norm(M) + (W2 L) with the per-channel scale and shift
/// broadcast over every spatial position; Norm is over the last axis.
template <typename T>
Var<T> modulate(const Var<T>& features, const Var<T>& prior_flat,
                const Var<T>& scale_weight, const Var<T>& scale_bias,
                const Var<T>& shift_weight, const Var<T>& shift_bias);

template <typename T>
Var<T> modulate(const Var<T>& features, const Var<T>& prior_flat,
                const Modulation<T>& maps);

}  // namespace mscdt::latent_prior
