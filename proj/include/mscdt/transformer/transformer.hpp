#pragma once

#include <cstddef>
#include <vector>

#include "mscdt/latent_prior/lpeb.hpp"
#include "mscdt/numerics/init.hpp"
#include "mscdt/numerics/ops.hpp"

namespace mscdt::transformer {

struct UNetConfig {
  std::size_t levels = 2;
  std::vector<std::size_t> heads = {1, 2};
  std::vector<std::size_t> channels = {8, 16};
  std::vector<std::size_t> blocks = {1, 1};
  double gdfn_expansion = 2.0;
  std::size_t tracers = 2;
  std::size_t latent_dim = 32;
  std::size_t input_channels = 2;
  /// Head conv also sees the raw input channels.
  bool input_skip = true;
  /// Multiplies the initial block output projections.
  double residual_init_scale = 0.01;

  void validate() const;
  /// Spatial extents must be divisible by this.
  std::size_t downsample_factor() const { return std::size_t{1} << (levels - 1); }

  /// Four levels, heads [1, 2, 4, 8], channels [48, 96, 192, 384],
  /// blocks [3, 5, 6, 6], d = 256.
  static UNetConfig reference();
};

/// Parameters of one prior-modulated transformer block.
template <typename T>
struct BlockParams {
  latent_prior::Modulation<T> attn_mod;
  latent_prior::Modulation<T> ffn_mod;
  // transposed attention
  Parameter<T>* q_pointwise;  // {C, C}
  Parameter<T>* k_pointwise;
  Parameter<T>* v_pointwise;
  Parameter<T>* q_depthwise;  // {3, 3, C}
  Parameter<T>* k_depthwise;
  Parameter<T>* v_depthwise;
  Parameter<T>* attn_out;     // {C, C}
  Parameter<T>* gamma;        // {heads}
  // gated feed-forward
  Parameter<T>* gate_pointwise;   // {C, hidden}
  Parameter<T>* gate_depthwise;   // {3, 3, hidden}
  Parameter<T>* value_pointwise;  // {C, hidden}
  Parameter<T>* value_depthwise;  // {3, 3, hidden}
  Parameter<T>* ffn_out;          // {hidden, C}

  std::size_t channels = 0;
  std::size_t heads = 1;
  std::size_t hidden = 0;

  static BlockParams create(Initializer<T> init, std::size_t channels,
                            std::size_t heads, double expansion,
                            std::size_t prior_size);
  /// Zero the attention and feed-forward output projections.
  void zero_output_projections();
  void scale_output_projections(T factor);
};

/// Collects per-head attention matrices during a forward pass.
template <typename T>
struct AttentionProbe {
  std::vector<Tensor<T>> maps;
};

/// W_out(A V) + residual with Q, K, V = depthwise3x3(pointwise(M')).
template <typename T>
Var<T> mdta(const Var<T>& modulated, const Var<T>& residual,
            const BlockParams<T>& p, AttentionProbe<T>* probe = nullptr);

/// W_out(GELU(dw1(pw1 M')) * dw2(pw2 M')) + residual.
template <typename T>
Var<T> gdfn(const Var<T>& modulated, const Var<T>& residual,
            const BlockParams<T>& p);

/// M -> modulate -> mdta (+M) -> modulate -> gdfn (+residual).
template <typename T>
Var<T> transformer_block(const Var<T>& features, const Var<T>& prior_flat,
                         const BlockParams<T>& p,
                         AttentionProbe<T>* probe = nullptr);

/// Encoder-decoder over (dual, masked dual) conditioned on the latent prior.
template <typename T>
class UNet {
 public:
  UNet(Initializer<T> init, const UNetConfig& cfg);

  const UNetConfig& config() const noexcept { return cfg_; }

  /// Returns one {H, W} image per tracer.
  std::vector<Var<T>> forward(const Var<T>& dual, const Var<T>& masked_dual,
                              const Var<T>& prior,
                              AttentionProbe<T>* probe = nullptr) const;

  /// Zero every block's output projections (mdta and gdfn).
  void zero_block_outputs();

  std::vector<BlockParams<T>>& encoder_blocks(std::size_t level) {
    return encoder_.at(level);
  }

 private:
  UNetConfig cfg_;
  Parameter<T>* stem_;
  Parameter<T>* stem_bias_;
  std::vector<std::vector<BlockParams<T>>> encoder_;  // per level
  std::vector<std::vector<BlockParams<T>>> decoder_;  // per level < levels-1
  std::vector<Parameter<T>*> down_;                   // {4 c_i, c_{i+1}}
  std::vector<Parameter<T>*> up_;                     // {c_{i+1}, 4 c_i}
  std::vector<Parameter<T>*> skip_fuse_;              // {2 c_i, c_i}
  Parameter<T>* head_;
  Parameter<T>* head_bias_;
};

}  // namespace mscdt::transformer
