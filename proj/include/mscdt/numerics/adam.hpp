#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mscdt/numerics/autograd.hpp"

namespace mscdt {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update of `param` from its current gradient.
/// `step` is 1-based; moments are advanced in place.
template <typename T>
void adam_update(Parameter<T>& param, Tensor<T>& first_moment,
                 Tensor<T>& second_moment, const AdamConfig& cfg,
                 std::uint64_t step);

/// Adam state for every parameter of a store, in store order.
template <typename T>
class Adam {
 public:
  Adam(const ParameterStore<T>& store, AdamConfig cfg);

  /// Applies one update to all parameters and advances the step count.
  void step();

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps_taken() const noexcept { return steps_; }
  void set_steps_taken(std::uint64_t s) noexcept { steps_ = s; }

  Tensor<T>& first_moment(std::size_t i) { return m_[i]; }
  Tensor<T>& second_moment(std::size_t i) { return v_[i]; }
  const Tensor<T>& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor<T>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  const ParameterStore<T>* store_;
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor<T>> m_;
  std::vector<Tensor<T>> v_;
};

}  // namespace mscdt
