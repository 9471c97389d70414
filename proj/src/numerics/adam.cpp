#include "mscdt/numerics/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace mscdt {

template <typename T>
void adam_update(Parameter<T>& param, Tensor<T>& first_moment,
                 Tensor<T>& second_moment, const AdamConfig& cfg,
                 std::uint64_t step) {
  if (step < 1) throw std::invalid_argument("adam_update: step must be >= 1");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.learning_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  const T inv_bc1 = static_cast<T>(1.0 / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  auto& value = param.value;
  const auto& grad = param.grad;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const T g = grad[i];
    first_moment[i] = b1 * first_moment[i] + (T(1) - b1) * g;
    second_moment[i] = b2 * second_moment[i] + (T(1) - b2) * g * g;
    const T m_hat = first_moment[i] * inv_bc1;
    const T v_hat = second_moment[i] * inv_bc2;
    value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

template <typename T>
Adam<T>::Adam(const ParameterStore<T>& store, AdamConfig cfg)
    : store_(&store), cfg_(cfg) {
  m_.reserve(store.size());
  v_.reserve(store.size());
  for (const auto& p : store) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  for (std::size_t i = 0; i < store_->size(); ++i) {
    adam_update((*store_)[i], m_[i], v_[i], cfg_, steps_);
  }
}

template void adam_update(Parameter<float>&, Tensor<float>&, Tensor<float>&,
                          const AdamConfig&, std::uint64_t);
template void adam_update(Parameter<double>&, Tensor<double>&,
                          Tensor<double>&, const AdamConfig&, std::uint64_t);
template class Adam<float>;
template class Adam<double>;

}  // namespace mscdt
