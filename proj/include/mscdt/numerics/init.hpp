#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "mscdt/numerics/autograd.hpp"
#include "mscdt/numerics/rng.hpp"

namespace mscdt {

/// Creates named parameters under a dotted prefix. Each parameter draws from
/// its own stream keyed by its full name, so values do not depend on the
/// order in which modules are built.
template <typename T>
class Initializer {
 public:
  Initializer(ParameterStore<T>& store, std::uint64_t seed,
              std::string prefix = {})
      : store_(&store), seed_(seed), prefix_(std::move(prefix)) {}

  Initializer child(std::string_view name) const {
    return Initializer(*store_, seed_, qualify(name));
  }

  const std::string& prefix() const noexcept { return prefix_; }

  Parameter<T>* uniform(std::string_view name, Shape shape, double bound) {
    const std::string full = qualify(name);
    CounterRng rng = CounterRng(seed_).split(full);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return store_->add(full, std::move(t));
  }

  /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual conv/linear default.
  Parameter<T>* fan_in(std::string_view name, Shape shape, std::size_t fan,
                       double gain = 1.0) {
    return uniform(name, std::move(shape),
                   gain / std::sqrt(static_cast<double>(fan)));
  }

  Parameter<T>* constant(std::string_view name, Shape shape, double value) {
    return store_->add(qualify(name),
                       Tensor<T>(std::move(shape), static_cast<T>(value)));
  }

 private:
  std::string qualify(std::string_view name) const {
    return prefix_.empty() ? std::string(name)
                           : prefix_ + "." + std::string(name);
  }

  ParameterStore<T>* store_;
  std::uint64_t seed_;
  std::string prefix_;
};

}  // namespace mscdt
