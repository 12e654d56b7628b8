#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "pfseg/tensor.hpp"

namespace pfseg {

/// SGD with momentum and L2 weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
template <class T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {
    if (momentum < 0 || weight_decay < 0) throw std::invalid_argument("sgd: momentum and weight decay must be >= 0");
  }

  /// Updates every parameter that has an entry in grads.
  void step(std::map<std::string, Tensor<T>>& params, const std::map<std::string, Tensor<T>>& grads, double lr) {
    if (!(lr > 0)) throw std::invalid_argument("sgd: learning rate must be positive");
    for (const auto& [name, g] : grads) {
      auto it = params.find(name);
      if (it == params.end()) throw std::invalid_argument("sgd: gradient for unknown parameter " + name);
      Tensor<T>& p = it->second;
      if (p.shape() != g.shape())
        throw ShapeError("sgd: parameter " + name + " has shape " + shape_string(p.shape()) + " but gradient " +
                         shape_string(g.shape()));
      auto [vit, inserted] = velocity_.try_emplace(name, p.shape(), T{0});
      Tensor<T>& v = vit->second;
      const T m = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), rate = static_cast<T>(lr);
      for (std::size_t i = 0; i < p.numel(); ++i) {
        v[i] = m * v[i] + g[i] + wd * p[i];
        p[i] -= rate * v[i];
      }
    }
  }

  std::map<std::string, Tensor<T>>& velocity() { return velocity_; }
  const std::map<std::string, Tensor<T>>& velocity() const { return velocity_; }

 private:
  double momentum_, weight_decay_;
  std::map<std::string, Tensor<T>> velocity_;
};

}  // namespace pfseg
