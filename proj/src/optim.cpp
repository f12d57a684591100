#include "drtl/optim.hpp"

#include <cmath>
#include <vector>

namespace drtl {

AdaGrad::AdaGrad(double learning_rate, double epsilon) : lr_(learning_rate), eps_(epsilon) {
  if (!(learning_rate > 0.0) || !(epsilon > 0.0)) throw ConfigError("adagrad: learning rate and epsilon must be positive");
}

void AdaGrad::step(std::span<Parameter* const> params) {
  // validate first so a failed step leaves no partial update behind
  for (const Parameter* p : params) {
    if (p->frozen) continue;
    const Tensor* acc = accumulator(p->name);
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      const double g = p->grad[i];
      if (!std::isfinite(g)) {
        throw NumericError("adagrad: non-finite gradient in parameter '" + p->name + "' at index " + std::to_string(i));
      }
      const double G = (acc ? (*acc)[i] : 0.0) + g * g;
      const double next = p->value[i] - lr_ * g / (std::sqrt(G) + eps_);
      if (!std::isfinite(next)) {
        throw NumericError("adagrad: non-finite update in parameter '" + p->name + "' at index " + std::to_string(i));
      }
    }
  }
  for (Parameter* p : params) {
    if (p->frozen) continue;
    auto [it, inserted] = accum_.try_emplace(p->name, p->value.shape());
    Tensor& G = it->second;
    for (std::size_t i = 0; i < p->grad.size(); ++i) {
      const double g = p->grad[i];
      if (g == 0.0) continue;
      G[i] += g * g;
      p->value[i] -= lr_ * g / (std::sqrt(G[i]) + eps_);
    }
  }
}

const Tensor* AdaGrad::accumulator(const std::string& name) const {
  auto it = accum_.find(name);
  return it == accum_.end() ? nullptr : &it->second;
}

}  // namespace drtl
