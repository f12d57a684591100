#pragma once

#include <map>
#include <span>
#include <string>

#include "drtl/parameter.hpp"

namespace drtl {

/// Per-coordinate AdaGrad: G += g^2; theta -= lr * g / (sqrt(G) + eps).
class AdaGrad {
 public:
  explicit AdaGrad(double learning_rate = 0.08, double epsilon = 1e-8);

  /// Applies one update to every listed parameter. All gradients are validated
  /// before anything is modified; a non-finite gradient or update throws
  /// NumericError naming the parameter and leaves every parameter untouched.
  void step(std::span<Parameter* const> params);

  /// Squared-gradient accumulator, or nullptr if the parameter was never stepped.
  const Tensor* accumulator(const std::string& name) const;

  double learning_rate() const { return lr_; }
  double epsilon() const { return eps_; }

 private:
  double lr_;
  double eps_;
  std::map<std::string, Tensor> accum_;
};

}  // namespace drtl
