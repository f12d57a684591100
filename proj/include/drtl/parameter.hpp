#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "drtl/tensor.hpp"

namespace drtl {

/// Trainable leaf tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool frozen = false;
  /// Rows whose gradient is always masked to zero (PAD column of the lookup table).
  std::vector<std::size_t> masked_rows;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad.fill(0.0); }
};

/// Owns parameters with stable addresses; iteration order is registration order.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  /// Parameters whose name starts with `prefix`.
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  std::size_t size() const { return params_.size(); }
  void zero_grad();

  /// Value snapshot in registration order, used for best-epoch retention.
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

using Rng = std::mt19937_64;

/// Uniform in +-sqrt(6 / (fan_in + fan_out)).
void init_fan_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// SplitMix64 finaliser; used to derive independent seeds and token-hash vectors.
std::uint64_t mix64(std::uint64_t x);

}  // namespace drtl
