#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "drtl/graph.hpp"

namespace drtl {

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Coordinates sampled per parameter; parameters smaller than this are checked exhaustively.
  std::size_t samples_per_param = 50;
  /// Denominator floor of the relative error, so coordinates whose true gradient
  /// is zero are judged on absolute error instead of rounding noise.
  double denominator_floor = 1e-6;
  /// A coordinate over tolerance is re-measured with the step divided by ten,
  /// up to this many times, and keeps its smallest error. A ReLU or max-pool
  /// switch inside +-step spoils the central difference only at the larger
  /// steps, while a wrong analytic gradient stays wrong at every step.
  std::size_t kink_retries = 2;
  std::uint64_t seed = 1;
};

struct GroupReport {
  std::string group;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  /// Re-measurements taken at a reduced step.
  std::size_t retried = 0;
  /// "param[index]" of the worst coordinate.
  std::string worst;
};

struct GradCheckReport {
  std::vector<GroupReport> groups;
  bool passed = true;
  /// Set when a non-finite gradient aborted the check.
  std::string failure;
};

/// Builds the loss on a fresh graph; called once for the analytic pass and
/// twice per checked coordinate.
using LossBuilder = std::function<Var(Graph&)>;
/// Maps a parameter to the group it is reported under.
using GroupOf = std::function<std::string(const Parameter&)>;

/// Compares backward() against central finite differences.
GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params, const GroupOf& group_of,
                           const GradCheckOptions& options = {});

}  // namespace drtl
