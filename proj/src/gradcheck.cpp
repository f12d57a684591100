#include "drtl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace drtl {

namespace {

double evaluate(const LossBuilder& build) {
  Graph g;
  return g.scalar(build(g));
}

GroupReport& group_entry(GradCheckReport& report, const std::string& name) {
  for (auto& gr : report.groups) {
    if (gr.group == name) return gr;
  }
  report.groups.push_back(GroupReport{name, 0.0, 0, 0, {}});
  return report.groups.back();
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, std::span<Parameter* const> params, const GroupOf& group_of,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    g.backward(build(g));
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);

  Rng rng(options.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    GroupReport& entry = group_entry(report, group_of(p));
    // masked rows are held constant by design, so only the remaining coordinates are compared
    std::vector<std::size_t> coords;
    const std::size_t row = p.value.rank() > 1 ? p.value.size() / p.value.dim(0) : p.value.size();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (std::find(p.masked_rows.begin(), p.masked_rows.end(), i / row) == p.masked_rows.end()) coords.push_back(i);
    }
    if (coords.size() > options.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.samples_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double a = analytic[pi][idx];
      const std::string where = p.name + "[" + std::to_string(idx) + "]";
      double step = options.step;
      double rel = std::numeric_limits<double>::infinity();
      for (std::size_t attempt = 0; attempt <= options.kink_retries && !(rel < options.tolerance); ++attempt) {
        const double original = p.value[idx];
        p.value[idx] = original + step;
        const double plus = evaluate(build);
        p.value[idx] = original - step;
        const double minus = evaluate(build);
        p.value[idx] = original;

        const double numeric = (plus - minus) / (2.0 * step);
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
          report.passed = false;
          report.failure = "non-finite gradient at " + where;
          entry.max_rel_error = std::numeric_limits<double>::infinity();
          entry.worst = where;
          return report;
        }
        const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
        rel = std::min(rel, std::abs(a - numeric) / denom);
        if (attempt > 0) ++entry.retried;
        step *= 0.1;
      }
      ++entry.coordinates;
      if (rel > entry.max_rel_error || entry.worst.empty()) {
        entry.max_rel_error = std::max(entry.max_rel_error, rel);
        entry.worst = where;
      }
    }
  }
  for (const auto& gr : report.groups) {
    if (!(gr.max_rel_error < options.tolerance)) report.passed = false;
  }
  return report;
}

}  // namespace drtl
