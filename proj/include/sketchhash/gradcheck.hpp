#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "sketchhash/graph.hpp"

namespace sketchhash {

struct GradCheckOptions {
  double epsilon = 1e-6;
  /// Step overrides keyed by parameter-name prefix; the longest match wins.
  std::map<std::string, double> epsilon_by_prefix;
  /// Coordinates checked per tensor; 0 checks every coordinate. Sampled
  /// coordinates are drawn without replacement from Rng(seed).
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
  /// When positive, a coordinate whose error exceeds this is re-estimated
  /// once at a tenth of the step; the finer estimate is the one reported. A
  /// ReLU or max-pool kink lying inside the wider stencil usually falls
  /// outside the narrower one, while a wrong analytic gradient misses at both.
  double refine_above = 0.0;

  double epsilon_for(const std::string& name) const;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  std::size_t refined = 0;  ///< coordinates re-estimated at the finer step
};

/// Scalar objective evaluated on a parameter set, without gradients.
using ScalarFunction = std::function<double(const Params&)>;
/// Builds the objective on a graph from bound parameters and returns it.
using GraphFunction = std::function<Var(Graph&, const Binding&)>;

/// Central differences against supplied analytic gradients. Per coordinate
/// the error is |a - n| / max(1e-12, |a| + |n|); the maximum is reported.
/// Throws Error if the function returns a non-finite value.
GradCheckResult finite_diff_check(const ScalarFunction& f, const Params& params,
                                  const Params& analytic, const GradCheckOptions& options = {});

/// Runs `build` once with backward() for the analytic side, then checks it.
GradCheckResult check_gradients(const GraphFunction& build, const Params& params,
                                const GradCheckOptions& options = {});

/// Keeps the larger error of `acc` and `r`, summing coordinate counts;
/// `label` prefixes the worst parameter name when r wins.
void merge_worst(GradCheckResult& acc, const GradCheckResult& r, const std::string& label = {});

struct PrimitiveCheckOptions {
  double epsilon = 1e-6;         ///< step for piecewise-linear ops (relu, max_pool2d)
  double smooth_epsilon = 1e-4;  ///< step for smooth and polynomial ops
  double tolerance = 1e-6;       ///< refinement trigger, see GradCheckOptions
};

/// Every differentiable primitive, in check order.
std::vector<std::string> primitive_names();

/// Checks one primitive at a random point derived from (seed, name).
GradCheckResult check_primitive(const std::string& name, std::uint64_t seed, const PrimitiveCheckOptions& options = {});

/// Worst result over all primitives; worst_parameter reads "primitive/input".
GradCheckResult check_primitives(std::uint64_t seed, const PrimitiveCheckOptions& options = {});

}  // namespace sketchhash
