#include "sketchhash/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <functional>

#include "sketchhash/encoder.hpp"
#include "sketchhash/ops.hpp"
#include "sketchhash/rng.hpp"

namespace sketchhash {

double GradCheckOptions::epsilon_for(const std::string& name) const {
  double eps = epsilon;
  std::size_t best = 0;
  for (const auto& [prefix, value] : epsilon_by_prefix) {
    if (prefix.size() >= best && name.compare(0, prefix.size(), prefix) == 0) {
      best = prefix.size();
      eps = value;
    }
  }
  if (!(eps > 0.0)) throw PreconditionError("gradient check: step for '" + name + "' must be positive");
  return eps;
}

GradCheckResult finite_diff_check(const ScalarFunction& f, const Params& params,
                                  const Params& analytic, const GradCheckOptions& options) {
  GradCheckResult result;
  Params probe = params;
  Rng rng(options.seed);
  auto evaluate = [&]() {
    const double v = f(probe);
    if (!std::isfinite(v)) throw Error("gradient check: objective is not finite");
    return v;
  };

  for (auto& [name, tensor] : probe) {
    const auto grad_it = analytic.find(name);
    if (grad_it == analytic.end()) throw Error("gradient check: no analytic gradient for '" + name + "'");
    const Tensor& grad = grad_it->second;
    if (grad.size() != tensor.size()) {
      throw ShapeError("gradient check: gradient of '" + name + "' has shape " +
                       shape_string(grad.shape()) + ", parameter " + shape_string(tensor.shape()));
    }

    std::vector<Eigen::Index> coords(static_cast<std::size_t>(tensor.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (options.max_per_tensor > 0 && coords.size() > options.max_per_tensor) {
      rng.shuffle(coords);
      coords.resize(options.max_per_tensor);
      std::sort(coords.begin(), coords.end());
    }

    const double eps = options.epsilon_for(name);
    for (auto i : coords) {
      const double original = tensor.flat()[i];
      auto central = [&](double h) {
        tensor.flat()[i] = original + h;
        const double plus = evaluate();
        tensor.flat()[i] = original - h;
        const double minus = evaluate();
        tensor.flat()[i] = original;
        return (plus - minus) / (2.0 * h);
      };
      const double a = grad.flat()[i];
      auto relative = [a](double n) { return std::abs(a - n) / std::max(1e-12, std::abs(a) + std::abs(n)); };

      double numeric = central(eps);
      double err = relative(numeric);
      if (options.refine_above > 0.0 && err > options.refine_above) {
        numeric = central(eps / 10.0);
        err = relative(numeric);
        ++result.refined;
      }
      ++result.coordinates;
      if (result.worst_index < 0 || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult check_gradients(const GraphFunction& build, const Params& params,
                                const GradCheckOptions& options) {
  Graph graph;
  Binding binding(graph, params);
  const Var out = build(graph, binding);
  graph.backward(out);
  const Params analytic = binding.gradients();

  const ScalarFunction value = [&build](const Params& p) {
    Graph g;
    Binding b(g, p);
    return build(g, b).value().item();
  };
  return finite_diff_check(value, params, analytic, options);
}

namespace {

Tensor normal_point(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.flat()[i] = rng.normal(0.0, scale);
  return t;
}

}  // namespace

void merge_worst(GradCheckResult& acc, const GradCheckResult& r, const std::string& label) {
  acc.coordinates += r.coordinates;
  acc.refined += r.refined;
  if (acc.worst_index < 0 || r.max_relative_error > acc.max_relative_error) {
    const auto coords = acc.coordinates;
    const auto refined = acc.refined;
    acc = r;
    acc.coordinates = coords;
    acc.refined = refined;
    if (!label.empty()) acc.worst_parameter = label + "/" + r.worst_parameter;
  }
}

std::vector<std::string> primitive_names() {
  return {"matmul", "mul_add_sub", "add_bias", "sigmoid", "tanh", "relu", "square_affine", "concat_slice",
          "mean", "conv2d_valid_s1", "conv2d_valid_s2", "conv2d_same_s1", "conv2d_same_s2", "max_pool2d",
          "softmax_cross_entropy", "gather_select_rows", "gru_cell"};
}

// Each primitive is reduced to a scalar through a fixed random projection so
// every input coordinate carries an O(1) gradient. Only the piecewise-linear
// ops need the small step; central differences are exact on polynomials of
// degree two, so elsewhere a larger step just cuts roundoff.
GradCheckResult check_primitive(const std::string& name, std::uint64_t seed, const PrimitiveCheckOptions& opts) {
  const auto names = primitive_names();
  const auto pos = std::find(names.begin(), names.end(), name);
  if (pos == names.end()) throw PreconditionError("unknown primitive '" + name + "'");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(pos - names.begin()) + 1));
  const double kinked = opts.epsilon;
  const double smooth = opts.smooth_epsilon;

  auto check = [&](const Params& p, const GraphFunction& f, double step) {
    GradCheckOptions options;
    options.epsilon = step;
    options.refine_above = opts.tolerance;
    return check_gradients(f, p, options);
  };
  auto projected = [&](const Params& p, Shape out_shape, std::function<Var(const Binding&)> op, double step) {
    const Tensor w = normal_point(std::move(out_shape), rng);
    return check(p, [&](Graph& g, const Binding& b) { return sum(mul(op(b), g.constant(w))); }, step);
  };
  auto unary = [&](std::function<Var(const Var&)> op, double step) {
    return projected({{"x", normal_point({3, 5}, rng, 2.0)}}, {3, 5}, [op](const Binding& b) { return op(b["x"]); },
                     step);
  };
  auto conv = [&](Padding padding, int stride) {
    const Eigen::Index side = padding == Padding::Valid ? (stride == 1 ? 4 : 2) : (stride == 1 ? 6 : 3);
    return projected({{"x", normal_point({2, 2, 6, 6}, rng)}, {"w", normal_point({3, 2, 3, 3}, rng)},
                      {"b", normal_point({3}, rng)}},
                     {2, 3, side, side},
                     [padding, stride](const Binding& b) { return conv2d(b["x"], b["w"], b["b"], stride, padding); },
                     smooth);
  };

  if (name == "matmul") {
    return projected({{"a", normal_point({3, 4}, rng)}, {"b", normal_point({4, 2}, rng)}}, {3, 2},
                     [](const Binding& b) { return matmul(b["a"], b["b"]); }, smooth);
  }
  if (name == "mul_add_sub") {
    return projected({{"x", normal_point({3, 4}, rng)}, {"y", normal_point({3, 4}, rng)}}, {3, 4},
                     [](const Binding& b) { return mul(b["x"], b["y"]) + b["x"] - b["y"]; }, smooth);
  }
  if (name == "add_bias") {
    return projected({{"x", normal_point({3, 4}, rng)}, {"b", normal_point({4}, rng)}}, {3, 4},
                     [](const Binding& b) { return add_bias(b["x"], b["b"]); }, smooth);
  }
  if (name == "sigmoid") return unary([](const Var& x) { return sigmoid(x); }, smooth);
  if (name == "tanh") return unary([](const Var& x) { return tanh(x); }, smooth);
  if (name == "relu") return unary([](const Var& x) { return relu(x); }, kinked);
  if (name == "square_affine") return unary([](const Var& x) { return square(affine(x, 0.5, 0.25)); }, smooth);
  if (name == "concat_slice") {
    return projected({{"x", normal_point({2, 3}, rng)}, {"y", normal_point({2, 2}, rng)}}, {2, 4},
                     [](const Binding& b) { return slice_cols(concat({b["x"], b["y"]}), 1, 4); }, smooth);
  }
  if (name == "mean") {
    return projected({{"x", normal_point({3, 4}, rng)}}, {}, [](const Binding& b) { return mean(b["x"]); }, smooth);
  }
  if (name == "conv2d_valid_s1") return conv(Padding::Valid, 1);
  if (name == "conv2d_valid_s2") return conv(Padding::Valid, 2);
  if (name == "conv2d_same_s1") return conv(Padding::Same, 1);
  if (name == "conv2d_same_s2") return conv(Padding::Same, 2);
  if (name == "max_pool2d") {
    return projected({{"x", normal_point({2, 2, 6, 6}, rng)}}, {2, 2, 3, 3},
                     [](const Binding& b) { return max_pool2d(b["x"], 2, 2); }, kinked);
  }
  if (name == "softmax_cross_entropy") {
    const std::vector<int> labels{2, 0, 1};
    return check({{"z", normal_point({3, 4}, rng, 2.0)}},
                 [labels](Graph&, const Binding& b) { return softmax_cross_entropy(b["z"], labels); }, smooth);
  }
  if (name == "gather_select_rows") {
    return projected({{"p", normal_point({3, 2}, rng)}, {"q", normal_point({3, 2}, rng)}}, {3, 2},
                     [](const Binding& b) {
                       const std::vector<int> idx{1, -1, 0};
                       const std::vector<std::uint8_t> mask{1, 0, 1};
                       const std::vector<Var> sources{b["p"], b["q"]};
                       return select_rows(mask, gather_rows(sources, idx), b["q"]);
                     },
                     smooth);
  }
  if (name == "gru_cell") {
    const Eigen::Index h = 3;
    return projected({{"x", normal_point({2, 4}, rng)}, {"h", normal_point({2, h}, rng)},
                      {"wx", normal_point({4, 3 * h}, rng)}, {"wh", normal_point({h, 3 * h}, rng)},
                      {"bx", normal_point({3 * h}, rng)}, {"bh", normal_point({3 * h}, rng)}},
                     {2, h},
                     [](const Binding& b) {
                       return gru_cell(b["x"], b["h"], GruWeights{b["wx"], b["wh"], b["bx"], b["bh"]});
                     },
                     smooth);
  }
  throw PreconditionError("primitive '" + name + "' has no check");
}

GradCheckResult check_primitives(std::uint64_t seed, const PrimitiveCheckOptions& opts) {
  GradCheckResult worst;
  for (const auto& name : primitive_names()) merge_worst(worst, check_primitive(name, seed, opts), name);
  return worst;
}

}  // namespace sketchhash
