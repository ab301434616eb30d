#include "gtp/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gtp/error.hpp"

namespace gtp {

std::map<std::string, Tensor> finite_difference_gradient(const LossFn& loss_fn, ParameterStore& params,
                                                         double epsilon) {
  if (!(epsilon >= 1e-5 && epsilon <= 1e-2)) {
    throw ConfigError("finite difference epsilon must lie in [1e-5, 1e-2], got " + std::to_string(epsilon));
  }
  std::map<std::string, Tensor> out;
  for (auto& entry : params) {
    Tensor& p = entry.tensor;
    Tensor g(p.dims());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + epsilon;
      const double up = loss_fn(params);
      p[i] = saved - epsilon;
      const double down = loss_fn(params);
      p[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite difference oracle: non-finite loss while probing '" + entry.name + "'[" +
                           std::to_string(i) + "]");
      }
      g[i] = (up - down) / (2.0 * epsilon);
    }
    out.emplace(entry.name, std::move(g));
  }
  return out;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

GradientMismatch max_gradient_error(const ParameterStore& params, const std::map<std::string, Tensor>& numeric) {
  GradientMismatch worst;
  worst.error = -1.0;
  for (const auto& entry : params) {
    auto it = numeric.find(entry.name);
    if (it == numeric.end()) throw ConfigError("no numeric gradient for '" + entry.name + "'");
    const auto analytic = entry.tensor.grad();
    for (std::size_t i = 0; i < entry.tensor.size(); ++i) {
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double n = it->second[i];
      const double err = relative_error(a, n);
      if (err > worst.error) worst = {entry.name, i, a, n, err};
    }
  }
  return worst;
}

}  // namespace gtp
