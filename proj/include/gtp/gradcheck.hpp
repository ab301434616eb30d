#pragma once

#include <functional>
#include <map>
#include <string>

#include "gtp/tensor.hpp"

namespace gtp {

using LossFn = std::function<double(ParameterStore&)>;

/// Central differences (f(p + eps) - f(p - eps)) / 2 eps for every scalar of
/// every parameter. Each parameter is restored bit-exactly after probing.
/// Throws NumericError naming the parameter if the loss is non-finite.
std::map<std::string, Tensor> finite_difference_gradient(const LossFn& loss_fn, ParameterStore& params,
                                                         double epsilon);

/// |a - b| / max(1, |a|, |b|).
double relative_error(double a, double b);

struct GradientMismatch {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;
};

/// Worst relative error between the gradients stored in `params` and
/// `numeric`. Parameters without an allocated gradient compare as zero.
GradientMismatch max_gradient_error(const ParameterStore& params, const std::map<std::string, Tensor>& numeric);

}  // namespace gtp
