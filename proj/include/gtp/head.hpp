#pragma once

#include <cstddef>

#include "gtp/autodiff.hpp"
#include "gtp/rng.hpp"

namespace gtp {

enum class Mode { Train, Eval };

/// Running statistics of the head's BatchNorm layer.
struct BatchNormState {
  Tensor running_mean;  // [d], starts at 0
  Tensor running_var;   // [d], starts at 1
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormState identity(std::size_t d);
};

struct HeadParams {
  Var linear_weight;  // [d_in x d]
  Var linear_bias;    // [d]
  Var gamma;          // [d]
  Var beta;           // [d]
};

/// "head.linear.{weight,bias}" and "head.bn.{gamma,beta}"; gamma = 1, beta = 0.
void init_head(ParameterStore& store, std::size_t d_in, std::size_t d, Rng& rng);
HeadParams bind_head(const ParamBinder& bind);

/// Normalizes each column of x [b x d] with its batch mean and biased batch
/// variance, then applies gamma/beta. Writes the batch statistics (biased
/// variance) when the out-pointers are non-null. Needs b >= 2.
Var batch_norm_train(Var x, Var gamma, Var beta, double epsilon, Tensor* batch_mean = nullptr,
                     Tensor* batch_var = nullptr);
/// Same transform with fixed statistics; rows are independent.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, double epsilon);

/// v = BatchNorm(Linear(c')). Train mode uses batch statistics and moves the
/// running statistics by `momentum` (running variance uses the unbiased
/// batch variance); throws UsageError when b < 2.
Var project_normalize(Var c_prime, const HeadParams& params, BatchNormState& state, Mode mode);
/// Eval-mode transform that leaves the state untouched.
Var project_normalize(Var c_prime, const HeadParams& params, const BatchNormState& state);

}  // namespace gtp
