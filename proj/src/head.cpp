#include "gtp/head.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "gtp/error.hpp"

namespace gtp {

BatchNormState BatchNormState::identity(std::size_t d) {
  BatchNormState s;
  s.running_mean = Tensor({d});
  s.running_var = Tensor::filled({d}, 1.0);
  return s;
}

void init_head(ParameterStore& store, std::size_t d_in, std::size_t d, Rng& rng) {
  Tensor w({d_in, d});
  const double bound = std::sqrt(1.0 / static_cast<double>(d_in));
  for (auto& v : w.values()) v = rng.uniform(-bound, bound);
  store.add("head.linear.weight", std::move(w));
  store.add("head.linear.bias", Tensor({d}));
  store.add("head.bn.gamma", Tensor::filled({d}, 1.0));
  store.add("head.bn.beta", Tensor({d}));
}

HeadParams bind_head(const ParamBinder& bind) {
  return {bind("head.linear.weight"), bind("head.linear.bias"), bind("head.bn.gamma"), bind("head.bn.beta")};
}

namespace {

void check_bn_shapes(const Tensor& x, const Tensor& gamma, const Tensor& beta, const char* op) {
  if (x.rank() != 2) throw ShapeError(std::string(op) + ": input must be [b x d], got " + dims_to_string(x.dims()));
  const Dims expect{x.dim(1)};
  if (gamma.dims() != expect || beta.dims() != expect) {
    throw ShapeError(std::string(op) + ": gamma " + dims_to_string(gamma.dims()) + " / beta " +
                     dims_to_string(beta.dims()) + " do not match input " + dims_to_string(x.dims()));
  }
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, double epsilon, Tensor* batch_mean, Tensor* batch_var) {
  const Tensor& xv = x.value();
  check_bn_shapes(xv, gamma.value(), beta.value(), "batch_norm_train");
  const std::size_t b = xv.dim(0), d = xv.dim(1);
  if (b < 2) throw UsageError("batch_norm_train needs at least 2 samples, got " + std::to_string(b));

  Tensor mean({d}), var({d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += xv[i * d + j];
  for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xv[i * d + j] - mean[j];
      var[j] += c * c;
    }
  for (std::size_t j = 0; j < d; ++j) var[j] /= static_cast<double>(b);

  auto inv_std = std::make_shared<std::vector<double>>(d);
  for (std::size_t j = 0; j < d; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + epsilon);
  auto xhat = std::make_shared<Tensor>(xv.dims());
  Tensor out(xv.dims());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (xv[i * d + j] - mean[j]) * (*inv_std)[j];
      (*xhat)[i * d + j] = n;
      out[i * d + j] = gv[j] * n + bv[j];
    }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, b, d](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& gv = t.value(gamma);
    if (t.requires_grad(beta)) {
      auto gb = t.grad(beta);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    }
    if (t.requires_grad(gamma)) {
      auto gg = t.grad(gamma);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
    }
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      const double nb = static_cast<double>(b);
      for (std::size_t j = 0; j < d; ++j) {
        double sum_dn = 0.0, sum_dn_n = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
          const double dn = g[i * d + j] * gv[j];
          sum_dn += dn;
          sum_dn_n += dn * (*xhat)[i * d + j];
        }
        for (std::size_t i = 0; i < b; ++i) {
          const double dn = g[i * d + j] * gv[j];
          gx[i * d + j] += (*inv_std)[j] / nb * (nb * dn - sum_dn - (*xhat)[i * d + j] * sum_dn_n);
        }
      }
    }
  });
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, double epsilon) {
  const Tensor& xv = x.value();
  check_bn_shapes(xv, gamma.value(), beta.value(), "batch_norm_eval");
  const std::size_t b = xv.dim(0), d = xv.dim(1);
  if (mean.dims() != Dims{d} || var.dims() != Dims{d}) {
    throw ShapeError("batch_norm_eval: statistics " + dims_to_string(mean.dims()) + " / " +
                     dims_to_string(var.dims()) + " do not match input " + dims_to_string(xv.dims()));
  }
  auto inv_std = std::make_shared<std::vector<double>>(d);
  for (std::size_t j = 0; j < d; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + epsilon);
  auto xhat = std::make_shared<Tensor>(xv.dims());
  Tensor out(xv.dims());
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double n = (xv[i * d + j] - mean[j]) * (*inv_std)[j];
      (*xhat)[i * d + j] = n;
      out[i * d + j] = gv[j] * n + bv[j];
    }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, xhat, inv_std, b, d](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& gv = t.value(gamma);
    if (t.requires_grad(beta)) {
      auto gb = t.grad(beta);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
    }
    if (t.requires_grad(gamma)) {
      auto gg = t.grad(gamma);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) gg[j] += g[i * d + j] * (*xhat)[i * d + j];
    }
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[i * d + j] * gv[j] * (*inv_std)[j];
    }
  });
}

Var project_normalize(Var c_prime, const HeadParams& params, BatchNormState& state, Mode mode) {
  if (mode == Mode::Eval) return project_normalize(c_prime, params, static_cast<const BatchNormState&>(state));
  const std::size_t b = c_prime.value().dim(0);
  if (b < 2) throw UsageError("train-mode BatchNorm needs a batch of at least 2, got " + std::to_string(b));
  Var lin = add_bias(matmul(c_prime, params.linear_weight), params.linear_bias);
  Tensor mean, var;
  Var out = batch_norm_train(lin, params.gamma, params.beta, state.epsilon, &mean, &var);
  const double unbias = static_cast<double>(b) / static_cast<double>(b - 1);
  for (std::size_t j = 0; j < mean.size(); ++j) {
    state.running_mean[j] = (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
    state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j] * unbias;
  }
  return out;
}

Var project_normalize(Var c_prime, const HeadParams& params, const BatchNormState& state) {
  Var lin = add_bias(matmul(c_prime, params.linear_weight), params.linear_bias);
  return batch_norm_eval(lin, params.gamma, params.beta, state.running_mean, state.running_var, state.epsilon);
}

}  // namespace gtp
