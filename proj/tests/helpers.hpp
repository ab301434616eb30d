#pragma once

#include <filesystem>
#include <string>

#include "gtp/rng.hpp"
#include "gtp/tensor.hpp"

namespace gtp::test {

inline Tensor random_tensor(Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(dims));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gtp_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace gtp::test

#include <functional>

#include "gtp/autodiff.hpp"
#include "gtp/gradcheck.hpp"

namespace gtp::test {

using LossBuilder = std::function<Var(Tape&, ParameterStore&)>;

/// Analytic gradient from one backward pass against central differences.
inline GradientMismatch check_gradients(ParameterStore& params, const LossBuilder& build, double eps = 1e-5) {
  params.zero_grads();
  {
    Tape tape;
    tape.backward(build(tape, params));
  }
  const auto numeric = finite_difference_gradient(
      [&](ParameterStore& p) {
        Tape tape;
        return build(tape, p).value()[0];
      },
      params, eps);
  return max_gradient_error(params, numeric);
}

/// sum(out * w) for a fixed random w, so every output element matters.
inline Var project_to_scalar(Var out, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w = random_tensor(out.dims(), rng);
  return sum(mul(out, out.tape->constant(std::move(w))));
}

}  // namespace gtp::test
