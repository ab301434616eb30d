#include "gtp/radam.hpp"

#include <cmath>
#include <utility>

#include "gtp/error.hpp"

namespace gtp {

void RAdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("RAdam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("RAdam epsilon must be positive");
}

double radam_rho(std::uint64_t t, double beta2) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double b2t = std::pow(beta2, static_cast<double>(t));
  return rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
}

std::optional<double> radam_rectification(std::uint64_t t, double beta2) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double rho = radam_rho(t, beta2);
  if (!(rho > 4.0)) return std::nullopt;
  return std::sqrt(((rho - 4.0) * (rho - 2.0) * rho_inf) / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
}

RAdam::RAdam(RAdamConfig config) : config_(config) { config_.validate(); }

void RAdam::step(ParameterStore& params) {
  bool any = false;
  for (const auto& e : params) any = any || e.tensor.has_grad();
  if (!any) throw UsageError("RAdam step without gradients; run backward first");

  ++t_;
  const double t = static_cast<double>(t_);
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double bias1 = 1.0 - std::pow(b1, t);
  const double bias2 = 1.0 - std::pow(b2, t);
  const auto rect = radam_rectification(t_, b2);
  last_rectified_ = rect.has_value();

  for (auto& e : params) {
    Tensor& p = e.tensor;
    auto& mom = moments_[e.name];
    if (mom.m.empty()) {
      mom.m.assign(p.size(), 0.0);
      mom.v.assign(p.size(), 0.0);
    }
    const auto g = std::as_const(p).grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * gi;
      mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * gi * gi;
      const double m_hat = mom.m[i] / bias1;
      if (rect) {
        const double v_hat = std::sqrt(mom.v[i] / bias2);
        p[i] -= config_.lr * *rect * m_hat / (v_hat + config_.epsilon);
      } else {
        p[i] -= config_.lr * m_hat;
      }
    }
    if (p.has_grad()) p.zero_grad();
  }
}

}  // namespace gtp
