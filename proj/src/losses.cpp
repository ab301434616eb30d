#include "gtp/losses.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <vector>

#include "gtp/error.hpp"

namespace gtp {

void ClassCounts::validate() const {
  for (std::size_t k = 0; k < n.size(); ++k) {
    if (n[k] == 0) {
      throw ConfigError("class count n_" + std::to_string(k) + " is zero; balanced cross-entropy needs log n_k");
    }
  }
}

std::uint64_t ClassCounts::total() const noexcept {
  std::uint64_t t = 0;
  for (auto v : n) t += v;
  return t;
}

Tensor ClassCounts::log_counts() const {
  validate();
  Tensor t({n.size()});
  for (std::size_t k = 0; k < n.size(); ++k) t[k] = std::log(static_cast<double>(n[k]));
  return t;
}

std::string to_string(LossKind kind) { return kind == LossKind::Balanced ? "balce" : "ce"; }

LossKind parse_loss_kind(const std::string& text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "ce") return LossKind::CrossEntropy;
  if (lower == "balce" || lower == "bal-ce") return LossKind::Balanced;
  throw ConfigError("unknown loss '" + text + "' (expected ce or balce)");
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw ShapeError("cross_entropy: logits must be [b x C], got " + dims_to_string(z.dims()));
  const std::size_t b = z.dim(0), c = z.dim(1);
  if (targets.size() != b) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for logits " + dims_to_string(z.dims()));
  }
  for (auto t : targets) {
    if (t >= c) throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0, " + std::to_string(c) + ")");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* row = z.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    total += mx + std::log(s) - row[targets[i]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return logits.tape->record(Tensor::scalar(total / static_cast<double>(b)), {logits},
                             [logits, tgt = std::move(tgt), b, c](Tape& t, std::span<const double> g, const Tensor&) {
    const Tensor& z = t.value(logits);
    auto gz = t.grad(logits);
    const double scale = g[0] / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      const double* row = z.data() + i * c;
      const double mx = *std::max_element(row, row + c);
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - mx) / s;
        gz[i * c + j] += scale * (p - (j == tgt[i] ? 1.0 : 0.0));
      }
    }
  });
}

Var balanced_cross_entropy(Var logits, std::span<const std::size_t> targets, const ClassCounts& counts) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.dim(1) != counts.n.size()) {
    throw ShapeError("balanced_cross_entropy: logits " + dims_to_string(z.dims()) + " vs " +
                     std::to_string(counts.n.size()) + " class counts");
  }
  Var shift = logits.tape->constant(counts.log_counts());
  return cross_entropy(add_bias(logits, shift), targets);
}

Var classification_loss(LossKind kind, Var logits, std::span<const std::size_t> targets, const ClassCounts& counts) {
  return kind == LossKind::Balanced ? balanced_cross_entropy(logits, targets, counts) : cross_entropy(logits, targets);
}

}  // namespace gtp
