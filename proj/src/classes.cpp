#include "gtp/classes.hpp"

#include <algorithm>
#include <cctype>

#include "gtp/error.hpp"

namespace gtp {

std::size_t class_index(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (std::size_t k = 0; k < kClassNames.size(); ++k)
    if (lower == kClassNames[k]) return k;
  throw ConfigError("unknown class name '" + std::string(name) + "'");
}

std::string class_name(std::size_t index) {
  if (index >= kClassNames.size()) throw IndexError("class index " + std::to_string(index) + " out of range");
  return std::string(kClassNames[index]);
}

std::size_t argmax(const Probs& p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

}  // namespace gtp
