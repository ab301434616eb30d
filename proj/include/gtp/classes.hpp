#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

namespace gtp {

using Probs = std::array<double, 4>;

inline constexpr std::array<std::string_view, 4> kClassNames{"silicosis", "normal", "bacterial", "viral"};

/// Case-insensitive lookup; throws ConfigError for unknown names.
std::size_t class_index(std::string_view name);
std::string class_name(std::size_t index);

/// Index of the largest entry; the lowest index wins ties.
std::size_t argmax(const Probs& p);

}  // namespace gtp
