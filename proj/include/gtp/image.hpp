#pragma once

#include <cstddef>
#include <vector>

#include "gtp/rng.hpp"
#include "gtp/tensor.hpp"

namespace gtp {

// Images are [c x h x w] tensors with values in [0, 1].

/// Bilinear resize to target x target with half-pixel centers (edges
/// clamped); each channel independently. Throws ShapeError if target < 8.
Tensor resize(const Tensor& image, std::size_t target);

Tensor horizontal_flip(const Tensor& image);
Tensor random_horizontal_flip(const Tensor& image, double p, Rng& rng);

/// Counterclockwise rotation about the image center by `degrees`, bilinear
/// sampling, zero outside the source.
Tensor rotate(const Tensor& image, double degrees);
/// Angle uniform in [-max_degrees, max_degrees]; max_degrees in [0, 180].
Tensor random_rotation(const Tensor& image, double max_degrees, Rng& rng);

/// Stacks equally sized images into [b x c x h x w].
Tensor stack_images(const std::vector<const Tensor*>& images);

}  // namespace gtp
