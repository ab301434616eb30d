#include "gtp/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "gtp/error.hpp"

namespace gtp {

namespace {

void check_image(const Tensor& image, const char* op) {
  if (image.rank() != 3) throw ShapeError(std::string(op) + ": image must be [c x h x w], got " + dims_to_string(image.dims()));
}

}  // namespace

Tensor resize(const Tensor& image, std::size_t target) {
  check_image(image, "resize");
  if (target < 8) throw ShapeError("resize: target " + std::to_string(target) + " is below 8");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == target && w == target) return image;
  Tensor out({c, target, target});
  const double sy = static_cast<double>(h) / static_cast<double>(target);
  const double sx = static_cast<double>(w) / static_cast<double>(target);
  for (std::size_t oy = 0; oy < target; ++oy) {
    const double fy = std::clamp((static_cast<double>(oy) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < target; ++ox) {
      const double fx = std::clamp((static_cast<double>(ox) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = image.data() + ch * h * w;
        const double top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
        const double bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
        out[(ch * target + oy) * target + ox] = std::clamp(top * (1.0 - ty) + bottom * ty, 0.0, 1.0);
      }
    }
  }
  return out;
}

Tensor horizontal_flip(const Tensor& image) {
  check_image(image, "horizontal_flip");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out(image.dims());
  for (std::size_t r = 0; r < c * h; ++r)
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = image[r * w + (w - 1 - x)];
  return out;
}

Tensor random_horizontal_flip(const Tensor& image, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("flip probability must lie in [0, 1]");
  // Always draw so the stream position does not depend on p.
  const bool flip = rng.uniform() < p;
  return flip ? horizontal_flip(image) : image;
}

Tensor rotate(const Tensor& image, double degrees) {
  check_image(image, "rotate");
  if (degrees == 0.0) return image;
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0, cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double max_x = static_cast<double>(w - 1), max_y = static_cast<double>(h - 1);
  constexpr double kSlack = 1e-9;
  Tensor out(image.dims());
  for (std::size_t oy = 0; oy < h; ++oy) {
    for (std::size_t ox = 0; ox < w; ++ox) {
      // Inverse map: the output pixel takes the source point rotated by
      // -theta in screen coordinates (y pointing down).
      const double dx = static_cast<double>(ox) - cx, dy = static_cast<double>(oy) - cy;
      const double sx = cx + dx * cs - dy * sn;
      const double sy = cy + dx * sn + dy * cs;
      // The slack keeps border pixels inside despite rounding in cos/sin.
      if (sx < -kSlack || sy < -kSlack || sx > max_x + kSlack || sy > max_y + kSlack) continue;
      const double fx = std::clamp(sx, 0.0, max_x);
      const double fy = std::clamp(sy, 0.0, max_y);
      const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
      const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double tx = fx - static_cast<double>(x0), ty = fy - static_cast<double>(y0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* src = image.data() + ch * h * w;
        const double top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
        const double bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
        out[(ch * h + oy) * w + ox] = std::clamp(top * (1.0 - ty) + bottom * ty, 0.0, 1.0);
      }
    }
  }
  return out;
}

Tensor random_rotation(const Tensor& image, double max_degrees, Rng& rng) {
  if (!(max_degrees >= 0.0 && max_degrees <= 180.0)) throw ConfigError("rotation range must lie in [0, 180] degrees");
  const double angle = rng.uniform(-max_degrees, max_degrees);
  return max_degrees == 0.0 ? image : rotate(image, angle);
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const Dims& d = images.front()->dims();
  Dims out_dims{images.size()};
  out_dims.insert(out_dims.end(), d.begin(), d.end());
  Tensor out(out_dims);
  const std::size_t n = images.front()->size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->dims() != d) {
      throw ShapeError("stack_images: image " + dims_to_string(images[i]->dims()) + " differs from " + dims_to_string(d));
    }
    std::copy(images[i]->values().begin(), images[i]->values().end(), out.data() + i * n);
  }
  return out;
}

}  // namespace gtp
