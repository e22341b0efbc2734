#pragma once

#include "core/grid.hpp"

namespace sre {

inline bool is_quarter_turn(double angle_degrees) {
  const double m = std::fmod(std::fmod(angle_degrees, 90.0) + 90.0, 90.0);
  return m < 1e-9 || m > 90.0 - 1e-9;
}

// Maps an exact multiple of 90 degrees to its grid element (2D).
// Positive angles follow rot90's orientation.
inline GridElement quarter_turn_element_2d(double angle_degrees) {
  long q = std::lround(angle_degrees / 90.0);
  q = ((q % 4) + 4) % 4;
  switch (q) {
    case 0: return grid_identity(2);
    case 1: return rot90_2d();
    case 2: return rot180_2d();
    default: return rot270_2d();
  }
}

// Rotation about the image center ((H-1)/2, (W-1)/2) with bilinear
// interpolation and zero fill. Multiples of 90 degrees dispatch to the exact
// cell permutation, bypassing interpolation entirely. Operates on the
// trailing two axes; leading axes are batched.
template <typename T>
Tensor<T> rotate_image(const Tensor<T>& x, double angle_degrees) {
  if (x.ndim() < 2) fail(err::shape, "rotate_image: need at least 2 dims");
  if (is_quarter_turn(angle_degrees)) {
    const GridElement g = quarter_turn_element_2d(angle_degrees);
    if (g.is_identity()) return x;
    return grid_transform(x, g);
  }
  const std::int64_t h = x.dim(x.ndim() - 2);
  const std::int64_t w = x.dim(x.ndim() - 1);
  std::int64_t lead = 1;
  for (int i = 0; i < x.ndim() - 2; ++i) lead *= x.dim(i);

  const double rad = angle_degrees * kPi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;

  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::int64_t l = 0; l < lead; ++l) {
    const T* sp = src + l * h * w;
    T* dp = dst + l * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < w; ++xx) {
        // Inverse map: sample the source at the unrotated position.
        const double oy = static_cast<double>(y) - cy;
        const double ox = static_cast<double>(xx) - cx;
        const double sy = c * oy - s * ox + cy;
        const double sx = s * oy + c * ox + cx;
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(sy));
        const std::int64_t x0 = static_cast<std::int64_t>(std::floor(sx));
        const double fy = sy - static_cast<double>(y0);
        const double fx = sx - static_cast<double>(x0);
        auto sample = [&](std::int64_t yy, std::int64_t xc) -> double {
          if (yy < 0 || yy >= h || xc < 0 || xc >= w) return 0.0;
          return static_cast<double>(sp[yy * w + xc]);
        };
        const double v = (1.0 - fy) * ((1.0 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                         fy * ((1.0 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        dp[y * w + xx] = static_cast<T>(v);
      }
    }
  }
  return out;
}

// Rotation of a cubic volume about one axis (0, 1 or 2 of the trailing three
// axes). The motion is in-plane, so trilinear interpolation reduces to
// bilinear within each slice perpendicular to the axis. Multiples of 90
// degrees are exact cell permutations.
template <typename T>
Tensor<T> rotate_volume(const Tensor<T>& x, int axis, double angle_degrees) {
  if (x.ndim() < 3) fail(err::shape, "rotate_volume: need at least 3 dims");
  if (axis < 0 || axis > 2) fail(err::argument, "rotate_volume: axis must be 0, 1 or 2");
  const std::int64_t d0 = x.dim(x.ndim() - 3);
  const std::int64_t d1 = x.dim(x.ndim() - 2);
  const std::int64_t d2 = x.dim(x.ndim() - 1);
  if (d0 != d1 || d1 != d2) {
    fail(err::shape, "rotate_volume: volume must be cubic, got " + shape_str(x.shape()));
  }
  if (is_quarter_turn(angle_degrees)) {
    long q = std::lround(angle_degrees / 90.0);
    q = ((q % 4) + 4) % 4;
    if (q == 0) return x;
    GridElement g = rot90_3d(axis);
    GridElement acc = g;
    for (long i = 1; i < q; ++i) acc = grid_compose(g, acc);
    return grid_transform(x, acc);
  }

  const std::int64_t n = d0;
  std::int64_t lead = 1;
  for (int i = 0; i < x.ndim() - 3; ++i) lead *= x.dim(i);

  const double rad = angle_degrees * kPi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double ctr = (static_cast<double>(n) - 1.0) / 2.0;
  const int u = (axis + 1) % 3;  // rotating plane axes
  const int v = (axis + 2) % 3;

  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  const std::int64_t vol = n * n * n;
  std::array<std::int64_t, 3> stride{n * n, n, 1};

  for (std::int64_t l = 0; l < lead; ++l) {
    const T* sp = src + l * vol;
    T* dp = dst + l * vol;
    for (std::int64_t a = 0; a < n; ++a) {      // along the rotation axis
      for (std::int64_t pu = 0; pu < n; ++pu) {
        for (std::int64_t pv = 0; pv < n; ++pv) {
          const double ou = static_cast<double>(pu) - ctr;
          const double ov = static_cast<double>(pv) - ctr;
          const double su = c * ou - s * ov + ctr;
          const double sv = s * ou + c * ov + ctr;
          const std::int64_t u0 = static_cast<std::int64_t>(std::floor(su));
          const std::int64_t v0 = static_cast<std::int64_t>(std::floor(sv));
          const double fu = su - static_cast<double>(u0);
          const double fv = sv - static_cast<double>(v0);
          auto sample = [&](std::int64_t uu, std::int64_t vv) -> double {
            if (uu < 0 || uu >= n || vv < 0 || vv >= n) return 0.0;
            const std::int64_t off = a * stride[static_cast<std::size_t>(axis)] +
                                     uu * stride[static_cast<std::size_t>(u)] +
                                     vv * stride[static_cast<std::size_t>(v)];
            return static_cast<double>(sp[off]);
          };
          const double val =
              (1.0 - fu) * ((1.0 - fv) * sample(u0, v0) + fv * sample(u0, v0 + 1)) +
              fu * ((1.0 - fv) * sample(u0 + 1, v0) + fv * sample(u0 + 1, v0 + 1));
          const std::int64_t off = a * stride[static_cast<std::size_t>(axis)] +
                                   pu * stride[static_cast<std::size_t>(u)] +
                                   pv * stride[static_cast<std::size_t>(v)];
          dp[off] = static_cast<T>(val);
        }
      }
    }
  }
  return out;
}

enum class FlipAxis { horizontal, vertical };

// Exact flip through grid_transform.
template <typename T>
Tensor<T> reflect_image(const Tensor<T>& x, FlipAxis axis) {
  if (x.ndim() < 2) fail(err::shape, "reflect_image: need at least 2 dims");
  return grid_transform(x, axis == FlipAxis::horizontal ? hflip_2d() : vflip_2d());
}

}  // namespace sre
