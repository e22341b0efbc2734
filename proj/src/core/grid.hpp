#pragma once

#include <array>

#include "core/tensor.hpp"

namespace sre {

// One exact symmetry of a square (d=2) or cubic (d=3) grid, encoded as an
// axis permutation plus per-axis reversal: output index v satisfies
//   v[a] = flip[a] ? extent-1 - u[perm[a]] : u[perm[a]].
// Enumerating all perm/flip combinations yields the 8-element dihedral group
// for d=2 and the 48-element full octahedral group for d=3.
struct GridElement {
  int dims = 2;
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};

  bool permutes_axes() const {
    for (int a = 0; a < dims; ++a) {
      if (perm[static_cast<std::size_t>(a)] != a) return true;
    }
    return false;
  }

  bool is_identity() const {
    for (int a = 0; a < dims; ++a) {
      if (perm[static_cast<std::size_t>(a)] != a || flip[static_cast<std::size_t>(a)]) {
        return false;
      }
    }
    return true;
  }
};

GridElement grid_identity(int dims);
GridElement grid_inverse(const GridElement& g);
// compose(a, b): apply b first, then a.
GridElement grid_compose(const GridElement& a, const GridElement& b);
std::vector<GridElement> grid_group(int dims);  // 8 elements (d=2) or 48 (d=3)
std::string grid_element_name(const GridElement& g);

// Common 2D elements. rot90 is a quarter turn clockwise.
GridElement rot90_2d();
GridElement rot180_2d();
GridElement rot270_2d();
GridElement hflip_2d();
GridElement vflip_2d();
// Quarter turn about one axis of a 3D grid (axis index into [D,H,W]).
GridElement rot90_3d(int axis);

// Transposes the offset (centered coordinate) the same way the index map
// does; used to orbit kernel cells.
template <int N>
std::array<int, N> grid_apply_offset(const GridElement& g, const std::array<int, N>& o) {
  std::array<int, N> v{};
  for (int a = 0; a < g.dims; ++a) {
    const int s = o[static_cast<std::size_t>(g.perm[static_cast<std::size_t>(a)])];
    v[static_cast<std::size_t>(a)] = g.flip[static_cast<std::size_t>(a)] ? -s : s;
  }
  return v;
}

// Applies g to the trailing `g.dims` axes of x; leading axes are batched.
// Pure cell permutation, no arithmetic.
template <typename T>
Tensor<T> grid_transform(const Tensor<T>& x, const GridElement& g) {
  const int d = g.dims;
  if (x.ndim() < d) fail(err::shape, "grid_transform: tensor rank below spatial rank");
  const int lead_nd = x.ndim() - d;

  std::array<std::int64_t, 3> ext{1, 1, 1};
  for (int a = 0; a < d; ++a) {
    ext[static_cast<std::size_t>(a)] = x.dim(lead_nd + a);
  }
  for (int a = 0; a < d; ++a) {
    const int p = g.perm[static_cast<std::size_t>(a)];
    if (p != a && ext[static_cast<std::size_t>(a)] != ext[static_cast<std::size_t>(p)]) {
      fail(err::shape, "grid_transform: rotation element requires equal spatial extents, got " +
                           shape_str(x.shape()));
    }
  }

  std::int64_t lead = 1;
  for (int i = 0; i < lead_nd; ++i) lead *= x.dim(i);
  std::int64_t cells = 1;
  for (int a = 0; a < d; ++a) cells *= ext[static_cast<std::size_t>(a)];

  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();

  std::array<std::int64_t, 3> u{0, 0, 0};
  for (std::int64_t l = 0; l < lead; ++l) {
    const T* s = src + l * cells;
    T* o = dst + l * cells;
    u = {0, 0, 0};
    for (std::int64_t c = 0; c < cells; ++c) {
      std::int64_t off = 0;
      for (int a = 0; a < d; ++a) {
        const std::int64_t ua = u[static_cast<std::size_t>(g.perm[static_cast<std::size_t>(a)])];
        const std::int64_t va = g.flip[static_cast<std::size_t>(a)]
                                    ? ext[static_cast<std::size_t>(a)] - 1 - ua
                                    : ua;
        off = off * ext[static_cast<std::size_t>(a)] + va;
      }
      o[off] = s[c];
      for (int a = d - 1; a >= 0; --a) {
        if (++u[static_cast<std::size_t>(a)] < ext[static_cast<std::size_t>(a)]) break;
        u[static_cast<std::size_t>(a)] = 0;
      }
    }
  }
  return out;
}

}  // namespace sre
