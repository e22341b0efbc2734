#include "core/grid.hpp"

namespace sre {

GridElement grid_identity(int dims) {
  GridElement g;
  g.dims = dims;
  return g;
}

GridElement grid_compose(const GridElement& a, const GridElement& b) {
  if (a.dims != b.dims) fail(err::argument, "grid_compose: dimensionality mismatch");
  GridElement c;
  c.dims = a.dims;
  for (int x = 0; x < a.dims; ++x) {
    const int ap = a.perm[static_cast<std::size_t>(x)];
    c.perm[static_cast<std::size_t>(x)] = b.perm[static_cast<std::size_t>(ap)];
    c.flip[static_cast<std::size_t>(x)] =
        a.flip[static_cast<std::size_t>(x)] != b.flip[static_cast<std::size_t>(ap)];
  }
  return c;
}

GridElement grid_inverse(const GridElement& g) {
  GridElement h;
  h.dims = g.dims;
  for (int a = 0; a < g.dims; ++a) {
    const int p = g.perm[static_cast<std::size_t>(a)];
    h.perm[static_cast<std::size_t>(p)] = a;
    h.flip[static_cast<std::size_t>(p)] = g.flip[static_cast<std::size_t>(a)];
  }
  return h;
}

std::vector<GridElement> grid_group(int dims) {
  if (dims != 2 && dims != 3) fail(err::argument, "grid_group: dims must be 2 or 3");
  std::vector<std::array<int, 3>> perms;
  if (dims == 2) {
    perms = {{0, 1, 2}, {1, 0, 2}};
  } else {
    perms = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  }
  std::vector<GridElement> out;
  out.reserve(perms.size() << dims);
  for (const auto& p : perms) {
    for (int bits = 0; bits < (1 << dims); ++bits) {
      GridElement g;
      g.dims = dims;
      g.perm = p;
      for (int a = 0; a < dims; ++a) {
        g.flip[static_cast<std::size_t>(a)] = (bits >> a) & 1;
      }
      out.push_back(g);
    }
  }
  return out;
}

GridElement rot90_2d() { return GridElement{2, {1, 0, 2}, {false, true, false}}; }
GridElement rot180_2d() { return GridElement{2, {0, 1, 2}, {true, true, false}}; }
GridElement rot270_2d() { return GridElement{2, {1, 0, 2}, {true, false, false}}; }
GridElement hflip_2d() { return GridElement{2, {0, 1, 2}, {false, true, false}}; }
GridElement vflip_2d() { return GridElement{2, {0, 1, 2}, {true, false, false}}; }

GridElement rot90_3d(int axis) {
  if (axis < 0 || axis > 2) fail(err::argument, "rot90_3d: axis must be 0, 1 or 2");
  GridElement g;
  g.dims = 3;
  const int u = (axis + 1) % 3;
  const int v = (axis + 2) % 3;
  g.perm[static_cast<std::size_t>(u)] = v;
  g.perm[static_cast<std::size_t>(v)] = u;
  g.perm[static_cast<std::size_t>(axis)] = axis;
  g.flip = {false, false, false};
  g.flip[static_cast<std::size_t>(v)] = true;
  return g;
}

namespace {

bool same(const GridElement& a, const GridElement& b) {
  for (int i = 0; i < a.dims; ++i) {
    if (a.perm[static_cast<std::size_t>(i)] != b.perm[static_cast<std::size_t>(i)] ||
        a.flip[static_cast<std::size_t>(i)] != b.flip[static_cast<std::size_t>(i)]) {
      return false;
    }
  }
  return true;
}

}  // namespace

std::string grid_element_name(const GridElement& g) {
  if (g.dims == 2) {
    if (g.is_identity()) return "rot0";
    if (same(g, rot90_2d())) return "rot90";
    if (same(g, rot180_2d())) return "rot180";
    if (same(g, rot270_2d())) return "rot270";
    if (same(g, hflip_2d())) return "hflip";
    if (same(g, vflip_2d())) return "vflip";
    if (same(g, GridElement{2, {1, 0, 2}, {false, false, false}})) return "transpose";
    if (same(g, GridElement{2, {1, 0, 2}, {true, true, false}})) return "antitranspose";
  }
  std::string s = "g";
  for (int a = 0; a < g.dims; ++a) {
    s += static_cast<char>('0' + g.perm[static_cast<std::size_t>(a)]);
  }
  s += ':';
  for (int a = 0; a < g.dims; ++a) {
    s += g.flip[static_cast<std::size_t>(a)] ? '1' : '0';
  }
  return s;
}

}  // namespace sre
