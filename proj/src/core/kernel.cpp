#include "core/kernel.hpp"

#include <algorithm>
#include <map>

namespace sre {

int band_count(int k) {
  if (k < 1 || k % 2 == 0) {
    fail(err::kernel_size, "kernel size must be odd and >= 1, got " + std::to_string(k));
  }
  return k / 2 + 2;
}

BandSpec make_band_spec(int k, int dims) {
  if (dims != 2 && dims != 3) fail(err::argument, "spatial dims must be 2 or 3");
  BandSpec s;
  s.k = k;
  s.dims = dims;
  s.bands = band_count(k);
  return s;
}

Tensor<double> distance_matrix(const BandSpec& spec) {
  const int k = spec.k, d = spec.dims, r = k / 2;
  Shape shape;
  for (int i = 0; i < d; ++i) shape.push_back(k);
  Tensor<double> out(shape);
  std::array<int, 3> idx{0, 0, 0};
  for (std::int64_t c = 0; c < out.numel(); ++c) {
    std::int64_t sq = 0;
    for (int a = 0; a < d; ++a) {
      const std::int64_t off = idx[static_cast<std::size_t>(a)] - r;
      sq += off * off;
    }
    out[c] = std::sqrt(static_cast<double>(sq));
    for (int a = d - 1; a >= 0; --a) {
      if (++idx[static_cast<std::size_t>(a)] < k) break;
      idx[static_cast<std::size_t>(a)] = 0;
    }
  }
  return out;
}

namespace {

// Offset maps matching grid_transform's index action on centered kernel
// coordinates (2D).
std::array<int, 2> rot_offset(const std::array<int, 2>& o) { return {o[1], -o[0]}; }
std::array<int, 2> mirror_offset(const std::array<int, 2>& o) { return {o[0], -o[1]}; }

std::int32_t flat_2d(const std::array<int, 2>& o, int k) {
  const int r = k / 2;
  return static_cast<std::int32_t>((o[0] + r) * k + (o[1] + r));
}

// Groups the active cells of one band into dihedral orbits, each stored in
// the pairing order consumed by the invariant summation tree:
//   size 4: (c0 + c2) + (c1 + c3)             with c_{i+1} = rot(c_i)
//   size 8: tree(rot cycle of rep) + tree(rot cycle of mirrored rep)
// Opposite-pair grouping makes the tree value independent of which group
// element relabels the cells, so convolution outputs are bit-identical
// under every exact grid symmetry.
std::vector<IndexMatrix::Orbit> orbits_for_band(const std::vector<std::array<int, 2>>& cells,
                                                int k) {
  std::vector<IndexMatrix::Orbit> orbits;
  std::vector<std::array<int, 2>> pending = cells;
  std::sort(pending.begin(), pending.end());
  std::vector<bool> used(pending.size(), false);

  auto find = [&](const std::array<int, 2>& o) -> std::size_t {
    const auto it = std::lower_bound(pending.begin(), pending.end(), o);
    if (it == pending.end() || *it != o) {
      fail(err::config, "band orbit is not closed under the symmetry group");
    }
    return static_cast<std::size_t>(it - pending.begin());
  };

  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (used[i]) continue;
    const std::array<int, 2> rep = pending[i];
    IndexMatrix::Orbit orb;

    if (rep[0] == 0 && rep[1] == 0) {
      orb.size = 1;
      orb.cell[0] = flat_2d(rep, k);
      used[i] = true;
      orbits.push_back(orb);
      continue;
    }

    std::array<std::array<int, 2>, 4> cyc;
    cyc[0] = rep;
    for (int t = 1; t < 4; ++t) cyc[static_cast<std::size_t>(t)] = rot_offset(cyc[static_cast<std::size_t>(t - 1)]);
    const std::array<int, 2> mir = mirror_offset(rep);
    const bool mirrored_in_cycle =
        mir == cyc[0] || mir == cyc[1] || mir == cyc[2] || mir == cyc[3];

    if (mirrored_in_cycle) {
      orb.size = 4;
      for (int t = 0; t < 4; ++t) {
        used[find(cyc[static_cast<std::size_t>(t)])] = true;
        orb.cell[static_cast<std::size_t>(t)] = flat_2d(cyc[static_cast<std::size_t>(t)], k);
      }
    } else {
      orb.size = 8;
      std::array<std::array<int, 2>, 4> cyc2;
      cyc2[0] = mir;
      for (int t = 1; t < 4; ++t) {
        cyc2[static_cast<std::size_t>(t)] = rot_offset(cyc2[static_cast<std::size_t>(t - 1)]);
      }
      for (int t = 0; t < 4; ++t) {
        used[find(cyc[static_cast<std::size_t>(t)])] = true;
        used[find(cyc2[static_cast<std::size_t>(t)])] = true;
        orb.cell[static_cast<std::size_t>(t)] = flat_2d(cyc[static_cast<std::size_t>(t)], k);
        orb.cell[static_cast<std::size_t>(t + 4)] = flat_2d(cyc2[static_cast<std::size_t>(t)], k);
      }
    }
    orbits.push_back(orb);
  }
  return orbits;
}

}  // namespace

IndexMatrixPtr build_index_matrix(const BandSpec& spec) {
  const int k = spec.k, d = spec.dims, b = spec.bands, r = k / 2;
  auto idx = std::make_shared<IndexMatrix>();
  idx->spec = spec;
  const std::int64_t cells = spec.cells();
  idx->m.assign(static_cast<std::size_t>(b) * static_cast<std::size_t>(cells), 0);
  idx->band_of.assign(static_cast<std::size_t>(cells), -1);
  idx->band_cells.assign(static_cast<std::size_t>(b), {});

  // d_max over the full distance matrix, corners included.
  const double d_max = std::sqrt(static_cast<double>(d)) * static_cast<double>(r);

  std::vector<std::vector<std::array<int, 2>>> band_cell_offsets(static_cast<std::size_t>(b));

  std::array<int, 3> u{0, 0, 0};
  for (std::int64_t c = 0; c < cells; ++c) {
    std::int64_t sq = 0;
    for (int a = 0; a < d; ++a) {
      const std::int64_t off = u[static_cast<std::size_t>(a)] - r;
      sq += off * off;
    }
    // Corner removal on the exact integer distance.
    if (sq <= static_cast<std::int64_t>(r) * r) {
      const double dist = std::sqrt(static_cast<double>(sq));
      int band = static_cast<int>(dist * b / (d_max + 1e-9));
      band = std::min(band, b - 1);
      idx->band_of[static_cast<std::size_t>(c)] = band;
      idx->m[static_cast<std::size_t>(band) * static_cast<std::size_t>(cells) +
             static_cast<std::size_t>(c)] = 1;
      idx->band_cells[static_cast<std::size_t>(band)].push_back(static_cast<std::int32_t>(c));
      ++idx->active_cells;
      if (d == 2) {
        band_cell_offsets[static_cast<std::size_t>(band)].push_back(
            {u[0] - r, u[1] - r});
      }
    }
    for (int a = d - 1; a >= 0; --a) {
      if (++u[static_cast<std::size_t>(a)] < k) break;
      u[static_cast<std::size_t>(a)] = 0;
    }
  }

  if (d == 2) {
    idx->band_orbits.assign(static_cast<std::size_t>(b), {});
    for (int j = 0; j < b; ++j) {
      idx->band_orbits[static_cast<std::size_t>(j)] =
          orbits_for_band(band_cell_offsets[static_cast<std::size_t>(j)], k);
    }
  }
  return idx;
}

ParamCount kernel_param_count(int c_in, int c_out, const BandSpec& spec, bool with_bias) {
  if (c_in < 1 || c_out < 1) fail(err::argument, "channel counts must be positive");
  ParamCount pc;
  const std::int64_t pairs = static_cast<std::int64_t>(c_in) * c_out;
  pc.sre = pairs * spec.bands;
  pc.standard = pairs * spec.cells();
  if (with_bias) {
    pc.sre += c_out;
    pc.standard += c_out;
  }
  return pc;
}

}  // namespace sre
