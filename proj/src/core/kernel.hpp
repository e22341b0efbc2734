#pragma once

#include <memory>

#include "core/grid.hpp"
#include "core/tensor.hpp"

namespace sre {

// Kernel geometry: odd extent k per spatial axis, d in {2,3}, and the band
// count b = floor(k/2) + 2.
struct BandSpec {
  int k = 3;
  int dims = 2;
  int bands = 3;

  std::int64_t cells() const {
    std::int64_t c = 1;
    for (int i = 0; i < dims; ++i) c *= k;
    return c;
  }
};

int band_count(int k);
BandSpec make_band_spec(int k, int dims);

// Euclidean distance of every kernel cell from the center cell, in cell
// units.
Tensor<double> distance_matrix(const BandSpec& spec);

// Fixed binary map from band index to kernel cells. Built once, never
// touched by training. Cells strictly outside the inscribed circle/sphere
// (squared distance > radius^2, integer comparison) are assigned to no band:
// their columns are zero and the expanded kernel is zero there.
//
// Band membership of the surviving cells: equal-width annuli over
// [0, d_max] where d_max is the pre-removal corner distance,
//   band(p) = min(b-1, floor(D[p] * b / (d_max + 1e-9))).
class IndexMatrix {
 public:
  // Summation unit for the symmetry-invariant accumulation used by the
  // convolution: cells of one group orbit, stored in an order for which the
  // pairwise summation tree gives a bit-identical result under every grid
  // symmetry. 2D only; 3D falls back to value-sorted summation per band.
  struct Orbit {
    int size = 1;                      // 1, 4 or 8
    std::array<std::int32_t, 8> cell;  // flat raster indices into k^d
  };

  BandSpec spec;
  std::vector<std::uint8_t> m;        // [bands][k^d], entries in {0,1}
  std::vector<std::int32_t> band_of;  // per cell, -1 for removed corners
  std::int64_t active_cells = 0;      // nonzero columns of m

  std::vector<std::vector<Orbit>> band_orbits;        // per band (2D)
  std::vector<std::vector<std::int32_t>> band_cells;  // per band, raster order

  std::int64_t cells() const { return spec.cells(); }
  int bands() const { return spec.bands; }

  // m as a [bands x k^d] tensor, for matrix-product expansion.
  template <typename T>
  Tensor<T> matrix() const {
    std::vector<T> d(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) d[i] = static_cast<T>(m[i]);
    return Tensor<T>(Shape{spec.bands, cells()}, std::move(d));
  }
};

using IndexMatrixPtr = std::shared_ptr<const IndexMatrix>;

IndexMatrixPtr build_index_matrix(const BandSpec& spec);

// Trainable parameters of one SRE convolution: one weight per band per
// channel pair, plus a plain bias.
template <typename T>
struct BandWeights {
  Tensor<T> weights;  // [C_out, C_in, b]
  Tensor<T> bias;     // [C_out]
};

struct ParamCount {
  std::int64_t sre = 0;       // C_out*C_in*b (+ C_out with bias)
  std::int64_t standard = 0;  // C_out*C_in*k^d (+ C_out with bias)
};

ParamCount kernel_param_count(int c_in, int c_out, const BandSpec& spec, bool with_bias);

// Expands band weights into the full spatial kernel.
// Equivalent to the row-by-row product weights[c_out,c_in,:] x m, realized
// by direct band lookup so equal-band cells are bit-identical.
template <typename T>
Tensor<T> expand_kernel(const IndexMatrix& idx, const Tensor<T>& weights) {
  const auto& s = weights.shape();
  if (weights.ndim() != 3 || s[2] != idx.bands()) {
    fail(err::shape, "expand_kernel: weights must be [C_out, C_in, " +
                         std::to_string(idx.bands()) + "], got " + shape_str(s));
  }
  const std::int64_t c_out = s[0], c_in = s[1], b = s[2];
  const std::int64_t cells = idx.cells();

  Shape out_shape{c_out, c_in};
  for (int i = 0; i < idx.spec.dims; ++i) out_shape.push_back(idx.spec.k);
  Tensor<T> out(out_shape);

  const T* w = weights.data();
  T* o = out.data();
  for (std::int64_t pair = 0; pair < c_out * c_in; ++pair) {
    const T* wp = w + pair * b;
    T* op = o + pair * cells;
    for (std::int64_t p = 0; p < cells; ++p) {
      const std::int32_t band = idx.band_of[static_cast<std::size_t>(p)];
      op[p] = band >= 0 ? wp[band] : T{0};
    }
  }
  return out;
}

// Uniform init in [-s, s] with s = sqrt(6 / (C_in * active_cells)); bias is
// zero. Deterministic in the seed.
template <typename T>
BandWeights<T> init_band_weights(const IndexMatrix& idx, int c_in, int c_out,
                                 std::uint64_t seed) {
  if (c_in < 1 || c_out < 1) fail(err::argument, "channel counts must be positive");
  const double s =
      std::sqrt(6.0 / (static_cast<double>(c_in) * static_cast<double>(idx.active_cells)));
  Rng rng(seed);
  Tensor<T> w(Shape{c_out, c_in, idx.bands()});
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    w[i] = static_cast<T>(rng.uniform(-s, s));
  }
  return BandWeights<T>{std::move(w), Tensor<T>(Shape{c_out})};
}

// Plain uniform init in [-bound, bound], used by the dense twin and the
// linear head.
template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<T>(rng.uniform(-bound, bound));
  }
  return t;
}

}  // namespace sre
