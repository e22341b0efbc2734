#pragma once

#include <algorithm>

#include "core/kernel.hpp"

namespace sre {

enum class Mode { train, eval };
enum class ConvKind { sre, standard };

// ---------------------------------------------------------------------------
// Deterministic GEMM kernels. gemm_nn accumulates over k in ascending order
// per output element; gemm_nt uses a fixed 4-lane partial-sum tree. Both are
// bit-reproducible across runs of the same build.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_nn(std::int64_t m, std::int64_t k, std::int64_t n, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  std::int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    for (std::int64_t t = 0; t < k; ++t) {
      const T a0 = a[(i + 0) * k + t];
      const T a1 = a[(i + 1) * k + t];
      const T a2 = a[(i + 2) * k + t];
      const T a3 = a[(i + 3) * k + t];
      const T* br = b + t * n;
      for (std::int64_t j = 0; j < n; ++j) {
        c0[j] += a0 * br[j];
        c1[j] += a1 * br[j];
        c2[j] += a2 * br[j];
        c3[j] += a3 * br[j];
      }
    }
  }
  for (; i < m; ++i) {
    T* cr = c + i * n;
    for (std::int64_t t = 0; t < k; ++t) {
      const T av = a[i * k + t];
      const T* br = b + t * n;
      for (std::int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

// c[m][n] += a[m][k] * b[n][k]^T
template <typename T>
void gemm_nt(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T{0});
  for (std::int64_t i = 0; i < m; ++i) {
    const T* ar = a + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* br = b + j * k;
      T s0{0}, s1{0}, s2{0}, s3{0};
      std::int64_t t = 0;
      for (; t + 4 <= k; t += 4) {
        s0 += ar[t + 0] * br[t + 0];
        s1 += ar[t + 1] * br[t + 1];
        s2 += ar[t + 2] * br[t + 2];
        s3 += ar[t + 3] * br[t + 3];
      }
      for (; t < k; ++t) s0 += ar[t] * br[t];
      c[i * n + j] += (s0 + s1) + (s2 + s3);
    }
  }
}

// ---------------------------------------------------------------------------
// Column builders. Both run over one sample of a zero-padded input.
//
// band_col sums each band's cells per output position using the
// orbit-paired tree (2D) or value-sorted order (3D), so every entry is
// invariant under the grid symmetry group acting on the input.
// im2col is the plain dense gather used by the standard-kernel twin.
// ---------------------------------------------------------------------------

namespace detail {

struct OrbitProgram {
  int size;
  std::array<std::int64_t, 8> off;  // offsets into the padded sample
};

// Per-band summation programs for one (padded-width-specific) geometry.
struct BandProgram2d {
  std::vector<std::vector<OrbitProgram>> bands;
};

inline BandProgram2d make_band_program_2d(const IndexMatrix& idx, std::int64_t wp) {
  const int k = idx.spec.k;
  BandProgram2d prog;
  prog.bands.resize(static_cast<std::size_t>(idx.bands()));
  for (int j = 0; j < idx.bands(); ++j) {
    for (const auto& orb : idx.band_orbits[static_cast<std::size_t>(j)]) {
      OrbitProgram p;
      p.size = orb.size;
      for (int t = 0; t < orb.size; ++t) {
        const std::int64_t cell = orb.cell[static_cast<std::size_t>(t)];
        p.off[static_cast<std::size_t>(t)] = (cell / k) * wp + (cell % k);
      }
      prog.bands[static_cast<std::size_t>(j)].push_back(p);
    }
  }
  return prog;
}

template <typename T>
inline T orbit_sum(const T* base, const OrbitProgram& p) {
  switch (p.size) {
    case 1:
      return base[p.off[0]];
    case 4:
      return (base[p.off[0]] + base[p.off[2]]) + (base[p.off[1]] + base[p.off[3]]);
    default:
      return ((base[p.off[0]] + base[p.off[2]]) + (base[p.off[1]] + base[p.off[3]])) +
             ((base[p.off[4]] + base[p.off[6]]) + (base[p.off[5]] + base[p.off[7]]));
  }
}

// col: [channels * bands][h * w]
template <typename T>
void band_col_2d(const T* xp, std::int64_t channels, std::int64_t hp, std::int64_t wp,
                 std::int64_t h, std::int64_t w, const BandProgram2d& prog, T* col) {
  const std::int64_t plane = hp * wp;
  const std::int64_t out = h * w;
  const int bands = static_cast<int>(prog.bands.size());
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const T* xc = xp + ci * plane;
    for (int j = 0; j < bands; ++j) {
      T* row = col + (ci * bands + j) * out;
      const auto& orbits = prog.bands[static_cast<std::size_t>(j)];
      if (orbits.empty()) {
        std::fill(row, row + out, T{0});
        continue;
      }
      for (std::int64_t oy = 0; oy < h; ++oy) {
        const T* base = xc + oy * wp;
        T* r = row + oy * w;
        for (std::int64_t ox = 0; ox < w; ++ox) {
          T s{0};
          for (const auto& orb : orbits) s += orbit_sum(base + ox, orb);
          r[ox] = s;
        }
      }
    }
  }
}

// 3D variant: per band, gather the cell values, sort ascending and sum.
// Sorted accumulation is invariant under any permutation of the cells, which
// covers the full 48-element group without orbit bookkeeping.
template <typename T>
void band_col_3d(const T* xp, std::int64_t channels, std::int64_t dp, std::int64_t hp,
                 std::int64_t wp, std::int64_t d, std::int64_t h, std::int64_t w,
                 const IndexMatrix& idx, T* col) {
  const int k = idx.spec.k;
  const std::int64_t volume = dp * hp * wp;
  const std::int64_t out = d * h * w;
  const int bands = idx.bands();

  std::vector<std::vector<std::int64_t>> offs(static_cast<std::size_t>(bands));
  for (int j = 0; j < bands; ++j) {
    for (std::int32_t cell : idx.band_cells[static_cast<std::size_t>(j)]) {
      const std::int64_t cz = cell / (k * k);
      const std::int64_t cy = (cell / k) % k;
      const std::int64_t cx = cell % k;
      offs[static_cast<std::size_t>(j)].push_back((cz * hp + cy) * wp + cx);
    }
  }

  std::vector<T> scratch;
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const T* xc = xp + ci * volume;
    for (int j = 0; j < bands; ++j) {
      T* row = col + (ci * bands + j) * out;
      const auto& cells = offs[static_cast<std::size_t>(j)];
      if (cells.empty()) {
        std::fill(row, row + out, T{0});
        continue;
      }
      scratch.resize(cells.size());
      std::int64_t p = 0;
      for (std::int64_t oz = 0; oz < d; ++oz) {
        for (std::int64_t oy = 0; oy < h; ++oy) {
          const T* base = xc + (oz * hp + oy) * wp;
          for (std::int64_t ox = 0; ox < w; ++ox, ++p) {
            for (std::size_t t = 0; t < cells.size(); ++t) scratch[t] = base[ox + cells[t]];
            std::sort(scratch.begin(), scratch.end());
            T s{0};
            for (const T v : scratch) s += v;
            row[p] = s;
          }
        }
      }
    }
  }
}

// col: [channels * k^d][spatial], raster cell order.
template <typename T>
void im2col_2d(const T* xp, std::int64_t channels, std::int64_t hp, std::int64_t wp,
               std::int64_t h, std::int64_t w, int k, T* col) {
  const std::int64_t plane = hp * wp;
  const std::int64_t out = h * w;
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const T* xc = xp + ci * plane;
    for (int cy = 0; cy < k; ++cy) {
      for (int cx = 0; cx < k; ++cx) {
        T* row = col + (ci * k * k + cy * k + cx) * out;
        for (std::int64_t oy = 0; oy < h; ++oy) {
          const T* src = xc + (oy + cy) * wp + cx;
          std::copy(src, src + w, row + oy * w);
        }
      }
    }
  }
}

template <typename T>
void im2col_3d(const T* xp, std::int64_t channels, std::int64_t dp, std::int64_t hp,
               std::int64_t wp, std::int64_t d, std::int64_t h, std::int64_t w, int k, T* col) {
  const std::int64_t volume = dp * hp * wp;
  const std::int64_t out = d * h * w;
  for (std::int64_t ci = 0; ci < channels; ++ci) {
    const T* xc = xp + ci * volume;
    for (int cz = 0; cz < k; ++cz) {
      for (int cy = 0; cy < k; ++cy) {
        for (int cx = 0; cx < k; ++cx) {
          T* row = col + (((ci * k + cz) * k + cy) * k + cx) * out;
          std::int64_t p = 0;
          for (std::int64_t oz = 0; oz < d; ++oz) {
            for (std::int64_t oy = 0; oy < h; ++oy, p += w) {
              const T* src = xc + ((oz + cz) * hp + (oy + cy)) * wp + cx;
              std::copy(src, src + w, row + p);
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution layer: stride fixed at 1, zero same-padding of floor(k/2), so
// output spatial extents equal input extents. `sre` kernels carry one weight
// per band; `standard` carries the dense k^d kernel (the comparison twin).
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  ConvKind kind = ConvKind::sre;
  int dims = 2;
  int c_in = 1;
  int c_out = 1;
  IndexMatrixPtr idx;  // always set; standard uses only the geometry
  Tensor<T> weights;   // sre: [C_out,C_in,b]; standard: [C_out,C_in,k^d]
  Tensor<T> bias;      // [C_out]

  int k() const { return idx->spec.k; }
  std::int64_t weight_rows() const {
    return kind == ConvKind::sre ? static_cast<std::int64_t>(idx->bands()) : idx->cells();
  }
};

template <typename T>
ConvLayer<T> make_conv_layer(ConvKind kind, int dims, int c_in, int c_out, int kernel,
                             std::uint64_t seed) {
  ConvLayer<T> layer;
  layer.kind = kind;
  layer.dims = dims;
  layer.c_in = c_in;
  layer.c_out = c_out;
  layer.idx = build_index_matrix(make_band_spec(kernel, dims));
  if (kind == ConvKind::sre) {
    auto bw = init_band_weights<T>(*layer.idx, c_in, c_out, seed);
    layer.weights = std::move(bw.weights);
    layer.bias = std::move(bw.bias);
  } else {
    const double bound = std::sqrt(6.0 / (static_cast<double>(c_in) *
                                          static_cast<double>(layer.idx->cells())));
    layer.weights = uniform_init<T>(Shape{c_out, c_in, layer.idx->cells()}, bound, seed);
    layer.bias = Tensor<T>(Shape{c_out});
  }
  return layer;
}

template <typename T>
struct ConvCache {
  Tensor<T> xp;  // padded input, [N, C_in, spatial+2r]
  Shape x_shape;
};

namespace detail {

template <typename T>
void conv_col_for_sample(const ConvLayer<T>& layer, const T* xp_sample,
                         const std::vector<std::int64_t>& sp_pad,
                         const std::vector<std::int64_t>& sp, const BandProgram2d* prog2d,
                         T* col) {
  if (layer.kind == ConvKind::sre) {
    if (layer.dims == 2) {
      band_col_2d(xp_sample, layer.c_in, sp_pad[0], sp_pad[1], sp[0], sp[1], *prog2d, col);
    } else {
      band_col_3d(xp_sample, layer.c_in, sp_pad[0], sp_pad[1], sp_pad[2], sp[0], sp[1], sp[2],
                  *layer.idx, col);
    }
  } else {
    if (layer.dims == 2) {
      im2col_2d(xp_sample, layer.c_in, sp_pad[0], sp_pad[1], sp[0], sp[1], layer.k(), col);
    } else {
      im2col_3d(xp_sample, layer.c_in, sp_pad[0], sp_pad[1], sp_pad[2], sp[0], sp[1], sp[2],
                layer.k(), col);
    }
  }
}

// Core driver shared by forward (x conv W) and input-gradient (dy conv W').
template <typename T>
Tensor<T> conv_apply(const ConvLayer<T>& layer, const Tensor<T>& x, std::int64_t in_ch,
                     std::int64_t out_ch, const T* wmat, const T* bias_or_null,
                     Tensor<T>* keep_padded = nullptr) {
  const int d = layer.dims;
  if (x.ndim() != d + 2) fail(err::shape, "conv: input must be [N, C, spatial...]");
  if (x.dim(1) != in_ch) {
    fail(err::shape, "conv: expected " + std::to_string(in_ch) + " input channels, got " +
                         std::to_string(x.dim(1)));
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t r = layer.k() / 2;

  std::vector<std::int64_t> sp(static_cast<std::size_t>(d));
  std::vector<std::int64_t> sp_pad(static_cast<std::size_t>(d));
  std::int64_t out_cells = 1, pad_cells = 1;
  for (int a = 0; a < d; ++a) {
    sp[static_cast<std::size_t>(a)] = x.dim(2 + a);
    sp_pad[static_cast<std::size_t>(a)] = sp[static_cast<std::size_t>(a)] + 2 * r;
    out_cells *= sp[static_cast<std::size_t>(a)];
    pad_cells *= sp_pad[static_cast<std::size_t>(a)];
  }

  Tensor<T> xp = pad(x, d, r, T{0});

  BandProgram2d prog;
  if (layer.kind == ConvKind::sre && d == 2) {
    prog = make_band_program_2d(*layer.idx, sp_pad[1]);
  }
  const std::int64_t col_rows = in_ch * layer.weight_rows();

  Shape out_shape{n, out_ch};
  for (int a = 0; a < d; ++a) out_shape.push_back(sp[static_cast<std::size_t>(a)]);
  Tensor<T> y(out_shape);

  parallel_for(n, [&](std::int64_t s) {
    std::vector<T> col(static_cast<std::size_t>(col_rows * out_cells));
    conv_col_for_sample(layer, xp.data() + s * in_ch * pad_cells, sp_pad, sp,
                        layer.kind == ConvKind::sre && d == 2 ? &prog : nullptr, col.data());
    T* ys = y.data() + s * out_ch * out_cells;
    gemm_nn(out_ch, col_rows, out_cells, wmat, col.data(), ys, false);
    if (bias_or_null) {
      for (std::int64_t co = 0; co < out_ch; ++co) {
        const T bv = bias_or_null[co];
        T* row = ys + co * out_cells;
        for (std::int64_t p = 0; p < out_cells; ++p) row[p] += bv;
      }
    }
  });
  if (keep_padded) *keep_padded = std::move(xp);
  return y;
}

}  // namespace detail

// y = x (*) K + bias, where K is the expanded band kernel or the dense
// kernel. The weight matrix view is [C_out][C_in * rows] with rows = b for
// sre kernels (band-sum formulation, algebraically K = M_I * weights) and
// rows = k^d for the dense twin.
template <typename T>
Tensor<T> conv_forward(const ConvLayer<T>& layer, const Tensor<T>& x, ConvCache<T>* cache) {
  Tensor<T> y = detail::conv_apply(layer, x, layer.c_in, layer.c_out, layer.weights.data(),
                                   layer.bias.data(), cache ? &cache->xp : nullptr);
  if (cache) cache->x_shape = x.shape();
  return y;
}

template <typename T>
struct ConvGrads {
  Tensor<T> dx;
  Tensor<T> dweights;
  Tensor<T> dbias;
};

template <typename T>
ConvGrads<T> conv_backward(const ConvLayer<T>& layer, const Tensor<T>& dy,
                           const ConvCache<T>& cache) {
  const int d = layer.dims;
  if (dy.ndim() != d + 2 || dy.dim(1) != layer.c_out) {
    fail(err::shape, "conv_backward: dy shape mismatch");
  }
  const std::int64_t n = dy.dim(0);
  if (cache.x_shape.empty() || cache.x_shape[0] != n) {
    fail(err::argument, "conv_backward: cache does not match dy");
  }
  const std::int64_t r = layer.k() / 2;

  std::vector<std::int64_t> sp(static_cast<std::size_t>(d));
  std::vector<std::int64_t> sp_pad(static_cast<std::size_t>(d));
  std::int64_t out_cells = 1, pad_cells = 1;
  for (int a = 0; a < d; ++a) {
    sp[static_cast<std::size_t>(a)] = dy.dim(2 + a);
    sp_pad[static_cast<std::size_t>(a)] = sp[static_cast<std::size_t>(a)] + 2 * r;
    out_cells *= sp[static_cast<std::size_t>(a)];
    pad_cells *= sp_pad[static_cast<std::size_t>(a)];
  }
  for (int a = 0; a < d; ++a) {
    if (cache.x_shape[static_cast<std::size_t>(2 + a)] != sp[static_cast<std::size_t>(a)]) {
      fail(err::argument, "conv_backward: cache does not match dy");
    }
  }

  const std::int64_t wrows = layer.weight_rows();
  const std::int64_t col_rows = layer.c_in * wrows;

  detail::BandProgram2d prog;
  if (layer.kind == ConvKind::sre && d == 2) {
    prog = detail::make_band_program_2d(*layer.idx, sp_pad[1]);
  }

  // Weight gradient: dW[co][ci*rows+t] = sum_s sum_p dy[s,co,p] * col_s[t][p].
  // Per-sample partials are reduced in sample order afterwards.
  std::vector<T> dw_partial(static_cast<std::size_t>(n * layer.c_out * col_rows));
  std::vector<T> db_partial(static_cast<std::size_t>(n * layer.c_out));

  parallel_for(n, [&](std::int64_t s) {
    std::vector<T> col(static_cast<std::size_t>(col_rows * out_cells));
    detail::conv_col_for_sample(layer, cache.xp.data() + s * layer.c_in * pad_cells, sp_pad, sp,
                                layer.kind == ConvKind::sre && d == 2 ? &prog : nullptr,
                                col.data());
    const T* dys = dy.data() + s * layer.c_out * out_cells;
    gemm_nt(layer.c_out, col_rows, out_cells, dys, col.data(),
            dw_partial.data() + s * layer.c_out * col_rows, false);
    T* db = db_partial.data() + s * layer.c_out;
    for (std::int64_t co = 0; co < layer.c_out; ++co) {
      const T* row = dys + co * out_cells;
      T acc{0};
      for (std::int64_t p = 0; p < out_cells; ++p) acc += row[p];
      db[co] = acc;
    }
  });

  ConvGrads<T> g;
  g.dweights = Tensor<T>(layer.weights.shape());
  g.dbias = Tensor<T>(Shape{layer.c_out});
  for (std::int64_t s = 0; s < n; ++s) {
    const T* dw = dw_partial.data() + s * layer.c_out * col_rows;
    for (std::int64_t i = 0; i < layer.c_out * col_rows; ++i) g.dweights[i] += dw[i];
    const T* db = db_partial.data() + s * layer.c_out;
    for (std::int64_t co = 0; co < layer.c_out; ++co) g.dbias[co] += db[co];
  }

  // Input gradient: dx = dy (*) K', where K' swaps in/out channels and
  // reverses the spatial cells. Band kernels are their own reversal, so K'
  // is just the channel-transposed weight tensor.
  ConvLayer<T> swapped;
  swapped.kind = layer.kind;
  swapped.dims = layer.dims;
  swapped.c_in = layer.c_out;
  swapped.c_out = layer.c_in;
  swapped.idx = layer.idx;
  swapped.weights = Tensor<T>(Shape{layer.c_in, layer.c_out, wrows});
  const T* w = layer.weights.data();
  T* wswap = swapped.weights.data();
  const bool reverse_cells = layer.kind == ConvKind::standard;
  for (std::int64_t co = 0; co < layer.c_out; ++co) {
    for (std::int64_t ci = 0; ci < layer.c_in; ++ci) {
      const T* src = w + (co * layer.c_in + ci) * wrows;
      T* dst = wswap + (ci * layer.c_out + co) * wrows;
      if (reverse_cells) {
        for (std::int64_t t = 0; t < wrows; ++t) dst[t] = src[wrows - 1 - t];
      } else {
        std::copy(src, src + wrows, dst);
      }
    }
  }
  g.dx = detail::conv_apply(swapped, dy, layer.c_out, layer.c_in, swapped.weights.data(),
                            static_cast<const T*>(nullptr));
  return g;
}

// Analytic multiply-add count of one inference convolution over the given
// input geometry. With the kernel pre-expanded, an sre convolution slides
// the same dense k^d window as its standard twin, so both kinds share this
// count by construction.
inline std::int64_t conv_inference_macs(std::int64_t n, std::int64_t c_in, std::int64_t c_out,
                                        const std::vector<std::int64_t>& spatial, int k) {
  std::int64_t cells = 1;
  for (auto s : spatial) cells *= s;
  std::int64_t window = 1;
  for (std::size_t i = 0; i < spatial.size(); ++i) window *= k;
  return n * c_out * cells * c_in * window;
}

// ---------------------------------------------------------------------------
// 1x1 convolution: per-position linear map across channels.
// ---------------------------------------------------------------------------

template <typename T>
struct PointwiseLayer {
  int c_in = 1;
  int c_out = 1;
  Tensor<T> weights;  // [C_out, C_in]
  Tensor<T> bias;     // [C_out]
};

template <typename T>
PointwiseLayer<T> make_pointwise_layer(int c_in, int c_out, std::uint64_t seed) {
  PointwiseLayer<T> l;
  l.c_in = c_in;
  l.c_out = c_out;
  l.weights = uniform_init<T>(Shape{c_out, c_in}, std::sqrt(6.0 / c_in), seed);
  l.bias = Tensor<T>(Shape{c_out});
  return l;
}

template <typename T>
struct PointwiseCache {
  Tensor<T> x;
};

template <typename T>
Tensor<T> pointwise_forward(const PointwiseLayer<T>& layer, const Tensor<T>& x,
                            PointwiseCache<T>* cache) {
  if (x.ndim() < 3 || x.dim(1) != layer.c_in) {
    fail(err::shape, "pointwise: channel mismatch");
  }
  const std::int64_t n = x.dim(0);
  std::int64_t cells = 1;
  for (int a = 2; a < x.ndim(); ++a) cells *= x.dim(a);

  Shape out_shape = x.shape();
  out_shape[1] = layer.c_out;
  Tensor<T> y(out_shape);
  parallel_for(n, [&](std::int64_t s) {
    T* ys = y.data() + s * layer.c_out * cells;
    gemm_nn(layer.c_out, layer.c_in, cells, layer.weights.data(),
            x.data() + s * layer.c_in * cells, ys, false);
    for (std::int64_t co = 0; co < layer.c_out; ++co) {
      const T bv = layer.bias[co];
      T* row = ys + co * cells;
      for (std::int64_t p = 0; p < cells; ++p) row[p] += bv;
    }
  });
  if (cache) cache->x = x;
  return y;
}

template <typename T>
ConvGrads<T> pointwise_backward(const PointwiseLayer<T>& layer, const Tensor<T>& dy,
                                const PointwiseCache<T>& cache) {
  if (dy.ndim() < 3 || dy.dim(1) != layer.c_out || cache.x.ndim() != dy.ndim() ||
      cache.x.dim(0) != dy.dim(0) || cache.x.dim(1) != layer.c_in) {
    fail(err::shape, "pointwise_backward: shape mismatch");
  }
  const std::int64_t n = dy.dim(0);
  std::int64_t cells = 1;
  for (int a = 2; a < dy.ndim(); ++a) cells *= dy.dim(a);

  ConvGrads<T> g;
  g.dx = Tensor<T>(cache.x.shape());
  g.dweights = Tensor<T>(layer.weights.shape());
  g.dbias = Tensor<T>(Shape{layer.c_out});

  // dx = W^T dy per position.
  Tensor<T> wt(Shape{layer.c_in, layer.c_out});
  for (std::int64_t i = 0; i < layer.c_out; ++i) {
    for (std::int64_t j = 0; j < layer.c_in; ++j) {
      wt[j * layer.c_out + i] = layer.weights[i * layer.c_in + j];
    }
  }

  std::vector<T> dw_partial(static_cast<std::size_t>(n) * layer.c_out * layer.c_in);
  std::vector<T> db_partial(static_cast<std::size_t>(n) * layer.c_out);
  parallel_for(n, [&](std::int64_t s) {
    const T* dys = dy.data() + s * layer.c_out * cells;
    gemm_nn(layer.c_in, layer.c_out, cells, wt.data(), dys, g.dx.data() + s * layer.c_in * cells,
            false);
    gemm_nt(layer.c_out, layer.c_in, cells, dys, cache.x.data() + s * layer.c_in * cells,
            dw_partial.data() + s * layer.c_out * layer.c_in, false);
    T* db = db_partial.data() + s * layer.c_out;
    for (std::int64_t co = 0; co < layer.c_out; ++co) {
      const T* row = dys + co * cells;
      T acc{0};
      for (std::int64_t p = 0; p < cells; ++p) acc += row[p];
      db[co] = acc;
    }
  });
  for (std::int64_t s = 0; s < n; ++s) {
    const T* dw = dw_partial.data() + s * layer.c_out * layer.c_in;
    for (std::int64_t i = 0; i < layer.c_out * layer.c_in; ++i) g.dweights[i] += dw[i];
    const T* db = db_partial.data() + s * layer.c_out;
    for (std::int64_t co = 0; co < layer.c_out; ++co) g.dbias[co] += db[co];
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x average pooling, non-overlapping. Even extents required: on even grids
// pooling windows map onto pooling windows under every grid symmetry, which
// keeps the chain exact. Window sums pair opposite corners (2D) or sort (3D)
// so the result is invariant under the within-window cell permutation.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int dims) {
  if (x.ndim() != dims + 2) fail(err::shape, "avg_pool: input must be [N, C, spatial...]");
  for (int a = 0; a < dims; ++a) {
    if (x.dim(2 + a) % 2 != 0) {
      fail(err::shape, "avg_pool: odd spatial extent " + std::to_string(x.dim(2 + a)));
    }
  }
  const std::int64_t nc = x.dim(0) * x.dim(1);
  Shape out_shape = x.shape();
  for (int a = 0; a < dims; ++a) out_shape[static_cast<std::size_t>(2 + a)] /= 2;
  Tensor<T> y(out_shape);

  if (dims == 2) {
    const std::int64_t h = x.dim(2), w = x.dim(3);
    const std::int64_t oh = h / 2, ow = w / 2;
    const T quarter = T{1} / T{4};
    for (std::int64_t c = 0; c < nc; ++c) {
      const T* xc = x.data() + c * h * w;
      T* yc = y.data() + c * oh * ow;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        const T* r0 = xc + (2 * oy) * w;
        const T* r1 = r0 + w;
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const std::int64_t x0 = 2 * ox;
          yc[oy * ow + ox] = ((r0[x0] + r1[x0 + 1]) + (r0[x0 + 1] + r1[x0])) * quarter;
        }
      }
    }
  } else {
    const std::int64_t dd = x.dim(2), h = x.dim(3), w = x.dim(4);
    const std::int64_t od = dd / 2, oh = h / 2, ow = w / 2;
    const T eighth = T{1} / T{8};
    std::array<T, 8> win;
    for (std::int64_t c = 0; c < nc; ++c) {
      const T* xc = x.data() + c * dd * h * w;
      T* yc = y.data() + c * od * oh * ow;
      for (std::int64_t oz = 0; oz < od; ++oz) {
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            int t = 0;
            for (int dz = 0; dz < 2; ++dz) {
              for (int dy2 = 0; dy2 < 2; ++dy2) {
                for (int dx = 0; dx < 2; ++dx) {
                  win[static_cast<std::size_t>(t++)] =
                      xc[((2 * oz + dz) * h + 2 * oy + dy2) * w + 2 * ox + dx];
                }
              }
            }
            std::sort(win.begin(), win.end());
            T s{0};
            for (const T v : win) s += v;
            yc[(oz * oh + oy) * ow + ox] = s * eighth;
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool_backward(const Tensor<T>& dy, int dims, const Shape& x_shape) {
  Tensor<T> dx(x_shape);
  std::int64_t nc = x_shape[0] * x_shape[1];
  const T scale = T{1} / static_cast<T>(std::int64_t{1} << dims);
  if (dims == 2) {
    const std::int64_t h = x_shape[2], w = x_shape[3];
    const std::int64_t oh = h / 2, ow = w / 2;
    for (std::int64_t c = 0; c < nc; ++c) {
      const T* dyc = dy.data() + c * oh * ow;
      T* dxc = dx.data() + c * h * w;
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const T v = dyc[oy * ow + ox] * scale;
          dxc[(2 * oy) * w + 2 * ox] = v;
          dxc[(2 * oy) * w + 2 * ox + 1] = v;
          dxc[(2 * oy + 1) * w + 2 * ox] = v;
          dxc[(2 * oy + 1) * w + 2 * ox + 1] = v;
        }
      }
    }
  } else {
    const std::int64_t dd = x_shape[2], h = x_shape[3], w = x_shape[4];
    const std::int64_t od = dd / 2, oh = h / 2, ow = w / 2;
    for (std::int64_t c = 0; c < nc; ++c) {
      const T* dyc = dy.data() + c * od * oh * ow;
      T* dxc = dx.data() + c * dd * h * w;
      for (std::int64_t oz = 0; oz < od; ++oz) {
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const T v = dyc[(oz * oh + oy) * ow + ox] * scale;
            for (int dz = 0; dz < 2; ++dz) {
              for (int dy2 = 0; dy2 < 2; ++dy2) {
                for (int dx2 = 0; dx2 < 2; ++dx2) {
                  dxc[((2 * oz + dz) * h + 2 * oy + dy2) * w + 2 * ox + dx2] = v;
                }
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Global average pooling: [N, C, spatial...] -> [N, C]. Values are summed in
// ascending sorted order, which makes the mean invariant under any spatial
// permutation (and in particular under every grid symmetry) bit-exactly.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.ndim() < 3) fail(err::shape, "global_avg_pool: input must be [N, C, spatial...]");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  std::int64_t cells = 1;
  for (int a = 2; a < x.ndim(); ++a) cells *= x.dim(a);
  Tensor<T> y(Shape{n, c});
  std::vector<T> scratch(static_cast<std::size_t>(cells));
  const T inv = T{1} / static_cast<T>(cells);
  for (std::int64_t i = 0; i < n * c; ++i) {
    const T* src = x.data() + i * cells;
    std::copy(src, src + cells, scratch.begin());
    std::sort(scratch.begin(), scratch.end());
    T s{0};
    for (const T v : scratch) s += v;
    y[i] = s * inv;
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const Shape& x_shape) {
  Tensor<T> dx(x_shape);
  std::int64_t cells = 1;
  for (std::size_t a = 2; a < x_shape.size(); ++a) cells *= x_shape[a];
  const T inv = T{1} / static_cast<T>(cells);
  for (std::int64_t i = 0; i < dy.numel(); ++i) {
    T* dst = dx.data() + i * cells;
    const T v = dy[i] * inv;
    for (std::int64_t p = 0; p < cells; ++p) dst[p] = v;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU. Subgradient at exactly 0 is 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& y) {
  if (!dy.same_shape(y)) fail(err::shape, "relu_backward: shape mismatch");
  Tensor<T> dx(dy.shape());
  for (std::int64_t i = 0; i < dy.numel(); ++i) dx[i] = y[i] > T{0} ? dy[i] : T{0};
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over batch and spatial dims, per channel.
// Spatially uniform, so it commutes with grid symmetries; in eval mode the
// per-channel affine uses running statistics and the commutation is exact.
// ---------------------------------------------------------------------------

template <typename T>
struct BatchNormLayer {
  Tensor<T> gamma, beta;              // [C]
  Tensor<T> running_mean, running_var;  // [C]
  double eps = 1e-5;
  double momentum = 0.1;
};

template <typename T>
BatchNormLayer<T> make_batch_norm(int channels) {
  BatchNormLayer<T> bn;
  bn.gamma = Tensor<T>::full(Shape{channels}, T{1});
  bn.beta = Tensor<T>(Shape{channels});
  bn.running_mean = Tensor<T>(Shape{channels});
  bn.running_var = Tensor<T>::full(Shape{channels}, T{1});
  return bn;
}

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per channel
  Shape x_shape;
};

template <typename T>
Tensor<T> batch_norm_forward(BatchNormLayer<T>& bn, const Tensor<T>& x, Mode mode,
                             BatchNormCache<T>* cache) {
  if (x.ndim() < 3) fail(err::shape, "batch_norm: input must be [N, C, spatial...]");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  if (c != bn.gamma.numel()) fail(err::shape, "batch_norm: channel mismatch");
  std::int64_t cells = 1;
  for (int a = 2; a < x.ndim(); ++a) cells *= x.dim(a);
  const std::int64_t count = n * cells;

  Tensor<T> y(x.shape());

  if (mode == Mode::train) {
    if (count < 2) fail(err::argument, "batch_norm: train mode needs at least 2 values per channel");
    if (cache) {
      cache->xhat = Tensor<T>(x.shape());
      cache->inv_std.assign(static_cast<std::size_t>(c), T{0});
      cache->x_shape = x.shape();
    }
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T mean{0};
      for (std::int64_t s = 0; s < n; ++s) {
        const T* src = x.data() + (s * c + ch) * cells;
        for (std::int64_t p = 0; p < cells; ++p) mean += src[p];
      }
      mean /= static_cast<T>(count);
      T var{0};
      for (std::int64_t s = 0; s < n; ++s) {
        const T* src = x.data() + (s * c + ch) * cells;
        for (std::int64_t p = 0; p < cells; ++p) {
          const T d = src[p] - mean;
          var += d * d;
        }
      }
      var /= static_cast<T>(count);  // population variance
      const T inv = T{1} / std::sqrt(var + static_cast<T>(bn.eps));
      const T g = bn.gamma[ch], b = bn.beta[ch];
      for (std::int64_t s = 0; s < n; ++s) {
        const T* src = x.data() + (s * c + ch) * cells;
        T* dst = y.data() + (s * c + ch) * cells;
        T* xh = cache ? cache->xhat.data() + (s * c + ch) * cells : nullptr;
        for (std::int64_t p = 0; p < cells; ++p) {
          const T hat = (src[p] - mean) * inv;
          if (xh) xh[p] = hat;
          dst[p] = g * hat + b;
        }
      }
      if (cache) cache->inv_std[static_cast<std::size_t>(ch)] = inv;
      const T mom = static_cast<T>(bn.momentum);
      bn.running_mean[ch] = (T{1} - mom) * bn.running_mean[ch] + mom * mean;
      bn.running_var[ch] = (T{1} - mom) * bn.running_var[ch] + mom * var;
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T inv = T{1} / std::sqrt(bn.running_var[ch] + static_cast<T>(bn.eps));
      const T g = bn.gamma[ch], b = bn.beta[ch], m = bn.running_mean[ch];
      const T scale = g * inv;
      const T shift = b - m * scale;
      for (std::int64_t s = 0; s < n; ++s) {
        const T* src = x.data() + (s * c + ch) * cells;
        T* dst = y.data() + (s * c + ch) * cells;
        for (std::int64_t p = 0; p < cells; ++p) dst[p] = src[p] * scale + shift;
      }
    }
  }
  return y;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> dx, dgamma, dbeta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BatchNormLayer<T>& bn, const Tensor<T>& dy,
                                      const BatchNormCache<T>& cache) {
  if (dy.shape() != cache.x_shape) fail(err::shape, "batch_norm_backward: shape mismatch");
  const std::int64_t n = dy.dim(0), c = dy.dim(1);
  std::int64_t cells = 1;
  for (int a = 2; a < dy.ndim(); ++a) cells *= dy.dim(a);
  const T count = static_cast<T>(n * cells);

  BatchNormGrads<T> g;
  g.dx = Tensor<T>(dy.shape());
  g.dgamma = Tensor<T>(Shape{c});
  g.dbeta = Tensor<T>(Shape{c});

  for (std::int64_t ch = 0; ch < c; ++ch) {
    T sum_dy{0}, sum_dy_xhat{0};
    for (std::int64_t s = 0; s < n; ++s) {
      const T* dyp = dy.data() + (s * c + ch) * cells;
      const T* xh = cache.xhat.data() + (s * c + ch) * cells;
      for (std::int64_t p = 0; p < cells; ++p) {
        sum_dy += dyp[p];
        sum_dy_xhat += dyp[p] * xh[p];
      }
    }
    g.dgamma[ch] = sum_dy_xhat;
    g.dbeta[ch] = sum_dy;
    const T scale = bn.gamma[ch] * cache.inv_std[static_cast<std::size_t>(ch)] / count;
    for (std::int64_t s = 0; s < n; ++s) {
      const T* dyp = dy.data() + (s * c + ch) * cells;
      const T* xh = cache.xhat.data() + (s * c + ch) * cells;
      T* dxp = g.dx.data() + (s * c + ch) * cells;
      for (std::int64_t p = 0; p < cells; ++p) {
        dxp[p] = scale * (count * dyp[p] - sum_dy - xh[p] * sum_dy_xhat);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Linear head: logits = x W^T + bias.
// ---------------------------------------------------------------------------

template <typename T>
struct LinearLayer {
  Tensor<T> weights;  // [K, F]
  Tensor<T> bias;     // [K]
};

template <typename T>
LinearLayer<T> make_linear(int features, int classes, std::uint64_t seed) {
  LinearLayer<T> l;
  l.weights = uniform_init<T>(Shape{classes, features}, std::sqrt(6.0 / features), seed);
  l.bias = Tensor<T>(Shape{classes});
  return l;
}

template <typename T>
struct LinearCache {
  Tensor<T> x;
};

template <typename T>
Tensor<T> linear_forward(const LinearLayer<T>& layer, const Tensor<T>& x,
                         LinearCache<T>* cache) {
  if (x.ndim() != 2 || x.dim(1) != layer.weights.dim(1)) {
    fail(err::shape, "linear: feature size mismatch, x " + shape_str(x.shape()) + " vs W " +
                         shape_str(layer.weights.shape()));
  }
  const std::int64_t n = x.dim(0), f = x.dim(1), k = layer.weights.dim(0);
  Tensor<T> y(Shape{n, k});
  gemm_nt(n, k, f, x.data(), layer.weights.data(), y.data(), false);
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t j = 0; j < k; ++j) y[s * k + j] += layer.bias[j];
  }
  if (cache) cache->x = x;
  return y;
}

template <typename T>
ConvGrads<T> linear_backward(const LinearLayer<T>& layer, const Tensor<T>& dy,
                             const LinearCache<T>& cache) {
  const std::int64_t n = dy.dim(0), k = layer.weights.dim(0), f = layer.weights.dim(1);
  if (dy.ndim() != 2 || dy.dim(1) != k) fail(err::shape, "linear_backward: shape mismatch");
  ConvGrads<T> g;
  g.dx = Tensor<T>(Shape{n, f});
  g.dweights = Tensor<T>(Shape{k, f});
  g.dbias = Tensor<T>(Shape{k});
  gemm_nn(n, k, f, dy.data(), layer.weights.data(), g.dx.data(), false);
  // dW = dy^T x
  for (std::int64_t j = 0; j < k; ++j) {
    for (std::int64_t s = 0; s < n; ++s) {
      const T d = dy[s * k + j];
      const T* xs = cache.x.data() + s * f;
      T* wrow = g.dweights.data() + j * f;
      for (std::int64_t t = 0; t < f; ++t) wrow[t] += d * xs[t];
    }
    T acc{0};
    for (std::int64_t s = 0; s < n; ++s) acc += dy[s * k + j];
    g.dbias[j] = acc;
  }
  return g;
}

}  // namespace sre
