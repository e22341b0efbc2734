#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/kernel.hpp"

using namespace sre;

TEST_CASE("band_count formula and validation") {
  CHECK(band_count(1) == 2);
  CHECK(band_count(3) == 3);
  CHECK(band_count(5) == 4);
  CHECK(band_count(9) == 6);
  for (int k = 1; k <= 15; k += 2) CHECK(band_count(k) == k / 2 + 2);

  CHECK_THROWS_AS(static_cast<void>(band_count(4)), Error);
  CHECK_THROWS_AS(static_cast<void>(band_count(0)), Error);
  CHECK_THROWS_AS(static_cast<void>(band_count(-3)), Error);
  try {
    static_cast<void>(band_count(4));
  } catch (const Error& e) {
    CHECK(e.kind() == std::string("invalid-kernel-size"));
  }
}

TEST_CASE("distance matrix: k=3 2D, k=1 and k=3 3D") {
  auto d = distance_matrix(make_band_spec(3, 2));
  const double s2 = std::sqrt(2.0);
  const std::vector<double> want{s2, 1, s2, 1, 0, 1, s2, 1, s2};
  for (std::int64_t i = 0; i < 9; ++i) CHECK(d[i] == doctest::Approx(want[i]).epsilon(1e-15));

  auto d1 = distance_matrix(make_band_spec(1, 2));
  CHECK(d1.numel() == 1);
  CHECK(d1[0] == 0.0);

  auto d3 = distance_matrix(make_band_spec(3, 3));
  // center slice (z offset 0) equals the 2D matrix
  for (std::int64_t i = 0; i < 9; ++i) {
    CHECK(d3[9 + i] == doctest::Approx(want[i]).epsilon(1e-15));
  }
  CHECK(d3[0] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
  CHECK(d3[26] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));
}

TEST_CASE("distance matrix is invariant under the grid group") {
  for (int dims : {2, 3}) {
    for (int k : {3, 5}) {
      auto d = distance_matrix(make_band_spec(k, dims));
      for (const auto& g : grid_group(dims)) {
        CHECK(grid_transform(d, g).vec() == d.vec());
      }
    }
  }
}

TEST_CASE("index matrix: k=3 worked example") {
  auto idx = build_index_matrix(make_band_spec(3, 2));
  CHECK(idx->bands() == 3);
  CHECK(idx->active_cells == 5);

  // Raster cells: 4 corners removed, center in band 0, edges in band 2.
  const std::vector<std::int32_t> want{-1, 2, -1, 2, 0, 2, -1, 2, -1};
  CHECK(idx->band_of == want);

  // Column sums of m: 1 for active cells, 0 for corners.
  for (std::int64_t p = 0; p < 9; ++p) {
    int sum = 0;
    for (int j = 0; j < 3; ++j) sum += idx->m[static_cast<std::size_t>(j * 9 + p)];
    CHECK(sum == (want[static_cast<std::size_t>(p)] >= 0 ? 1 : 0));
  }
  // Band 1 is empty at k=3 under equal-width binning.
  CHECK(idx->band_cells[1].empty());
}

TEST_CASE("index matrix: k=1 degenerate") {
  auto idx = build_index_matrix(make_band_spec(1, 2));
  CHECK(idx->bands() == 2);
  CHECK(idx->active_cells == 1);
  CHECK(idx->band_of == std::vector<std::int32_t>{0});
  CHECK(idx->m == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("index matrix invariants for a range of sizes") {
  for (int dims : {2, 3}) {
    for (int k : {1, 3, 5, 7, 9}) {
      if (dims == 3 && k > 5) continue;
      auto idx = build_index_matrix(make_band_spec(k, dims));
      const std::int64_t cells = idx->cells();
      const int r = k / 2;
      auto d = distance_matrix(idx->spec);
      std::int64_t active = 0;
      for (std::int64_t p = 0; p < cells; ++p) {
        int col = 0;
        for (int j = 0; j < idx->bands(); ++j) {
          col += idx->m[static_cast<std::size_t>(j) * cells + static_cast<std::size_t>(p)];
        }
        CHECK(col <= 1);
        const bool corner = d[p] > static_cast<double>(r) + 1e-12;
        CHECK(col == (corner ? 0 : 1));
        CHECK((idx->band_of[static_cast<std::size_t>(p)] >= 0) == !corner);
        active += col;
      }
      CHECK(active == idx->active_cells);

      // Band assignment is group-invariant.
      Tensor<std::int32_t> bands(
          [&] {
            Shape s;
            for (int i = 0; i < dims; ++i) s.push_back(k);
            return s;
          }(),
          std::vector<std::int32_t>(idx->band_of));
      for (const auto& g : grid_group(dims)) {
        CHECK(grid_transform(bands, g).vec() == bands.vec());
      }
    }
  }
}

TEST_CASE("expand_kernel: k=3 worked example and linearity") {
  auto idx = build_index_matrix(make_band_spec(3, 2));
  Tensor<float> w(Shape{1, 1, 3}, std::vector<float>{1, 2, 3});
  auto kfull = expand_kernel(*idx, w);
  CHECK(kfull.shape() == Shape{1, 1, 3, 3});
  CHECK(kfull.vec() == std::vector<float>{0, 3, 0, 3, 1, 3, 0, 3, 0});

  auto zero = expand_kernel(*idx, Tensor<float>(Shape{1, 1, 3}));
  for (std::int64_t i = 0; i < zero.numel(); ++i) CHECK(zero[i] == 0.0f);

  Tensor<float> w2(Shape{1, 1, 3}, std::vector<float>{0.5f, -1.0f, 2.0f});
  Tensor<float> sum(Shape{1, 1, 3});
  for (int i = 0; i < 3; ++i) sum[i] = w[i] + w2[i];
  auto k1 = expand_kernel(*idx, w);
  auto k2 = expand_kernel(*idx, w2);
  auto ks = expand_kernel(*idx, sum);
  for (std::int64_t i = 0; i < ks.numel(); ++i) CHECK(ks[i] == k1[i] + k2[i]);
}

TEST_CASE("expansion equals the index-matrix product (dual route)") {
  Rng rng(17);
  for (int dims : {2, 3}) {
    for (int k : {3, 5}) {
      auto idx = build_index_matrix(make_band_spec(k, dims));
      Tensor<float> w(Shape{2, 3, idx->bands()});
      for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<float>(rng.uniform(-1, 1));

      auto direct = expand_kernel(*idx, w);
      auto m = idx->matrix<float>();
      for (std::int64_t co = 0; co < 2; ++co) {
        for (std::int64_t ci = 0; ci < 3; ++ci) {
          Tensor<float> row(Shape{1, idx->bands()});
          for (int j = 0; j < idx->bands(); ++j) row[j] = w.at({co, ci, j});
          auto prod = matmul(row, m);  // [1 x k^d]
          const float* dk = direct.data() + (co * 3 + ci) * idx->cells();
          for (std::int64_t p = 0; p < idx->cells(); ++p) CHECK(prod[p] == dk[p]);
        }
      }
    }
  }
}

TEST_CASE("expanded kernels are bit-exactly symmetric under the grid group") {
  Rng rng(23);
  for (int dims : {2, 3}) {
    for (int k : {3, 5, 7, 9}) {
      if (dims == 3 && k > 5) continue;
      auto idx = build_index_matrix(make_band_spec(k, dims));
      const auto group = grid_group(dims);
      for (int trial = 0; trial < 5; ++trial) {
        Tensor<float> w(Shape{1, 1, idx->bands()});
        for (std::int64_t i = 0; i < w.numel(); ++i) {
          w[i] = static_cast<float>(rng.uniform(-2, 2));
        }
        auto kf = expand_kernel(*idx, w);
        for (const auto& g : group) {
          CHECK(grid_transform(kf, g).vec() == kf.vec());
        }
      }
    }
  }
}

TEST_CASE("kernel_param_count formulas") {
  auto pc = kernel_param_count(64, 64, make_band_spec(9, 2), true);
  CHECK(pc.sre == 24640);
  CHECK(pc.standard == 331840);

  auto pc2 = kernel_param_count(1, 1, make_band_spec(3, 2), true);
  CHECK(pc2.sre == 4);

  auto pc3 = kernel_param_count(1, 1, make_band_spec(5, 3), false);
  CHECK(pc3.sre == 4);
  CHECK(pc3.standard == 125);

  // Ratio b / k^d < 1 for all k >= 3.
  for (int dims : {2, 3}) {
    for (int k : {3, 5, 7, 9}) {
      auto p = kernel_param_count(8, 8, make_band_spec(k, dims), false);
      CHECK(p.sre < p.standard);
    }
  }
}

TEST_CASE("init_band_weights: determinism, bias, sampling statistics") {
  auto idx = build_index_matrix(make_band_spec(5, 2));
  auto a = init_band_weights<float>(*idx, 3, 4, 99);
  auto b = init_band_weights<float>(*idx, 3, 4, 99);
  CHECK(a.weights.vec() == b.weights.vec());
  for (std::int64_t i = 0; i < a.bias.numel(); ++i) CHECK(a.bias[i] == 0.0f);

  auto c = init_band_weights<float>(*idx, 3, 4, 100);
  CHECK(a.weights.vec() != c.weights.vec());

  // Empirical variance of expanded active cells ~ s^2/3 within 20%.
  const double s = std::sqrt(6.0 / (3.0 * static_cast<double>(idx->active_cells)));
  double sum = 0.0, sumsq = 0.0;
  std::int64_t count = 0;
  for (int trial = 0; trial < 80; ++trial) {
    auto bw = init_band_weights<double>(*idx, 3, 4, 1000 + trial);
    auto kf = expand_kernel(*idx, bw.weights);
    for (std::int64_t p = 0; p < kf.numel(); ++p) {
      const std::int64_t cell = p % idx->cells();
      if (idx->band_of[static_cast<std::size_t>(cell)] < 0) continue;
      sum += kf[p];
      sumsq += kf[p] * kf[p];
      ++count;
    }
  }
  CHECK(count > 10000);
  const double mean = sum / static_cast<double>(count);
  const double var = sumsq / static_cast<double>(count) - mean * mean;
  CHECK(var == doctest::Approx(s * s / 3.0).epsilon(0.2));
}
