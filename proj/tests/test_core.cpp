#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/grid.hpp"
#include "core/tensor.hpp"

using namespace sre;

namespace {

Tensor<float> t2x2(float a, float b, float c, float d) {
  return Tensor<float>(Shape{2, 2}, std::vector<float>{a, b, c, d});
}

}  // namespace

TEST_CASE("matmul identity and projector") {
  auto x = t2x2(1, 2, 3, 4);
  auto y = matmul(identity_matrix<float>(2), x);
  CHECK(y.vec() == std::vector<float>{1, 2, 3, 4});

  auto proj = t2x2(1, 0, 0, 0);
  auto z = matmul(proj, t2x2(5, 6, 7, 8));
  CHECK(z.vec() == std::vector<float>{5, 6, 0, 0});
}

TEST_CASE("matmul dot product") {
  Tensor<float> row(Shape{1, 3}, std::vector<float>{1, 2, 3});
  Tensor<float> col(Shape{3, 1}, std::vector<float>{4, 5, 6});
  auto r = matmul(row, col);
  CHECK(r.numel() == 1);
  CHECK(r[0] == 32.0f);
}

TEST_CASE("matmul shape errors") {
  Tensor<float> a(Shape{2, 3});
  Tensor<float> b(Shape{2, 2});
  CHECK_THROWS_AS(static_cast<void>(matmul(a, b)), Error);
  try {
    static_cast<void>(matmul(a, b));
  } catch (const Error& e) {
    CHECK(e.kind() == std::string("shape-mismatch"));
  }
}

TEST_CASE("matmul distributes over addition within 1e-6 relative") {
  Rng rng(7);
  for (int iter = 0; iter < 20; ++iter) {
    const std::int64_t m = 1 + static_cast<std::int64_t>(rng.below(5));
    const std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(5));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(5));
    Tensor<float> a(Shape{m, k}), b(Shape{k, n}), c(Shape{k, n});
    for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.uniform(-2, 2));
    for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.uniform(-2, 2));
    for (std::int64_t i = 0; i < c.numel(); ++i) c[i] = static_cast<float>(rng.uniform(-2, 2));
    Tensor<float> bc(Shape{k, n});
    for (std::int64_t i = 0; i < bc.numel(); ++i) bc[i] = b[i] + c[i];
    auto lhs = matmul(a, bc);
    auto ab = matmul(a, b);
    auto ac = matmul(a, c);
    for (std::int64_t i = 0; i < lhs.numel(); ++i) {
      const double rhs = static_cast<double>(ab[i]) + static_cast<double>(ac[i]);
      CHECK(std::abs(lhs[i] - rhs) <= 1e-6 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST_CASE("matmul rejects non-finite results") {
  Tensor<float> a(Shape{1, 1}, std::vector<float>{3e38f});
  Tensor<float> b(Shape{1, 1}, std::vector<float>{3e38f});
  CHECK_THROWS_AS(static_cast<void>(matmul(a, b)), Error);
}

TEST_CASE("pad basics") {
  Tensor<float> one(Shape{1, 1}, std::vector<float>{1});
  auto p = pad(one, 2, 1, 0.0f);
  CHECK(p.shape() == Shape{3, 3});
  CHECK(p.vec() == std::vector<float>{0, 0, 0, 0, 1, 0, 0, 0, 0});

  auto same = pad(one, 2, 0, 0.0f);
  CHECK(same.vec() == one.vec());

  Tensor<float> row(Shape{1, 2}, std::vector<float>{1, 2});
  auto q = pad(row, 2, 1, 9.0f);
  CHECK(q.shape() == Shape{3, 4});
  CHECK(q.vec() == std::vector<float>{9, 9, 9, 9, 9, 1, 2, 9, 9, 9, 9, 9});
}

TEST_CASE("pad batched interior is bit-identical") {
  Rng rng(3);
  Tensor<float> x(Shape{2, 3, 4, 4});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
  auto p = pad(x, 2, 2, 0.0f);
  CHECK(p.shape() == Shape{2, 3, 8, 8});
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t xx = 0; xx < 4; ++xx) {
          CHECK(p.at({n, c, y + 2, xx + 2}) == x.at({n, c, y, xx}));
        }
}

TEST_CASE("grid rot90/hflip/vflip match their definitions") {
  auto x = t2x2(1, 2, 3, 4);
  CHECK(grid_transform(x, rot90_2d()).vec() == std::vector<float>{3, 1, 4, 2});
  CHECK(grid_transform(x, hflip_2d()).vec() == std::vector<float>{2, 1, 4, 3});
  CHECK(grid_transform(x, vflip_2d()).vec() == std::vector<float>{3, 4, 1, 2});
}

TEST_CASE("rot90 four times is the identity") {
  Rng rng(11);
  Tensor<float> x(Shape{5, 5});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
  Tensor<float> y = x;
  for (int i = 0; i < 4; ++i) y = grid_transform(y, rot90_2d());
  CHECK(y.vec() == x.vec());
}

TEST_CASE("grid group sizes and inverse round trip") {
  CHECK(grid_group(2).size() == 8);
  CHECK(grid_group(3).size() == 48);

  Rng rng(5);
  Tensor<float> x2(Shape{4, 4});
  for (std::int64_t i = 0; i < x2.numel(); ++i) x2[i] = static_cast<float>(rng.uniform(-1, 1));
  for (const auto& g : grid_group(2)) {
    auto y = grid_transform(grid_transform(x2, g), grid_inverse(g));
    CHECK(y.vec() == x2.vec());
  }
  Tensor<float> x3(Shape{3, 3, 3});
  for (std::int64_t i = 0; i < x3.numel(); ++i) x3[i] = static_cast<float>(rng.uniform(-1, 1));
  for (const auto& g : grid_group(3)) {
    auto y = grid_transform(grid_transform(x3, g), grid_inverse(g));
    CHECK(y.vec() == x3.vec());
  }
}

TEST_CASE("grid transforms preserve the value multiset") {
  Rng rng(9);
  Tensor<float> x(Shape{6, 6});
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
  std::vector<float> ref = x.vec();
  std::sort(ref.begin(), ref.end());
  for (const auto& g : grid_group(2)) {
    auto y = grid_transform(x, g);
    std::vector<float> got = y.vec();
    std::sort(got.begin(), got.end());
    CHECK(got == ref);
  }
}

TEST_CASE("rotation of non-square input is a shape error") {
  Tensor<float> x(Shape{2, 3});
  CHECK_THROWS_AS(static_cast<void>(grid_transform(x, rot90_2d())), Error);
  CHECK_NOTHROW(static_cast<void>(grid_transform(x, hflip_2d())));
}

TEST_CASE("reduce_mean basics") {
  auto x = t2x2(1, 2, 3, 4);
  auto m = reduce_mean(x, {0, 1});
  CHECK(m.numel() == 1);
  CHECK(m[0] == 2.5f);

  Tensor<float> c = Tensor<float>::full(Shape{3, 4}, 7.0f);
  CHECK(reduce_mean(c, {0, 1})[0] == 7.0f);

  Tensor<float> row(Shape{1, 2}, std::vector<float>{1, 3});
  auto m1 = reduce_mean(row, {1});
  CHECK(m1.shape() == Shape{1});
  CHECK(m1[0] == 2.0f);
}

TEST_CASE("determinism: identical inputs give bit-identical op outputs") {
  Rng rng(21);
  Tensor<float> a(Shape{7, 5}), b(Shape{5, 6});
  for (std::int64_t i = 0; i < a.numel(); ++i) a[i] = static_cast<float>(rng.uniform(-1, 1));
  for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = static_cast<float>(rng.uniform(-1, 1));
  auto c1 = matmul(a, b);
  auto c2 = matmul(a, b);
  CHECK(c1.vec() == c2.vec());
}
