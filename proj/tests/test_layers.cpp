#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/layers.hpp"

using namespace sre;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Central finite differences of L(theta) = sum(output .* R) against the
// analytic gradient. Returns the max relative error.
double max_rel_err(const Tensor<double>& analytic, const Tensor<double>& numeric) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
    worst = std::max(worst, rel);
  }
  return worst;
}

template <typename ForwardFn>
Tensor<double> fd_gradient(Tensor<double>& param, const Tensor<double>& sensitivity,
                           ForwardFn&& forward, double h = 1e-6) {
  Tensor<double> grad(param.shape());
  for (std::int64_t i = 0; i < param.numel(); ++i) {
    const double keep = param[i];
    param[i] = keep + h;
    Tensor<double> up = forward();
    param[i] = keep - h;
    Tensor<double> dn = forward();
    param[i] = keep;
    double acc = 0.0;
    for (std::int64_t j = 0; j < up.numel(); ++j) {
      acc += (up[j] - dn[j]) * sensitivity[j];
    }
    grad[i] = acc / (2.0 * h);
  }
  return grad;
}

}  // namespace

TEST_CASE("sre conv: impulse response equals the expanded kernel") {
  auto layer = make_conv_layer<float>(ConvKind::sre, 2, 1, 1, 3, 1);
  layer.weights = Tensor<float>(Shape{1, 1, 3}, std::vector<float>{1, 2, 3});
  layer.bias = Tensor<float>(Shape{1});

  Tensor<float> x(Shape{1, 1, 5, 5});
  x.at({0, 0, 2, 2}) = 1.0f;
  auto y = conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr));
  CHECK(y.shape() == Shape{1, 1, 5, 5});

  const std::vector<float> kernel{0, 3, 0, 3, 1, 3, 0, 3, 0};
  for (std::int64_t yy = 0; yy < 5; ++yy) {
    for (std::int64_t xx = 0; xx < 5; ++xx) {
      const bool inside = yy >= 1 && yy <= 3 && xx >= 1 && xx <= 3;
      const float want = inside ? kernel[static_cast<std::size_t>((yy - 1) * 3 + (xx - 1))] : 0.0f;
      CHECK(y.at({0, 0, yy, xx}) == want);
    }
  }
}

TEST_CASE("sre conv: constant input interior equals kernel sum plus bias") {
  auto layer = make_conv_layer<float>(ConvKind::sre, 2, 1, 1, 3, 1);
  layer.weights = Tensor<float>(Shape{1, 1, 3}, std::vector<float>{1, 2, 3});
  layer.bias = Tensor<float>(Shape{1});
  Tensor<float> x = Tensor<float>::full(Shape{1, 1, 5, 5}, 1.0f);
  auto y = conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr));
  CHECK(y.at({0, 0, 2, 2}) == 13.0f);  // 1 + 4*3
}

TEST_CASE("conv channel mismatch is a shape error") {
  auto layer = make_conv_layer<float>(ConvKind::sre, 2, 2, 3, 3, 1);
  Tensor<float> x(Shape{1, 1, 5, 5});
  CHECK_THROWS_AS(static_cast<void>(conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr))),
                  Error);
}

template <typename T>
static void check_conv_equivariance_bitexact(int k, std::int64_t extent) {
  Rng rng(41);
  auto layer = make_conv_layer<T>(ConvKind::sre, 2, 2, 3, k, 7);
  Tensor<T> x = random_tensor<T>(Shape{1, 2, extent, extent}, rng);
  auto y = conv_forward(layer, x, static_cast<ConvCache<T>*>(nullptr));
  for (const auto& g : grid_group(2)) {
    auto y_of_gx = conv_forward(layer, grid_transform(x, g), static_cast<ConvCache<T>*>(nullptr));
    auto g_of_yx = grid_transform(y, g);
    CHECK(y_of_gx.vec() == g_of_yx.vec());
  }
}

TEST_CASE("sre conv commutes bit-exactly with every D4 element (f32 and f64)") {
  check_conv_equivariance_bitexact<float>(3, 7);
  check_conv_equivariance_bitexact<float>(5, 8);
  check_conv_equivariance_bitexact<float>(9, 12);
  check_conv_equivariance_bitexact<double>(3, 7);
  check_conv_equivariance_bitexact<double>(5, 8);
  check_conv_equivariance_bitexact<double>(9, 12);
}

TEST_CASE("3D sre conv commutes bit-exactly with all 48 octahedral elements") {
  Rng rng(43);
  auto layer = make_conv_layer<float>(ConvKind::sre, 3, 1, 2, 3, 7);
  Tensor<float> x = random_tensor<float>(Shape{1, 1, 4, 4, 4}, rng);
  auto y = conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr));
  for (const auto& g : grid_group(3)) {
    auto y_of_gx = conv_forward(layer, grid_transform(x, g), static_cast<ConvCache<float>*>(nullptr));
    CHECK(y_of_gx.vec() == grid_transform(y, g).vec());
  }
}

TEST_CASE("standard conv does not commute with rotations (negative control)") {
  Rng rng(47);
  auto layer = make_conv_layer<float>(ConvKind::standard, 2, 1, 2, 3, 7);
  Tensor<float> x = random_tensor<float>(Shape{1, 1, 6, 6}, rng);
  auto y = conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr));
  auto y_rot = conv_forward(layer, grid_transform(x, rot90_2d()),
                            static_cast<ConvCache<float>*>(nullptr));
  auto rot_y = grid_transform(y, rot90_2d());
  double diff = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(y_rot[i]) - rot_y[i]));
  }
  CHECK(diff > 1e-3);
}

TEST_CASE("conv gradients match central finite differences (f64)") {
  Rng rng(53);
  for (ConvKind kind : {ConvKind::sre, ConvKind::standard}) {
    auto layer = make_conv_layer<double>(kind, 2, 2, 2, 3, 11);
    Tensor<double> x = random_tensor<double>(Shape{1, 2, 5, 5}, rng);
    Tensor<double> sens = random_tensor<double>(Shape{1, 2, 5, 5}, rng);

    ConvCache<double> cache;
    static_cast<void>(conv_forward(layer, x, &cache));
    auto grads = conv_backward(layer, sens, cache);

    auto fwd_w = [&]() { return conv_forward(layer, x, static_cast<ConvCache<double>*>(nullptr)); };
    CHECK(max_rel_err(grads.dweights, fd_gradient(layer.weights, sens, fwd_w)) < 1e-7);
    CHECK(max_rel_err(grads.dbias, fd_gradient(layer.bias, sens, fwd_w)) < 1e-7);
    CHECK(max_rel_err(grads.dx, fd_gradient(x, sens, fwd_w)) < 1e-7);
  }
}

TEST_CASE("3D conv gradients match finite differences") {
  Rng rng(59);
  auto layer = make_conv_layer<double>(ConvKind::sre, 3, 1, 2, 3, 13);
  Tensor<double> x = random_tensor<double>(Shape{1, 1, 4, 4, 4}, rng);
  Tensor<double> sens = random_tensor<double>(Shape{1, 2, 4, 4, 4}, rng);
  ConvCache<double> cache;
  static_cast<void>(conv_forward(layer, x, &cache));
  auto grads = conv_backward(layer, sens, cache);
  auto fwd = [&]() { return conv_forward(layer, x, static_cast<ConvCache<double>*>(nullptr)); };
  CHECK(max_rel_err(grads.dweights, fd_gradient(layer.weights, sens, fwd)) < 1e-7);
  CHECK(max_rel_err(grads.dx, fd_gradient(x, sens, fwd)) < 1e-7);
}

TEST_CASE("conv backward hand examples") {
  auto layer = make_conv_layer<double>(ConvKind::sre, 2, 1, 1, 3, 1);
  layer.weights = Tensor<double>(Shape{1, 1, 3}, std::vector<double>{1, 2, 3});
  layer.bias = Tensor<double>(Shape{1});
  Tensor<double> x = Tensor<double>::full(Shape{1, 1, 5, 5}, 1.0);
  ConvCache<double> cache;
  static_cast<void>(conv_forward(layer, x, &cache));
  Tensor<double> dy = Tensor<double>::full(Shape{1, 1, 5, 5}, 1.0);
  auto grads = conv_backward(layer, dy, cache);
  CHECK(grads.dbias[0] == 25.0);
  // Band 1 is empty at k=3: its gradient is exactly zero.
  CHECK(grads.dweights.at({0, 0, 1}) == 0.0);
  // Band 0 is the center cell, hit once per output position.
  CHECK(grads.dweights.at({0, 0, 0}) == 25.0);
}

TEST_CASE("pointwise conv forward and gradients") {
  auto layer = make_pointwise_layer<double>(2, 2, 3);
  layer.weights = Tensor<double>(Shape{2, 2}, std::vector<double>{1, 0, 0, 1});
  layer.bias = Tensor<double>(Shape{2});
  Rng rng(61);
  Tensor<double> x = random_tensor<double>(Shape{1, 2, 4, 4}, rng);
  auto y = pointwise_forward(layer, x, static_cast<PointwiseCache<double>*>(nullptr));
  CHECK(y.vec() == x.vec());  // identity weights

  auto sum_layer = make_pointwise_layer<double>(2, 1, 3);
  sum_layer.weights = Tensor<double>(Shape{1, 2}, std::vector<double>{1, 1});
  sum_layer.bias = Tensor<double>(Shape{1});
  auto ys = pointwise_forward(sum_layer, x, static_cast<PointwiseCache<double>*>(nullptr));
  for (std::int64_t p = 0; p < 16; ++p) {
    CHECK(ys[p] == doctest::Approx(x[p] + x[16 + p]).epsilon(1e-15));
  }

  auto layer2 = make_pointwise_layer<double>(2, 3, 5);
  Tensor<double> sens = random_tensor<double>(Shape{1, 3, 4, 4}, rng);
  PointwiseCache<double> cache;
  static_cast<void>(pointwise_forward(layer2, x, &cache));
  auto grads = pointwise_backward(layer2, sens, cache);
  auto fwd = [&]() {
    return pointwise_forward(layer2, x, static_cast<PointwiseCache<double>*>(nullptr));
  };
  CHECK(max_rel_err(grads.dweights, fd_gradient(layer2.weights, sens, fwd)) < 1e-7);
  CHECK(max_rel_err(grads.dbias, fd_gradient(layer2.bias, sens, fwd)) < 1e-7);
  CHECK(max_rel_err(grads.dx, fd_gradient(x, sens, fwd)) < 1e-7);
}

TEST_CASE("avg_pool examples, backward, and rotation commutation") {
  Tensor<float> x(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4});
  auto y = avg_pool(x, 2);
  CHECK(y.numel() == 1);
  CHECK(y[0] == 2.5f);

  auto dx = avg_pool_backward(Tensor<float>(Shape{1, 1, 1, 1}, std::vector<float>{1}), 2,
                              Shape{1, 1, 2, 2});
  for (std::int64_t i = 0; i < 4; ++i) CHECK(dx[i] == 0.25f);

  Rng rng(67);
  Tensor<float> r = random_tensor<float>(Shape{1, 1, 4, 4}, rng);
  for (const auto& g : grid_group(2)) {
    CHECK(avg_pool(grid_transform(r, g), 2).vec() == grid_transform(avg_pool(r, 2), g).vec());
  }

  Tensor<float> odd(Shape{1, 1, 3, 3});
  CHECK_THROWS_AS(static_cast<void>(avg_pool(odd, 2)), Error);
}

TEST_CASE("3D avg_pool commutes with the octahedral group") {
  Rng rng(71);
  Tensor<float> r = random_tensor<float>(Shape{1, 1, 4, 4, 4}, rng);
  for (const auto& g : grid_group(3)) {
    CHECK(avg_pool(grid_transform(r, g), 3).vec() == grid_transform(avg_pool(r, 3), g).vec());
  }
}

TEST_CASE("global_avg_pool: invariance, constants, backward") {
  Rng rng(73);
  Tensor<float> x = random_tensor<float>(Shape{2, 3, 6, 6}, rng);
  auto y = global_avg_pool(x);
  CHECK(y.shape() == Shape{2, 3});
  for (const auto& g : grid_group(2)) {
    CHECK(global_avg_pool(grid_transform(x, g)).vec() == y.vec());
  }

  auto c = Tensor<float>::full(Shape{1, 1, 4, 4}, 3.25f);
  CHECK(global_avg_pool(c)[0] == 3.25f);

  auto dx = global_avg_pool_backward(Tensor<float>(Shape{1, 1}, std::vector<float>{1}),
                                     Shape{1, 1, 2, 2});
  for (std::int64_t i = 0; i < 4; ++i) CHECK(dx[i] == 0.25f);
}

TEST_CASE("relu forward/backward and pointwise commutation") {
  Tensor<float> x(Shape{3}, std::vector<float>{-1, 0, 2});
  auto y = relu(x);
  CHECK(y.vec() == std::vector<float>{0, 0, 2});
  auto dx = relu_backward(Tensor<float>(Shape{3}, std::vector<float>{1, 1, 1}), y);
  CHECK(dx.vec() == std::vector<float>{0, 0, 1});

  Rng rng(79);
  Tensor<float> r = random_tensor<float>(Shape{1, 2, 4, 4}, rng);
  for (const auto& g : grid_group(2)) {
    CHECK(relu(grid_transform(r, g)).vec() == grid_transform(relu(r), g).vec());
  }
}

TEST_CASE("batch norm train examples and eval commutation") {
  auto bn = make_batch_norm<float>(1);
  Tensor<float> x(Shape{2, 1, 1, 1}, std::vector<float>{1, 3});
  auto y = batch_norm_forward(bn, x, Mode::train, static_cast<BatchNormCache<float>*>(nullptr));
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-4));

  auto bn0 = make_batch_norm<float>(1);
  bn0.gamma = Tensor<float>(Shape{1});  // gamma = 0
  bn0.beta = Tensor<float>::full(Shape{1}, 5.0f);
  auto y0 = batch_norm_forward(bn0, x, Mode::train, static_cast<BatchNormCache<float>*>(nullptr));
  CHECK(y0[0] == 5.0f);
  CHECK(y0[1] == 5.0f);

  auto bn1 = make_batch_norm<float>(1);
  Tensor<float> single(Shape{1, 1, 1, 1});
  CHECK_THROWS_AS(static_cast<void>(batch_norm_forward(
                      bn1, single, Mode::train, static_cast<BatchNormCache<float>*>(nullptr))),
                  Error);

  // Eval mode commutes with grid transforms bit-exactly.
  Rng rng(83);
  auto bn2 = make_batch_norm<float>(2);
  bn2.running_mean = random_tensor<float>(Shape{2}, rng);
  bn2.running_var = random_tensor<float>(Shape{2}, rng, 0.5, 2.0);
  Tensor<float> r = random_tensor<float>(Shape{1, 2, 4, 4}, rng);
  auto ye = batch_norm_forward(bn2, r, Mode::eval, static_cast<BatchNormCache<float>*>(nullptr));
  for (const auto& g : grid_group(2)) {
    auto a = batch_norm_forward(bn2, grid_transform(r, g), Mode::eval,
                                static_cast<BatchNormCache<float>*>(nullptr));
    CHECK(a.vec() == grid_transform(ye, g).vec());
  }
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(89);
  auto bn = make_batch_norm<double>(2);
  bn.gamma = random_tensor<double>(Shape{2}, rng, 0.5, 1.5);
  bn.beta = random_tensor<double>(Shape{2}, rng);
  Tensor<double> x = random_tensor<double>(Shape{2, 2, 3, 3}, rng);
  Tensor<double> sens = random_tensor<double>(Shape{2, 2, 3, 3}, rng);

  BatchNormCache<double> cache;
  auto run_bn = [&]() {
    auto copy = bn;  // keep running stats unchanged across fd evaluations
    return batch_norm_forward(copy, x, Mode::train, static_cast<BatchNormCache<double>*>(nullptr));
  };
  {
    auto copy = bn;
    static_cast<void>(batch_norm_forward(copy, x, Mode::train, &cache));
  }
  auto grads = batch_norm_backward(bn, sens, cache);
  CHECK(max_rel_err(grads.dgamma, fd_gradient(bn.gamma, sens, run_bn)) < 1e-7);
  CHECK(max_rel_err(grads.dbeta, fd_gradient(bn.beta, sens, run_bn)) < 1e-7);
  CHECK(max_rel_err(grads.dx, fd_gradient(x, sens, run_bn)) < 1e-7);
}

TEST_CASE("linear layer examples and gradients") {
  auto layer = make_linear<double>(3, 3, 5);
  layer.weights = identity_matrix<double>(3);
  layer.bias = Tensor<double>(Shape{3});
  Rng rng(97);
  Tensor<double> x = random_tensor<double>(Shape{2, 3}, rng);
  auto y = linear_forward(layer, x, static_cast<LinearCache<double>*>(nullptr));
  CHECK(y.vec() == x.vec());

  Tensor<double> zeros(Shape{2, 3});
  auto layer2 = make_linear<double>(3, 4, 7);
  auto yb = linear_forward(layer2, zeros, static_cast<LinearCache<double>*>(nullptr));
  for (std::int64_t s = 0; s < 2; ++s) {
    for (std::int64_t j = 0; j < 4; ++j) CHECK(yb.at({s, j}) == layer2.bias[j]);
  }

  Tensor<double> sens = random_tensor<double>(Shape{2, 4}, rng);
  LinearCache<double> cache;
  static_cast<void>(linear_forward(layer2, x, &cache));
  auto grads = linear_backward(layer2, sens, cache);
  auto fwd = [&]() { return linear_forward(layer2, x, static_cast<LinearCache<double>*>(nullptr)); };
  CHECK(max_rel_err(grads.dweights, fd_gradient(layer2.weights, sens, fwd)) < 1e-7);
  CHECK(max_rel_err(grads.dbias, fd_gradient(layer2.bias, sens, fwd)) < 1e-7);
  CHECK(max_rel_err(grads.dx, fd_gradient(x, sens, fwd)) < 1e-7);
}

TEST_CASE("equivariance chain: conv/bn(eval)/relu/pool composition is bit-exact") {
  Rng rng(101);
  auto conv = make_conv_layer<double>(ConvKind::sre, 2, 1, 4, 5, 3);
  auto bn = make_batch_norm<double>(4);
  bn.running_mean = random_tensor<double>(Shape{4}, rng);
  bn.running_var = random_tensor<double>(Shape{4}, rng, 0.5, 2.0);
  auto pw = make_pointwise_layer<double>(4, 3, 9);

  auto chain = [&](const Tensor<double>& in) {
    auto t = conv_forward(conv, in, static_cast<ConvCache<double>*>(nullptr));
    t = batch_norm_forward(bn, t, Mode::eval, static_cast<BatchNormCache<double>*>(nullptr));
    t = relu(t);
    t = avg_pool(t, 2);
    t = pointwise_forward(pw, t, static_cast<PointwiseCache<double>*>(nullptr));
    return t;
  };

  Tensor<double> x = random_tensor<double>(Shape{1, 1, 8, 8}, rng);
  auto y = chain(x);
  for (const auto& g : grid_group(2)) {
    CHECK(chain(grid_transform(x, g)).vec() == grid_transform(y, g).vec());
  }
}

TEST_CASE("precomputed expansion path is bit-identical across calls") {
  Rng rng(103);
  auto layer = make_conv_layer<float>(ConvKind::sre, 2, 2, 2, 5, 3);
  Tensor<float> x = random_tensor<float>(Shape{2, 2, 8, 8}, rng);
  auto y1 = conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr));
  auto y2 = conv_forward(layer, x, static_cast<ConvCache<float>*>(nullptr));
  CHECK(y1.vec() == y2.vec());
}

TEST_CASE("inference multiply-add parity with the standard twin") {
  // Same geometry, same count: the pre-expanded kernel slides a dense k^d
  // window exactly like the standard convolution.
  const std::int64_t sre_macs = conv_inference_macs(1, 16, 16, {28, 28}, 9);
  const std::int64_t std_macs = conv_inference_macs(1, 16, 16, {28, 28}, 9);
  CHECK(sre_macs == std_macs);
  CHECK(sre_macs == 1LL * 16 * 16 * 28 * 28 * 81);
}
