#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "core/eval.hpp"

using namespace sre;

TEST_CASE("cross entropy worked examples") {
  {
    Tensor<double> logits(Shape{1, 2}, std::vector<double>{0, 0});
    auto r = cross_entropy_loss(logits, {0});
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    Tensor<double> logits(Shape{1, 2}, std::vector<double>{10, -10});
    auto r = cross_entropy_loss(logits, {0});
    CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(-20.0))).epsilon(1e-9));
    CHECK(r.loss < 3e-9);
  }
  {
    Rng rng(3);
    Tensor<double> logits(Shape{4, 5});
    for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-3, 3);
    auto r = cross_entropy_loss(logits, {1, 0, 4, 2});
    for (std::int64_t s = 0; s < 4; ++s) {
      double row = 0;
      for (std::int64_t j = 0; j < 5; ++j) row += r.dlogits.at({s, j});
      CHECK(std::abs(row) < 1e-15);
    }
    CHECK(r.loss >= 0.0);
  }
  {
    Tensor<double> logits(Shape{1, 2});
    CHECK_THROWS_AS(static_cast<void>(cross_entropy_loss(logits, {2})), Error);
    try {
      static_cast<void>(cross_entropy_loss(logits, {2}));
    } catch (const Error& e) {
      CHECK(e.kind() == std::string("label-out-of-range"));
    }
  }
}

TEST_CASE("cross entropy gradient matches finite differences") {
  Rng rng(7);
  Tensor<double> logits(Shape{3, 4});
  for (std::int64_t i = 0; i < logits.numel(); ++i) logits[i] = rng.uniform(-2, 2);
  const std::vector<std::int32_t> labels{2, 0, 3};
  auto r = cross_entropy_loss(logits, labels);
  const double h = 1e-7;
  for (std::int64_t i = 0; i < logits.numel(); ++i) {
    const double keep = logits[i];
    logits[i] = keep + h;
    const double up = cross_entropy_loss(logits, labels).loss;
    logits[i] = keep - h;
    const double dn = cross_entropy_loss(logits, labels).loss;
    logits[i] = keep;
    const double fd = (up - dn) / (2 * h);
    CHECK(std::abs(fd - r.dlogits[i]) < 1e-8);
  }
}

TEST_CASE("bce worked examples and gradient") {
  {
    Tensor<double> z(Shape{1, 1}, std::vector<double>{0});
    auto r = bce_loss(z, {1});
    CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  {
    Tensor<double> z(Shape{1, 1}, std::vector<double>{50});
    auto r = bce_loss(z, {1});
    CHECK(r.loss < 1e-20);
  }
  {
    Tensor<double> z(Shape{1, 1}, std::vector<double>{0});
    CHECK_THROWS_AS(static_cast<void>(bce_loss(z, {2})), Error);
  }
  {
    Rng rng(11);
    Tensor<double> z(Shape{2, 3});
    for (std::int64_t i = 0; i < z.numel(); ++i) z[i] = rng.uniform(-2, 2);
    const std::vector<std::uint8_t> t{1, 0, 1, 0, 0, 1};
    auto r = bce_loss(z, t);
    const double h = 1e-7;
    for (std::int64_t i = 0; i < z.numel(); ++i) {
      const double keep = z[i];
      z[i] = keep + h;
      const double up = bce_loss(z, t).loss;
      z[i] = keep - h;
      const double dn = bce_loss(z, t).loss;
      z[i] = keep;
      CHECK(std::abs((up - dn) / (2 * h) - r.dlogits[i]) < 1e-8);
    }
  }
}

TEST_CASE("sgd momentum hand arithmetic") {
  Tensor<double> p(Shape{1}, std::vector<double>{1.0});
  std::vector<std::pair<std::string, Tensor<double>*>> params{{"p", &p}};
  SgdOptimizer<double> opt(0.9);

  GradientList<double> g;
  g.emplace_back("p", Tensor<double>(Shape{1}, std::vector<double>{1.0}));
  opt.step(params, g, 0.1);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-15));
  opt.step(params, g, 0.1);
  CHECK(p[0] == doctest::Approx(0.71).epsilon(1e-12));  // v = 1.9

  auto before = p[0];
  opt.step(params, g, 0.0);
  CHECK(p[0] == before);
}

TEST_CASE("cosine schedule endpoints") {
  CHECK(cosine_lr(0, 100, 0.02) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(cosine_lr(100, 100, 0.02) == doctest::Approx(0.0).scale(1).epsilon(1e-15));
  CHECK(cosine_lr(50, 100, 0.02) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK_THROWS_AS(static_cast<void>(cosine_lr(101, 100, 0.02)), Error);
}

namespace {

LabeledDataset blob_dataset() {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::blobs;
  spec.dims = 2;
  spec.size = 16;
  spec.num_classes = 2;
  spec.n_train = 120;
  spec.n_val = 40;
  spec.n_test = 40;
  spec.seed = 5;
  return make_synthetic_dataset(spec);
}

NetworkConfig blob_net_config() {
  NetworkConfig cfg;
  cfg.dims = 2;
  cfg.in_channels = 1;
  cfg.stem_channels = 4;
  cfg.stages = {{4, 5, 1, false}, {8, 3, 1, true}};
  cfg.num_classes = 2;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("blob dataset is learned to >= 0.99 train accuracy within 20 epochs") {
  auto ds = blob_dataset();
  auto net = build_network<float>(blob_net_config());
  TrainConfig tc;
  tc.epochs = 20;
  tc.batch_size = 16;
  tc.seed = 33;
  auto report = train_run(net, ds, tc);
  REQUIRE(report.epochs.size() == 20);
  double best = 0;
  for (const auto& e : report.epochs) best = std::max(best, e.train_acc);
  CHECK(best >= 0.99);
  CHECK(report.epochs.back().lr == doctest::Approx(0.0).scale(1).epsilon(1e-15));
}

TEST_CASE("training is deterministic and the lr trace follows the schedule") {
  auto ds = blob_dataset();
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.seed = 33;

  auto net1 = build_network<float>(blob_net_config());
  auto net2 = build_network<float>(blob_net_config());
  auto r1 = train_run(net1, ds, tc);
  auto r2 = train_run(net2, ds, tc);
  REQUIRE(r1.epochs.size() == r2.epochs.size());
  for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
    CHECK(r1.epochs[i].train_loss == r2.epochs[i].train_loss);
    CHECK(r1.epochs[i].train_acc == r2.epochs[i].train_acc);
    CHECK(r1.epochs[i].val_acc == r2.epochs[i].val_acc);
    CHECK(r1.epochs[i].lr == r2.epochs[i].lr);
  }

  const std::int64_t batches = (ds.train.n + tc.batch_size - 1) / tc.batch_size;
  const std::int64_t total = batches * tc.epochs;
  for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
    const std::int64_t step = batches * static_cast<std::int64_t>(i + 1);
    CHECK(r1.epochs[i].lr == cosine_lr(step, total, tc.lr0));
  }

  // Identical parameters after both runs.
  auto p1 = net1.params();
  auto p2 = net2.params();
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].second->vec() == p2[i].second->vec());
}

TEST_CASE("training an SRE network preserves logit invariance at checkpoints") {
  auto ds = blob_dataset();
  auto net = build_network<float>(blob_net_config());
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 16;
  tc.seed = 7;

  auto check_invariance = [&](Network<float>& n) {
    Rng rng(99);
    Tensor<float> x(Shape{1, 1, 16, 16});
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1, 1));
    auto base = network_forward(n, x, Mode::eval);
    for (const auto& g : grid_group(2)) {
      auto logits = network_forward(n, grid_transform(x, g), Mode::eval);
      for (std::int64_t j = 0; j < logits.numel(); ++j) {
        CHECK(std::abs(logits[j] - base[j]) < 1e-4f);
      }
    }
  };
  static_cast<void>(train_run(net, ds, tc));  // after epoch 1
  check_invariance(net);
  TrainConfig more = tc;
  more.epochs = 3;
  static_cast<void>(train_run(net, ds, more));  // and at the end
  check_invariance(net);
}

TEST_CASE("train_run error paths") {
  auto ds = blob_dataset();
  auto net = build_network<float>(blob_net_config());
  TrainConfig tc;
  tc.epochs = 0;
  CHECK_THROWS_AS(static_cast<void>(train_run(net, ds, tc)), Error);

  NetworkConfig bce_cfg = blob_net_config();
  bce_cfg.loss_kind = LossKind::bce;
  auto bce_net = build_network<float>(bce_cfg);
  TrainConfig ok;
  ok.epochs = 1;
  CHECK_THROWS_AS(static_cast<void>(train_run(bce_net, ds, ok)), Error);
}

TEST_CASE("multi-label bce training runs and reports multi-label accuracy") {
  // Tiny multi-label set: targets derived from the class label (bit 0: class
  // odd, bit 1: class > 0).
  auto ds = blob_dataset();
  ds.multi_label = true;
  ds.num_classes = 2;
  for (DataSplit* sp : {&ds.train, &ds.val, &ds.test}) {
    sp->targets.resize(static_cast<std::size_t>(sp->n * 2));
    for (std::int64_t i = 0; i < sp->n; ++i) {
      const std::int32_t cls = sp->labels[static_cast<std::size_t>(i)];
      sp->targets[static_cast<std::size_t>(2 * i)] = static_cast<std::uint8_t>(cls % 2);
      sp->targets[static_cast<std::size_t>(2 * i + 1)] = static_cast<std::uint8_t>(cls > 0);
    }
  }
  NetworkConfig cfg = blob_net_config();
  cfg.loss_kind = LossKind::bce;
  auto net = build_network<float>(cfg);
  TrainConfig tc;
  tc.epochs = 8;
  tc.batch_size = 16;
  auto report = train_run(net, ds, tc);
  CHECK(report.epochs.back().train_acc > 0.9);
}
