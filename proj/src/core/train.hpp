#pragma once

#include <chrono>
#include <cstring>

#include "core/dataset.hpp"
#include "core/network.hpp"

namespace sre {

// ---------------------------------------------------------------------------
// Losses. Both return the scalar loss and the logits gradient.
// ---------------------------------------------------------------------------

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> dlogits;
};

// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <typename T>
LossResult<T> cross_entropy_loss(const Tensor<T>& logits, const std::vector<std::int32_t>& labels) {
  if (logits.ndim() != 2) fail(err::shape, "cross_entropy: logits must be [N, K]");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n) {
    fail(err::shape, "cross_entropy: label count mismatch");
  }
  LossResult<T> res;
  res.dlogits = Tensor<T>(logits.shape());
  double total = 0.0;
  const T invn = T{1} / static_cast<T>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int32_t label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      fail(err::label_range, "label " + std::to_string(label) + " outside [0, " +
                                 std::to_string(k) + ")");
    }
    const T* row = logits.data() + i * k;
    T mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T denom{0};
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const T log_denom = std::log(denom);
    total += static_cast<double>(log_denom - (row[label] - mx));
    T* drow = res.dlogits.data() + i * k;
    for (std::int64_t j = 0; j < k; ++j) {
      const T p = std::exp(row[j] - mx) / denom;
      drow[j] = (p - (j == label ? T{1} : T{0})) * invn;
    }
  }
  res.loss = total / static_cast<double>(n);
  if (!std::isfinite(res.loss)) fail(err::not_finite, "cross_entropy loss diverged");
  return res;
}

// Mean over N*K of the stabilized binary cross-entropy
//   max(z,0) - z*t + log(1 + exp(-|z|)).
template <typename T>
LossResult<T> bce_loss(const Tensor<T>& logits, const std::vector<std::uint8_t>& targets) {
  if (logits.ndim() != 2) fail(err::shape, "bce: logits must be [N, K]");
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n * k) {
    fail(err::shape, "bce: target count mismatch");
  }
  LossResult<T> res;
  res.dlogits = Tensor<T>(logits.shape());
  double total = 0.0;
  const T inv = T{1} / static_cast<T>(n * k);
  for (std::int64_t i = 0; i < n * k; ++i) {
    const std::uint8_t t = targets[static_cast<std::size_t>(i)];
    if (t != 0 && t != 1) fail(err::non_binary_target, "bce targets must be 0 or 1");
    const T z = logits[i];
    const T tv = static_cast<T>(t);
    total += static_cast<double>(std::max(z, T{0}) - z * tv +
                                 std::log(T{1} + std::exp(-std::abs(z))));
    const T sig = T{1} / (T{1} + std::exp(-z));
    res.dlogits[i] = (sig - tv) * inv;
  }
  res.loss = total / static_cast<double>(n * k);
  if (!std::isfinite(res.loss)) fail(err::not_finite, "bce loss diverged");
  return res;
}

// ---------------------------------------------------------------------------
// SGD with classic momentum: v <- mu v + g; p <- p - lr v.
// ---------------------------------------------------------------------------

template <typename T>
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum = 0.9) : momentum_(momentum) {}

  void step(std::vector<std::pair<std::string, Tensor<T>*>>& params,
            const GradientList<T>& grads, double lr) {
    if (params.size() != grads.size()) fail(err::shape, "sgd: parameter/gradient count mismatch");
    if (velocity_.empty()) {
      for (auto& [name, p] : params) velocity_.emplace_back(Tensor<T>(p->shape()));
    }
    const T mu = static_cast<T>(momentum_);
    const T eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& [name, p] = params[i];
      const auto& [gname, g] = grads[i];
      if (gname != name) fail(err::shape, "sgd: gradient order mismatch at " + name);
      if (!g.same_shape(*p)) fail(err::shape, "sgd: gradient shape mismatch at " + name);
      Tensor<T>& v = velocity_[i];
      for (std::int64_t j = 0; j < p->numel(); ++j) {
        v[j] = mu * v[j] + g[j];
        (*p)[j] -= eta * v[j];
      }
      ensure_finite(*p, "sgd parameter update");
    }
  }

 private:
  double momentum_;
  std::vector<Tensor<T>> velocity_;
};

// lr(t) = lr0/2 * (1 + cos(pi t / T)), t in [0, T].
inline double cosine_lr(std::int64_t t, std::int64_t total, double lr0) {
  if (total < 1) fail(err::argument, "cosine_lr: total steps must be >= 1");
  if (t < 0 || t > total) {
    fail(err::schedule, "cosine_lr: step " + std::to_string(t) + " outside [0, " +
                            std::to_string(total) + "]");
  }
  return lr0 / 2.0 * (1.0 + std::cos(kPi * static_cast<double>(t) / static_cast<double>(total)));
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr0 = 0.02;
  double momentum = 0.9;
  int epochs = 100;
  int batch_size = 0;  // 0: default 128 (2D) / 4 (3D)
  std::uint64_t seed = 0;

  void validate() const {
    if (lr0 <= 0) fail(err::config, "lr0 must be > 0");
    if (epochs < 1) fail(err::config, "epochs must be >= 1");
    if (batch_size < 0) fail(err::config, "batch_size must be >= 1");
  }
  int resolved_batch(int dims) const { return batch_size > 0 ? batch_size : (dims == 2 ? 128 : 4); }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double wall_seconds = 0.0;
  std::string checkpoint_path;  // set by callers that persist the run
};

std::string report_jsonl(const TrainReport& report);

// Fraction of correct predictions. Multi-class: argmax with ties broken by
// the lowest index. Multi-label: elementwise sigmoid(z) > 0.5 against the
// binary target.
template <typename T>
double accuracy_multiclass(const Tensor<T>& logits, const std::vector<std::int32_t>& labels,
                           std::int64_t offset = 0) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * k;
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;
    }
    if (best == labels[static_cast<std::size_t>(offset + i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

template <typename T>
double accuracy_multilabel(const Tensor<T>& logits, const std::vector<std::uint8_t>& targets,
                           std::int64_t offset = 0) {
  const std::int64_t n = logits.dim(0), k = logits.dim(1);
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < n * k; ++i) {
    const bool pred = logits[i] > T{0};  // sigmoid(z) > 0.5  <=>  z > 0
    const bool truth = targets[static_cast<std::size_t>(offset * k + i)] != 0;
    if (pred == truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n * k);
}

// Eval-mode accuracy over one split, batched.
template <typename T>
double evaluate_split(Network<T>& net, const LabeledDataset& ds, const DataSplit& split,
                      int batch_size = 256) {
  if (split.n == 0) return 0.0;
  double correct_weight = 0.0;
  for (std::int64_t start = 0; start < split.n; start += batch_size) {
    const std::int64_t count = std::min<std::int64_t>(batch_size, split.n - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tensor<T> x = make_batch<T>(ds, split, idx);
    Tensor<T> logits = network_forward(net, x, Mode::eval);
    double acc;
    if (ds.multi_label) {
      acc = accuracy_multilabel(logits, split.targets, start);
    } else {
      acc = accuracy_multiclass(logits, split.labels, start);
    }
    correct_weight += acc * static_cast<double>(count);
  }
  return correct_weight / static_cast<double>(split.n);
}

// Deterministic training: fixed per-epoch shuffles derived from the seed,
// cosine schedule stepped once per optimizer update with
// T = epochs * batches_per_epoch, no geometric augmentation of any kind.
template <typename T>
TrainReport train_run(Network<T>& net, const LabeledDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.train.n == 0) fail(err::argument, "train_run: empty training split");
  if (ds.multi_label != (net.cfg.loss_kind == LossKind::bce)) {
    fail(err::config_mismatch, "dataset label type does not match network loss_kind");
  }
  if (!ds.multi_label && ds.num_classes > net.cfg.num_classes) {
    fail(err::config_mismatch, "dataset has more classes than the network head");
  }

  const auto t_start = std::chrono::steady_clock::now();
  const int batch = cfg.resolved_batch(net.cfg.dims);
  const std::int64_t batches_per_epoch = (ds.train.n + batch - 1) / batch;
  const std::int64_t total_steps = static_cast<std::int64_t>(cfg.epochs) * batches_per_epoch;

  auto params = net.params();
  SgdOptimizer<T> opt(cfg.momentum);
  TrainReport report;
  std::int64_t step = 0;

  std::vector<std::int64_t> order(static_cast<std::size_t>(ds.train.n));
  for (std::int64_t i = 0; i < ds.train.n; ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Stream ids >= 1000 are reserved for shuffles; layer init uses small ids.
    Rng shuffle_rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    double acc_sum = 0.0;
    std::int64_t seen = 0;
    double last_lr = 0.0;

    for (std::int64_t bstart = 0; bstart < ds.train.n; bstart += batch) {
      const std::int64_t count = std::min<std::int64_t>(batch, ds.train.n - bstart);
      std::vector<std::int64_t> idx(order.begin() + bstart, order.begin() + bstart + count);
      Tensor<T> x = make_batch<T>(ds, ds.train, idx);

      NetCache<T> cache;
      Tensor<T> logits = network_forward(net, x, Mode::train, &cache);

      LossResult<T> loss;
      if (ds.multi_label) {
        std::vector<std::uint8_t> targets(static_cast<std::size_t>(count) * ds.num_classes);
        for (std::int64_t i = 0; i < count; ++i) {
          std::memcpy(targets.data() + i * ds.num_classes,
                      ds.train.targets.data() + idx[static_cast<std::size_t>(i)] * ds.num_classes,
                      static_cast<std::size_t>(ds.num_classes));
        }
        loss = bce_loss(logits, targets);
        acc_sum += accuracy_multilabel(logits, targets) * static_cast<double>(count);
      } else {
        std::vector<std::int32_t> labels(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) {
          labels[static_cast<std::size_t>(i)] =
              ds.train.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        }
        loss = cross_entropy_loss(logits, labels);
        acc_sum += accuracy_multiclass(logits, labels) * static_cast<double>(count);
      }
      loss_sum += loss.loss * static_cast<double>(count);
      seen += count;

      GradientList<T> grads = network_backward(net, loss.dlogits, cache);
      const double lr = cosine_lr(step, total_steps, cfg.lr0);
      opt.step(params, grads, lr);
      ++step;
      last_lr = cosine_lr(step, total_steps, cfg.lr0);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = acc_sum / static_cast<double>(seen);
    rec.val_acc = evaluate_split(net, ds, ds.val);
    rec.lr = last_lr;
    report.epochs.push_back(rec);
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace sre
