#pragma once

#include <map>

#include "core/layers.hpp"

namespace sre {

enum class LossKind { cross_entropy, bce };

struct StageConfig {
  int channels = 16;
  int kernel_size = 9;
  int blocks = 1;
  bool downsample = false;
};

// Declarative architecture description. Stages may be empty, which
// degenerates to global pooling over the raw input followed by the head.
struct NetworkConfig {
  int dims = 2;
  int in_channels = 1;
  int stem_channels = 16;
  std::vector<StageConfig> stages;
  int num_classes = 2;
  bool residual = true;
  ConvKind conv_kind = ConvKind::sre;
  LossKind loss_kind = LossKind::cross_entropy;
  std::uint64_t seed = 0;

  int downsample_count() const {
    int n = 0;
    for (const auto& s : stages) n += s.downsample ? 1 : 0;
    return n;
  }
};

NetworkConfig default_network_config();
void validate_config(const NetworkConfig& cfg);
NetworkConfig network_config_from_json(const std::string& json);
std::string network_config_to_json(const NetworkConfig& cfg);

template <typename T>
struct ConvBlock {
  ConvLayer<T> conv;
  BatchNormLayer<T> bn;
  bool residual = false;
};

// Fully convolutional stack: stem conv block, stages of conv blocks with
// [avg_pool -> 1x1 conv] downsampling between stages, global average
// pooling, linear head. Every convolution has stride 1; spatial extents only
// shrink inside the pooling downsamplers.
template <typename T>
class Network {
 public:
  NetworkConfig cfg;
  ConvBlock<T> stem;
  std::vector<std::vector<ConvBlock<T>>> stages;
  std::map<int, PointwiseLayer<T>> downsamples;  // keyed by stage index
  LinearLayer<T> head;
  int head_features = 0;

  std::vector<std::pair<std::string, Tensor<T>*>> params();
  std::vector<std::pair<std::string, const Tensor<T>*>> params() const;
  // Trainable parameters plus batch-norm running statistics.
  std::vector<std::pair<std::string, Tensor<T>*>> state_tensors();
};

template <typename T>
Network<T> build_network(const NetworkConfig& cfg) {
  validate_config(cfg);
  Network<T> net;
  net.cfg = cfg;
  std::uint64_t ordinal = 0;
  auto next_seed = [&]() { return derive_seed(cfg.seed, ordinal++); };

  int prev = cfg.in_channels;
  if (!cfg.stages.empty()) {
    net.stem.conv = make_conv_layer<T>(cfg.conv_kind, cfg.dims, cfg.in_channels,
                                       cfg.stem_channels, cfg.stages[0].kernel_size,
                                       next_seed());
    net.stem.bn = make_batch_norm<T>(cfg.stem_channels);
    net.stem.residual = false;
    prev = cfg.stem_channels;
  }

  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageConfig& st = cfg.stages[si];
    if (st.downsample) {
      net.downsamples.emplace(static_cast<int>(si),
                              make_pointwise_layer<T>(prev, st.channels, next_seed()));
      prev = st.channels;
    }
    std::vector<ConvBlock<T>> blocks;
    for (int bi = 0; bi < st.blocks; ++bi) {
      ConvBlock<T> blk;
      blk.conv = make_conv_layer<T>(cfg.conv_kind, cfg.dims, prev, st.channels, st.kernel_size,
                                    next_seed());
      blk.bn = make_batch_norm<T>(st.channels);
      blk.residual = cfg.residual && prev == st.channels;
      prev = st.channels;
      blocks.push_back(std::move(blk));
    }
    net.stages.push_back(std::move(blocks));
  }

  net.head_features = prev;
  net.head = make_linear<T>(prev, cfg.num_classes, next_seed());
  return net;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Network<T>::params() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  auto add_block = [&](const std::string& prefix, ConvBlock<T>& b) {
    out.emplace_back(prefix + ".conv.weights", &b.conv.weights);
    out.emplace_back(prefix + ".conv.bias", &b.conv.bias);
    out.emplace_back(prefix + ".bn.gamma", &b.bn.gamma);
    out.emplace_back(prefix + ".bn.beta", &b.bn.beta);
  };
  if (!stages.empty()) add_block("stem", stem);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    auto it = downsamples.find(static_cast<int>(si));
    if (it != downsamples.end()) {
      const std::string p = "down" + std::to_string(si);
      out.emplace_back(p + ".weights", &it->second.weights);
      out.emplace_back(p + ".bias", &it->second.bias);
    }
    for (std::size_t bi = 0; bi < stages[si].size(); ++bi) {
      add_block("stage" + std::to_string(si) + ".block" + std::to_string(bi), stages[si][bi]);
    }
  }
  out.emplace_back("head.weights", &head.weights);
  out.emplace_back("head.bias", &head.bias);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Network<T>::params() const {
  auto list = const_cast<Network<T>*>(this)->params();
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  out.reserve(list.size());
  for (auto& [name, t] : list) out.emplace_back(name, t);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Network<T>::state_tensors() {
  auto out = params();
  auto add_bn_stats = [&](const std::string& prefix, ConvBlock<T>& b) {
    out.emplace_back(prefix + ".bn.running_mean", &b.bn.running_mean);
    out.emplace_back(prefix + ".bn.running_var", &b.bn.running_var);
  };
  if (!stages.empty()) add_bn_stats("stem", stem);
  for (std::size_t si = 0; si < stages.size(); ++si) {
    for (std::size_t bi = 0; bi < stages[si].size(); ++bi) {
      add_bn_stats("stage" + std::to_string(si) + ".block" + std::to_string(bi),
                   stages[si][bi]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-network forward/backward.
// ---------------------------------------------------------------------------

template <typename T>
struct BlockCache {
  ConvCache<T> conv;
  BatchNormCache<T> bn;
  Tensor<T> relu_out;
};

template <typename T>
struct NetCache {
  BlockCache<T> stem;
  std::vector<std::vector<BlockCache<T>>> stages;
  std::map<int, std::pair<Shape, PointwiseCache<T>>> downs;  // pre-pool shape + cache
  Shape gap_in_shape;
  LinearCache<T> head;
  std::int64_t batch = 0;
  bool valid = false;
};

template <typename T>
void check_network_input(const Network<T>& net, const Tensor<T>& x) {
  const int d = net.cfg.dims;
  if (x.ndim() != d + 2) {
    fail(err::shape, "network: input must be [N, C, spatial...], got " + shape_str(x.shape()));
  }
  if (x.dim(1) != net.cfg.in_channels) {
    fail(err::shape, "network: expected " + std::to_string(net.cfg.in_channels) +
                         " input channels, got " + std::to_string(x.dim(1)));
  }
  const std::int64_t s0 = x.dim(2);
  for (int a = 1; a < d; ++a) {
    if (x.dim(2 + a) != s0) {
      fail(err::shape, "network: spatial extents must be square/cubic, got " +
                           shape_str(x.shape()));
    }
  }
  const std::int64_t div = std::int64_t{1} << net.cfg.downsample_count();
  if (s0 % div != 0) {
    fail(err::shape, "network: spatial extent " + std::to_string(s0) +
                         " not divisible by " + std::to_string(div));
  }
}

template <typename T>
Tensor<T> block_forward(ConvBlock<T>& blk, const Tensor<T>& x, Mode mode,
                        BlockCache<T>* cache) {
  Tensor<T> y = conv_forward(blk.conv, x, cache ? &cache->conv : nullptr);
  y = batch_norm_forward(blk.bn, y, mode, cache ? &cache->bn : nullptr);
  y = relu(y);
  if (cache) cache->relu_out = y;
  if (blk.residual) {
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] += x[i];
  }
  return y;
}

template <typename T>
Tensor<T> network_forward(Network<T>& net, const Tensor<T>& x, Mode mode,
                          NetCache<T>* cache = nullptr) {
  check_network_input(net, x);
  if (cache) {
    *cache = NetCache<T>{};
    cache->batch = x.dim(0);
    cache->stages.resize(net.stages.size());
  }

  Tensor<T> cur = x;
  if (!net.stages.empty()) {
    cur = block_forward(net.stem, cur, mode, cache ? &cache->stem : nullptr);
  }
  for (std::size_t si = 0; si < net.stages.size(); ++si) {
    auto it = net.downsamples.find(static_cast<int>(si));
    if (it != net.downsamples.end()) {
      const Shape pre_pool = cur.shape();
      cur = avg_pool(cur, net.cfg.dims);
      PointwiseCache<T>* pc = nullptr;
      if (cache) {
        auto& slot = cache->downs[static_cast<int>(si)];
        slot.first = pre_pool;
        pc = &slot.second;
      }
      cur = pointwise_forward(it->second, cur, pc);
    }
    auto& blocks = net.stages[si];
    if (cache) cache->stages[si].resize(blocks.size());
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
      cur = block_forward(blocks[bi], cur, mode, cache ? &cache->stages[si][bi] : nullptr);
    }
  }

  if (cache) cache->gap_in_shape = cur.shape();
  cur = global_avg_pool(cur);
  Tensor<T> logits = linear_forward(net.head, cur, cache ? &cache->head : nullptr);
  ensure_finite(logits, "network_forward logits");
  if (cache) cache->valid = true;
  return logits;
}

// Ordered (name, gradient) pairs aligned with params().
template <typename T>
using GradientList = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
Tensor<T> block_backward(ConvBlock<T>& blk, const std::string& prefix, const Tensor<T>& dy,
                         BlockCache<T>& cache, GradientList<T>& grads) {
  Tensor<T> d = dy;
  if (blk.residual) {
    // residual add: gradient flows unchanged into both branches
  }
  Tensor<T> d_relu = relu_backward(d, cache.relu_out);
  auto bn_g = batch_norm_backward(blk.bn, d_relu, cache.bn);
  auto conv_g = conv_backward(blk.conv, bn_g.dx, cache.conv);
  if (blk.residual) {
    for (std::int64_t i = 0; i < conv_g.dx.numel(); ++i) conv_g.dx[i] += d[i];
  }
  grads.emplace_back(prefix + ".conv.weights", std::move(conv_g.dweights));
  grads.emplace_back(prefix + ".conv.bias", std::move(conv_g.dbias));
  grads.emplace_back(prefix + ".bn.gamma", std::move(bn_g.dgamma));
  grads.emplace_back(prefix + ".bn.beta", std::move(bn_g.dbeta));
  return std::move(conv_g.dx);
}

template <typename T>
GradientList<T> network_backward(Network<T>& net, const Tensor<T>& dlogits,
                                 NetCache<T>& cache) {
  if (!cache.valid) fail(err::argument, "network_backward: cache already consumed or stale");
  if (dlogits.ndim() != 2 || dlogits.dim(0) != cache.batch ||
      dlogits.dim(1) != net.cfg.num_classes) {
    fail(err::shape, "network_backward: dlogits shape mismatch");
  }
  cache.valid = false;

  GradientList<T> rev;
  auto head_g = linear_backward(net.head, dlogits, cache.head);
  rev.emplace_back("head.bias", std::move(head_g.dbias));
  rev.emplace_back("head.weights", std::move(head_g.dweights));

  Tensor<T> d = global_avg_pool_backward(head_g.dx, cache.gap_in_shape);

  for (std::size_t si = net.stages.size(); si-- > 0;) {
    auto& blocks = net.stages[si];
    for (std::size_t bi = blocks.size(); bi-- > 0;) {
      GradientList<T> blk_grads;
      d = block_backward(blocks[bi],
                         "stage" + std::to_string(si) + ".block" + std::to_string(bi), d,
                         cache.stages[si][bi], blk_grads);
      for (auto it = blk_grads.rbegin(); it != blk_grads.rend(); ++it) {
        rev.emplace_back(std::move(*it));
      }
    }
    auto it = net.downsamples.find(static_cast<int>(si));
    if (it != net.downsamples.end()) {
      auto& slot = cache.downs.at(static_cast<int>(si));
      auto pw_g = pointwise_backward(it->second, d, slot.second);
      const std::string p = "down" + std::to_string(si);
      rev.emplace_back(p + ".bias", std::move(pw_g.dbias));
      rev.emplace_back(p + ".weights", std::move(pw_g.dweights));
      d = avg_pool_backward(pw_g.dx, net.cfg.dims, slot.first);
    }
  }
  if (!net.stages.empty()) {
    GradientList<T> blk_grads;
    d = block_backward(net.stem, "stem", d, cache.stem, blk_grads);
    for (auto it = blk_grads.rbegin(); it != blk_grads.rend(); ++it) {
      rev.emplace_back(std::move(*it));
    }
  }

  return GradientList<T>(rev.rbegin(), rev.rend());
}

// Eval-mode feature maps in execution order, for equivariance measurement
// and visualization. Entry 0 is the stem convolution output before
// normalization (the "first layer" map); later entries are block and
// downsampler outputs.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> network_features(Network<T>& net,
                                                                const Tensor<T>& x) {
  check_network_input(net, x);
  std::vector<std::pair<std::string, Tensor<T>>> feats;
  Tensor<T> cur = x;
  if (!net.stages.empty()) {
    Tensor<T> c = conv_forward(net.stem.conv, cur, static_cast<ConvCache<T>*>(nullptr));
    feats.emplace_back("stem.conv", c);
    c = batch_norm_forward(net.stem.bn, c, Mode::eval, static_cast<BatchNormCache<T>*>(nullptr));
    c = relu(c);
    feats.emplace_back("stem", c);
    cur = std::move(c);
  }
  for (std::size_t si = 0; si < net.stages.size(); ++si) {
    auto it = net.downsamples.find(static_cast<int>(si));
    if (it != net.downsamples.end()) {
      cur = avg_pool(cur, net.cfg.dims);
      cur = pointwise_forward(it->second, cur, static_cast<PointwiseCache<T>*>(nullptr));
      feats.emplace_back("down" + std::to_string(si), cur);
    }
    for (std::size_t bi = 0; bi < net.stages[si].size(); ++bi) {
      cur = block_forward(net.stages[si][bi], cur, Mode::eval,
                          static_cast<BlockCache<T>*>(nullptr));
      feats.emplace_back("stage" + std::to_string(si) + ".block" + std::to_string(bi), cur);
    }
  }
  return feats;
}

// ---------------------------------------------------------------------------
// Parameter accounting.
// ---------------------------------------------------------------------------

struct ParamBreakdown {
  std::vector<std::pair<std::string, std::int64_t>> per_layer;
  std::int64_t total = 0;
};

// Analytic count from the config alone; must agree with the instantiated
// network's registry.
ParamBreakdown count_parameters(const NetworkConfig& cfg);

template <typename T>
ParamBreakdown count_parameters(const Network<T>& net) {
  ParamBreakdown b;
  for (const auto& [name, t] : net.params()) {
    b.per_layer.emplace_back(name, t->numel());
    b.total += t->numel();
  }
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "SREC", version 0x01, LE u32 JSON header length, JSON
// header {config, tensors:[{name, dtype:"f32", shape, byte_offset}]}, then
// raw little-endian float32 payloads.
// ---------------------------------------------------------------------------

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointData {
  std::string config_json;
  std::vector<CheckpointTensor> tensors;
};

void write_checkpoint_file(const std::string& path, const CheckpointData& data);
CheckpointData read_checkpoint_file(const std::string& path);

template <typename T>
void save_checkpoint(Network<T>& net, const std::string& path) {
  CheckpointData data;
  data.config_json = network_config_to_json(net.cfg);
  for (auto& [name, t] : net.state_tensors()) {
    CheckpointTensor ct;
    ct.name = name;
    ct.shape = t->shape();
    ct.data.resize(static_cast<std::size_t>(t->numel()));
    for (std::int64_t i = 0; i < t->numel(); ++i) {
      ct.data[static_cast<std::size_t>(i)] = static_cast<float>((*t)[i]);
    }
    data.tensors.push_back(std::move(ct));
  }
  write_checkpoint_file(path, data);
}

template <typename T>
Network<T> load_checkpoint(const std::string& path) {
  CheckpointData data = read_checkpoint_file(path);
  NetworkConfig cfg = network_config_from_json(data.config_json);
  Network<T> net = build_network<T>(cfg);
  std::map<std::string, CheckpointTensor*> table;
  for (auto& ct : data.tensors) table[ct.name] = &ct;
  for (auto& [name, t] : net.state_tensors()) {
    auto it = table.find(name);
    if (it == table.end()) {
      fail(err::ckpt_corrupt, "checkpoint missing tensor: " + name);
    }
    const CheckpointTensor& ct = *it->second;
    if (ct.shape != t->shape()) {
      fail(err::ckpt_corrupt, "checkpoint tensor shape mismatch for " + name + ": " +
                                  shape_str(ct.shape) + " vs " + shape_str(t->shape()));
    }
    for (std::size_t i = 0; i < ct.data.size(); ++i) {
      (*t)[static_cast<std::int64_t>(i)] = static_cast<T>(ct.data[i]);
    }
  }
  return net;
}

}  // namespace sre
