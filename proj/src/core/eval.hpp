#pragma once

#include <cstdio>

#include "core/train.hpp"
#include "core/transforms.hpp"

namespace sre {

std::string report_jsonl(const TrainReport& report);

// ---------------------------------------------------------------------------
// Accuracy on logits (dispatches on the dataset's label type).
// ---------------------------------------------------------------------------

template <typename T>
double accuracy(const LabeledDataset& ds, const DataSplit& split, const Tensor<T>& logits,
                std::int64_t offset) {
  if (ds.multi_label) return accuracy_multilabel(logits, split.targets, offset);
  return accuracy_multiclass(logits, split.labels, offset);
}

// ---------------------------------------------------------------------------
// Rotated / reflected test protocols.
// ---------------------------------------------------------------------------

struct ProtocolEntry {
  std::string transform;
  double accuracy = 0.0;
};

struct ProtocolResult {
  std::string protocol;
  int dims = 2;
  double original_accuracy = 0.0;
  std::vector<ProtocolEntry> entries;
  double mean_accuracy = 0.0;
};

std::string protocol_result_json(const ProtocolResult& r);

namespace detail {

template <typename T>
void check_protocol_compat(const Network<T>& net, const LabeledDataset& ds) {
  if (net.cfg.dims != ds.dims) {
    fail(err::config_mismatch, "checkpoint is " + std::to_string(net.cfg.dims) +
                                   "D but dataset is " + std::to_string(ds.dims) + "D");
  }
  if (net.cfg.in_channels != ds.channels) {
    fail(err::config_mismatch, "checkpoint expects " + std::to_string(net.cfg.in_channels) +
                                   " channels but dataset has " + std::to_string(ds.channels));
  }
}

// Evaluates the test split with a per-batch [0,1]-scale transform applied
// before standardization.
template <typename T, typename TransformFn>
double evaluate_transformed(Network<T>& net, const LabeledDataset& ds, const DataSplit& split,
                            TransformFn&& tf, int batch_size = 256) {
  double weighted = 0.0;
  for (std::int64_t start = 0; start < split.n; start += batch_size) {
    const std::int64_t count = std::min<std::int64_t>(batch_size, split.n - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    Tensor<T> x = batch01<T>(ds, split, idx);
    x = tf(x);
    x = standardize(ds, x);
    Tensor<T> logits = network_forward(net, x, Mode::eval);
    weighted += accuracy(ds, split, logits, start) * static_cast<double>(count);
  }
  return split.n > 0 ? weighted / static_cast<double>(split.n) : 0.0;
}

}  // namespace detail

// 2D: accuracies on 36 copies rotated by 0,10,...,350 degrees.
// 3D: the original plus 30-degree increments about each axis (34 copies).
// The reported figure is the arithmetic mean over all copies.
template <typename T>
ProtocolResult rotated_protocol(Network<T>& net, const LabeledDataset& ds) {
  detail::check_protocol_compat(net, ds);
  ProtocolResult res;
  res.protocol = "rotated";
  res.dims = ds.dims;
  res.original_accuracy = detail::evaluate_transformed(
      net, ds, ds.test, [](const Tensor<T>& x) { return x; });

  double sum = 0.0;
  if (ds.dims == 2) {
    for (int angle = 0; angle < 360; angle += 10) {
      const double acc = detail::evaluate_transformed(net, ds, ds.test, [&](const Tensor<T>& x) {
        return rotate_image(x, static_cast<double>(angle));
      });
      res.entries.push_back({"rot:" + std::to_string(angle), acc});
      sum += acc;
    }
  } else {
    res.entries.push_back({"original", res.original_accuracy});
    sum += res.original_accuracy;
    for (int axis = 0; axis < 3; ++axis) {
      for (int angle = 30; angle < 360; angle += 30) {
        const double acc =
            detail::evaluate_transformed(net, ds, ds.test, [&](const Tensor<T>& x) {
              return rotate_volume(x, axis, static_cast<double>(angle));
            });
        res.entries.push_back(
            {"rot:axis" + std::to_string(axis) + ":" + std::to_string(angle), acc});
        sum += acc;
      }
    }
  }
  res.mean_accuracy = sum / static_cast<double>(res.entries.size());
  return res;
}

// 2D only: horizontal and vertical flip copies.
template <typename T>
ProtocolResult reflected_protocol(Network<T>& net, const LabeledDataset& ds) {
  if (ds.dims != 2) {
    fail(err::unsupported_protocol, "reflected protocol is defined for 2D datasets only");
  }
  detail::check_protocol_compat(net, ds);
  ProtocolResult res;
  res.protocol = "reflected";
  res.dims = 2;
  res.original_accuracy = detail::evaluate_transformed(
      net, ds, ds.test, [](const Tensor<T>& x) { return x; });
  double sum = 0.0;
  const std::pair<const char*, FlipAxis> flips[2] = {{"hflip", FlipAxis::horizontal},
                                                     {"vflip", FlipAxis::vertical}};
  for (const auto& [name, axis] : flips) {
    const double acc = detail::evaluate_transformed(
        net, ds, ds.test, [&](const Tensor<T>& x) { return reflect_image(x, axis); });
    res.entries.push_back({name, acc});
    sum += acc;
  }
  res.mean_accuracy = sum / 2.0;
  return res;
}

template <typename T>
ProtocolResult original_protocol(Network<T>& net, const LabeledDataset& ds) {
  detail::check_protocol_compat(net, ds);
  ProtocolResult res;
  res.protocol = "orig";
  res.dims = ds.dims;
  res.original_accuracy = detail::evaluate_transformed(
      net, ds, ds.test, [](const Tensor<T>& x) { return x; });
  res.entries.push_back({"identity", res.original_accuracy});
  res.mean_accuracy = res.original_accuracy;
  return res;
}

// ---------------------------------------------------------------------------
// Quantitative equivariance error of one feature map.
// ---------------------------------------------------------------------------

// Mean |f(g x) unrotated - f(x)| over a centered circular mask of radius
// 0.45*min(H,W), normalized by the masked mean |f(x)|.
template <typename T>
double equivariance_error_features(const Tensor<T>& f_ref, const Tensor<T>& f_back) {
  if (!f_ref.same_shape(f_back)) fail(err::shape, "equivariance_error: feature shape mismatch");
  const int nd = f_ref.ndim();
  const std::int64_t h = f_ref.dim(nd - 2), w = f_ref.dim(nd - 1);
  std::int64_t lead = 1;
  for (int i = 0; i < nd - 2; ++i) lead *= f_ref.dim(i);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double radius = 0.45 * static_cast<double>(std::min(h, w));
  const double r2 = radius * radius;

  double diff_sum = 0.0, ref_sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t l = 0; l < lead; ++l) {
    const T* a = f_ref.data() + l * h * w;
    const T* b = f_back.data() + l * h * w;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        if (dy * dy + dx * dx > r2) continue;
        diff_sum += std::abs(static_cast<double>(a[y * w + x]) -
                             static_cast<double>(b[y * w + x]));
        ref_sum += std::abs(static_cast<double>(a[y * w + x]));
        ++count;
      }
    }
  }
  if (count == 0) return 0.0;
  const double denom = std::max(ref_sum / static_cast<double>(count), 1e-12);
  return (diff_sum / static_cast<double>(count)) / denom;
}

// x01: one image [C, H, W] on the [0,1] scale.
template <typename T>
double equivariance_error(Network<T>& net, const LabeledDataset& ds, const Tensor<T>& x01,
                          double angle_degrees, std::size_t layer_index) {
  Tensor<T> batch = x01.reshaped([&] {
    Shape s{1};
    for (auto d : x01.shape()) s.push_back(d);
    return s;
  }());
  auto feats_ref = network_features(net, standardize(ds, batch));
  if (layer_index >= feats_ref.size()) fail(err::argument, "equivariance_error: bad layer index");

  Tensor<T> rotated = rotate_image(batch, angle_degrees);
  auto feats_rot = network_features(net, standardize(ds, rotated));
  Tensor<T> back = rotate_image(feats_rot[layer_index].second, -angle_degrees);
  return equivariance_error_features(feats_ref[layer_index].second, back);
}

template <typename T>
double equivariance_error(Network<T>& net, const LabeledDataset& ds, const Tensor<T>& x01,
                          const GridElement& g, std::size_t layer_index) {
  Tensor<T> batch = x01.reshaped([&] {
    Shape s{1};
    for (auto d : x01.shape()) s.push_back(d);
    return s;
  }());
  auto feats_ref = network_features(net, standardize(ds, batch));
  if (layer_index >= feats_ref.size()) fail(err::argument, "equivariance_error: bad layer index");

  Tensor<T> transformed = grid_transform(batch, g);
  auto feats_g = network_features(net, standardize(ds, transformed));
  Tensor<T> back = grid_transform(feats_g[layer_index].second, grid_inverse(g));
  return equivariance_error_features(feats_ref[layer_index].second, back);
}

// ---------------------------------------------------------------------------
// Feature-map panels (rotate input, forward, average first conv layer's
// channels, unrotate, circular mask).
// ---------------------------------------------------------------------------

struct FeaturePanel {
  double angle = 0.0;
  Tensor<double> map;  // [H, W], raw values, zero outside the mask
  double raw_min = 0.0, raw_max = 0.0, raw_mean = 0.0, masked_mean_abs = 0.0;
  std::string pgm_path, json_path;
};

void write_pgm(const std::string& path, const Tensor<double>& map);
Tensor<double> read_pgm(const std::string& path);
void write_panel_sidecar(const FeaturePanel& panel);

template <typename T>
std::vector<FeaturePanel> export_feature_maps(Network<T>& net, const LabeledDataset& ds,
                                              const Tensor<T>& x01,
                                              const std::vector<double>& angles,
                                              const std::string& out_dir,
                                              const std::string& tag = "panel") {
  if (x01.ndim() != 3) fail(err::shape, "export_feature_maps: image must be [C, H, W]");
  if (!out_dir.empty()) ensure_dir(out_dir);

  std::vector<FeaturePanel> panels;
  for (std::size_t ai = 0; ai < angles.size(); ++ai) {
    const double angle = angles[ai];
    Tensor<T> batch = x01.reshaped(Shape{1, x01.dim(0), x01.dim(1), x01.dim(2)});
    Tensor<T> rotated = rotate_image(batch, angle);
    auto feats = network_features(net, standardize(ds, rotated));
    if (feats.empty()) fail(err::config, "export_feature_maps: network has no conv layers");
    const Tensor<T>& first = feats[0].second;  // [1, C, H, W]

    const std::int64_t c = first.dim(1), h = first.dim(2), w = first.dim(3);
    Tensor<T> mean_map(Shape{h, w});
    const T invc = T{1} / static_cast<T>(c);
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* src = first.data() + ch * h * w;
      for (std::int64_t p = 0; p < h * w; ++p) mean_map[p] += src[p];
    }
    for (std::int64_t p = 0; p < h * w; ++p) mean_map[p] *= invc;

    Tensor<T> back = rotate_image(mean_map, -angle);

    FeaturePanel panel;
    panel.angle = angle;
    panel.map = Tensor<double>(Shape{h, w});
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double radius = 0.45 * static_cast<double>(std::min(h, w));
    const double r2 = radius * radius;
    double mn = 0.0, mx = 0.0, sum = 0.0, sum_abs = 0.0;
    std::int64_t count = 0;
    bool first_cell = true;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const double dy = static_cast<double>(y) - cy;
        const double dx = static_cast<double>(x) - cx;
        if (dy * dy + dx * dx > r2) continue;
        const double v = static_cast<double>(back[y * w + x]);
        panel.map[y * w + x] = v;
        if (first_cell) {
          mn = mx = v;
          first_cell = false;
        }
        mn = std::min(mn, v);
        mx = std::max(mx, v);
        sum += v;
        sum_abs += std::abs(v);
        ++count;
      }
    }
    panel.raw_min = mn;
    panel.raw_max = mx;
    panel.raw_mean = count ? sum / static_cast<double>(count) : 0.0;
    panel.masked_mean_abs = count ? sum_abs / static_cast<double>(count) : 0.0;

    if (!out_dir.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s_%03d", tag.c_str(), static_cast<int>(ai));
      panel.pgm_path = out_dir + "/" + buf + ".pgm";
      panel.json_path = out_dir + "/" + buf + ".json";
      write_pgm(panel.pgm_path, panel.map);
      write_panel_sidecar(panel);
    }
    panels.push_back(std::move(panel));
  }
  return panels;
}

// Mean pairwise masked mean-absolute-difference between panels; the summary
// statistic behind the qualitative contrast of the feature-map figure.
inline double panel_pairwise_mad(const std::vector<FeaturePanel>& panels) {
  double total = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < panels.size(); ++i) {
    for (std::size_t j = i + 1; j < panels.size(); ++j) {
      const Tensor<double>& a = panels[i].map;
      const Tensor<double>& b = panels[j].map;
      double s = 0.0;
      for (std::int64_t p = 0; p < a.numel(); ++p) s += std::abs(a[p] - b[p]);
      total += s / static_cast<double>(a.numel());
      ++pairs;
    }
  }
  return pairs ? total / pairs : 0.0;
}

// ---------------------------------------------------------------------------
// Exact-transform invariance suite (the property behind `equiv-check`).
// ---------------------------------------------------------------------------

struct EquivCheckEntry {
  std::string transform;
  double max_abs_logit_diff = 0.0;
  bool argmax_invariant = true;
};

struct EquivCheckResult {
  bool pass = true;
  double tolerance = 1e-4;
  int inputs = 0;
  std::vector<EquivCheckEntry> logit_entries;                      // one per group element
  std::vector<std::pair<std::string, double>> layer_errors;       // per-layer rot90 sweep
};

std::string equiv_check_json(const EquivCheckResult& r);

template <typename T>
EquivCheckResult equiv_check(Network<T>& net, double tolerance, int n_inputs,
                             std::uint64_t seed, std::int64_t spatial_extent = 0) {
  EquivCheckResult res;
  res.tolerance = tolerance;
  res.inputs = n_inputs;
  const int d = net.cfg.dims;
  const std::int64_t div = std::int64_t{1} << net.cfg.downsample_count();
  std::int64_t extent = spatial_extent > 0 ? spatial_extent : (d == 2 ? 16 : 8);
  if (extent % div != 0) extent = ((extent + div - 1) / div) * div;

  Shape shape{1, net.cfg.in_channels};
  for (int a = 0; a < d; ++a) shape.push_back(extent);

  const auto group = grid_group(d);
  res.logit_entries.resize(group.size());
  for (std::size_t gi = 0; gi < group.size(); ++gi) {
    res.logit_entries[gi].transform = grid_element_name(group[gi]);
  }

  Rng rng(seed);
  for (int i = 0; i < n_inputs; ++i) {
    Tensor<T> x(shape);
    for (std::int64_t p = 0; p < x.numel(); ++p) {
      x[p] = static_cast<T>(rng.uniform(-1.0, 1.0));
    }
    Tensor<T> base = network_forward(net, x, Mode::eval);
    std::int64_t base_arg = 0;
    for (std::int64_t j = 1; j < base.numel(); ++j) {
      if (base[j] > base[base_arg]) base_arg = j;
    }
    for (std::size_t gi = 0; gi < group.size(); ++gi) {
      Tensor<T> logits = network_forward(net, grid_transform(x, group[gi]), Mode::eval);
      double mx = 0.0;
      std::int64_t arg = 0;
      for (std::int64_t j = 0; j < logits.numel(); ++j) {
        mx = std::max(mx, std::abs(static_cast<double>(logits[j]) -
                                   static_cast<double>(base[j])));
        if (logits[j] > logits[arg]) arg = j;
      }
      auto& entry = res.logit_entries[gi];
      entry.max_abs_logit_diff = std::max(entry.max_abs_logit_diff, mx);
      if (arg != base_arg) entry.argmax_invariant = false;
    }
  }
  for (const auto& e : res.logit_entries) {
    if (e.max_abs_logit_diff > tolerance || !e.argmax_invariant) res.pass = false;
  }
  return res;
}

}  // namespace sre
