#include "core/dataset.hpp"

#include <cstdlib>
#include <cstring>

namespace sre {

namespace {

DataSplit split_from_arrays(const NpyArray& images, const NpyArray& labels, int* dims,
                            int* channels, int* num_classes, bool* multi_label) {
  DataSplit sp;
  if (images.dtype != NpyDtype::u8) {
    fail(err::unsupported_dtype, "dataset images must be uint8");
  }
  if (images.shape.size() == 3) {
    *dims = 2;
    *channels = 1;
  } else if (images.shape.size() == 4) {
    // [N,H,W,C] with small C is 2D multichannel; anything else is a volume.
    if (images.shape[3] <= 4) {
      *dims = 2;
      *channels = static_cast<int>(images.shape[3]);
    } else {
      *dims = 3;
      *channels = 1;
    }
  } else {
    fail(err::shape, "dataset images must be rank 3 or 4, got " +
                         std::to_string(images.shape.size()));
  }
  sp.image_shape = images.shape;
  sp.n = images.shape[0];
  sp.images.assign(images.payload.begin(), images.payload.end());

  if (labels.shape.empty() || labels.shape[0] != sp.n) {
    fail(err::shape, "dataset labels do not match image count");
  }
  auto label_value = [&](std::int64_t i) -> std::int64_t {
    if (labels.dtype == NpyDtype::u8) return labels.payload[static_cast<std::size_t>(i)];
    if (labels.dtype == NpyDtype::i64) {
      std::int64_t v;
      std::memcpy(&v, labels.payload.data() + i * 8, 8);
      return v;
    }
    fail(err::unsupported_dtype, "dataset labels must be uint8 or int64");
  };

  const std::int64_t k = labels.shape.size() >= 2 ? labels.shape[1] : 1;
  if (k <= 1) {
    *multi_label = false;
    sp.labels.resize(static_cast<std::size_t>(sp.n));
    std::int64_t max_label = 0;
    for (std::int64_t i = 0; i < sp.n; ++i) {
      const std::int64_t v = label_value(i);
      if (v < 0) fail(err::label_range, "negative class label");
      sp.labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(v);
      max_label = std::max(max_label, v);
    }
    *num_classes = std::max(*num_classes, static_cast<int>(max_label) + 1);
  } else {
    *multi_label = true;
    *num_classes = static_cast<int>(k);
    sp.targets.resize(static_cast<std::size_t>(sp.n * k));
    for (std::int64_t i = 0; i < sp.n * k; ++i) {
      const std::int64_t v = label_value(i);
      if (v != 0 && v != 1) fail(err::non_binary_target, "multi-label targets must be 0/1");
      sp.targets[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v);
    }
  }
  return sp;
}

}  // namespace

void compute_normalization(LabeledDataset& ds) {
  const int c = ds.channels;
  ds.mean.assign(static_cast<std::size_t>(c), 0.0);
  ds.stddev.assign(static_cast<std::size_t>(c), 1.0);
  const DataSplit& tr = ds.train;
  if (tr.n == 0) return;
  const std::int64_t cells = tr.sample_cells();
  const std::int64_t per_channel = tr.n * cells / c;

  std::vector<double> sum(static_cast<std::size_t>(c), 0.0);
  std::vector<double> sumsq(static_cast<std::size_t>(c), 0.0);
  if (ds.dims == 2 && c > 1) {
    for (std::int64_t i = 0; i < tr.n * cells; ++i) {
      const double v = tr.images[static_cast<std::size_t>(i)] / 255.0;
      const int ch = static_cast<int>(i % c);
      sum[static_cast<std::size_t>(ch)] += v;
      sumsq[static_cast<std::size_t>(ch)] += v * v;
    }
  } else {
    for (std::int64_t i = 0; i < tr.n * cells; ++i) {
      const double v = tr.images[static_cast<std::size_t>(i)] / 255.0;
      sum[0] += v;
      sumsq[0] += v * v;
    }
  }
  for (int ch = 0; ch < c; ++ch) {
    const double m = sum[static_cast<std::size_t>(ch)] / static_cast<double>(per_channel);
    const double var =
        sumsq[static_cast<std::size_t>(ch)] / static_cast<double>(per_channel) - m * m;
    ds.mean[static_cast<std::size_t>(ch)] = m;
    ds.stddev[static_cast<std::size_t>(ch)] = std::sqrt(std::max(var, 1e-6));
  }
}

LabeledDataset load_npz_dataset(const std::string& path) {
  const NpzFile npz = read_npz(path);
  const char* keys[6] = {"train_images", "train_labels", "val_images",
                         "val_labels",   "test_images",  "test_labels"};
  for (const char* k : keys) {
    if (!npz.find(k)) fail(err::missing_key, std::string("dataset missing key: ") + k);
  }
  LabeledDataset ds;
  ds.num_classes = 0;
  int dims = 2, channels = 1, num_classes = 0;
  bool multi = false;
  ds.train = split_from_arrays(*npz.find("train_images"), *npz.find("train_labels"), &dims,
                               &channels, &num_classes, &multi);
  ds.val = split_from_arrays(*npz.find("val_images"), *npz.find("val_labels"), &dims, &channels,
                             &num_classes, &multi);
  ds.test = split_from_arrays(*npz.find("test_images"), *npz.find("test_labels"), &dims,
                              &channels, &num_classes, &multi);
  ds.dims = dims;
  ds.channels = channels;
  ds.num_classes = std::max(num_classes, 2);
  ds.multi_label = multi;
  compute_normalization(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data.
// ---------------------------------------------------------------------------

namespace {

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Soft coverage from a signed distance, ~1.2px transition band.
double soft(double sdf) { return clamp01(0.5 - sdf / 1.2); }

// Separable Gaussian blur with clamped borders. Acts as a camera-like PSF:
// it bounds the image curvature so interpolating rotations stay faithful,
// the way they are on natural images.
void gaussian_blur_2d(std::vector<double>& img, int n, double sigma) {
  const int rad = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * rad + 1));
  double sum = 0.0;
  for (int i = -rad; i <= rad; ++i) {
    k[static_cast<std::size_t>(i + rad)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + rad)];
  }
  for (auto& v : k) v /= sum;
  std::vector<double> tmp(img.size());
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        acc += k[static_cast<std::size_t>(i + rad)] *
               img[static_cast<std::size_t>(y) * n + std::clamp(x + i, 0, n - 1)];
      }
      tmp[static_cast<std::size_t>(y) * n + x] = acc;
    }
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double acc = 0.0;
      for (int i = -rad; i <= rad; ++i) {
        acc += k[static_cast<std::size_t>(i + rad)] *
               tmp[static_cast<std::size_t>(std::clamp(y + i, 0, n - 1)) * n + x];
      }
      img[static_cast<std::size_t>(y) * n + x] = acc;
    }
  }
}

void draw_sample_2d(SyntheticKind kind, int cls, int num_classes, int size, Rng& rng,
                    std::uint8_t* out) {
  const double scale = size / 32.0;
  const double jitter = rng.uniform(0.92, 1.12) * scale;
  const double amp = kind == SyntheticKind::blobs
                         ? (55.0 + (200.0 - 55.0) * (num_classes > 1
                                                         ? static_cast<double>(cls) /
                                                               (num_classes - 1)
                                                         : 0.0))
                         : rng.uniform(165.0, 240.0);
  const double margin = kind == SyntheticKind::blobs ? size * 0.28 : 10.0 * scale;
  const double cy = rng.uniform(margin, size - 1 - margin);
  const double cx = rng.uniform(margin, size - 1 - margin);

  std::vector<double> raw(static_cast<std::size_t>(size) * size);
  const double sigma = size / 6.5;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double dy = y - cy;
      const double dx = x - cx;
      const double d = std::sqrt(dy * dy + dx * dx);
      double cov = 0.0;
      if (kind == SyntheticKind::blobs) {
        cov = std::exp(-(d * d) / (2.0 * sigma * sigma));
      } else {
        switch (cls % 3) {
          case 0: {  // disk
            cov = soft(d - 5.0 * jitter);
            break;
          }
          case 1: {  // ring
            cov = soft(std::abs(d - 4.6 * jitter) - 1.8 * jitter);
            break;
          }
          default: {  // cross: two axis-aligned bars
            const double arm = 7.0 * jitter;
            const double halfw = 1.8 * jitter;
            const double bar_h = std::max(std::abs(dy) - halfw, std::abs(dx) - arm);
            const double bar_v = std::max(std::abs(dx) - halfw, std::abs(dy) - arm);
            cov = std::max(soft(bar_h), soft(bar_v));
            break;
          }
        }
      }
      raw[static_cast<std::size_t>(y) * size + x] = rng.uniform(0.0, 12.0) + amp * cov;
    }
  }
  gaussian_blur_2d(raw, size, 1.25 * scale);
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(raw.size()); ++p) {
    out[p] = static_cast<std::uint8_t>(clamp01(raw[static_cast<std::size_t>(p)] / 255.0) * 255.0 +
                                       0.5);
  }
}

void draw_sample_3d(SyntheticKind kind, int cls, int num_classes, int size, Rng& rng,
                    std::uint8_t* out) {
  const double jitter = rng.uniform(0.92, 1.12);
  const double amp = kind == SyntheticKind::blobs
                         ? (55.0 + 145.0 * (num_classes > 1
                                                ? static_cast<double>(cls) / (num_classes - 1)
                                                : 0.0))
                         : rng.uniform(165.0, 250.0);
  const double margin = kind == SyntheticKind::blobs ? size * 0.3 : size * 0.34;
  const double cz = rng.uniform(margin, size - 1 - margin);
  const double cy = rng.uniform(margin, size - 1 - margin);
  const double cx = rng.uniform(margin, size - 1 - margin);
  const double scale = size / 32.0;
  const double sigma = size / 6.5;

  for (int z = 0; z < size; ++z) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dz = z - cz, dy = y - cy, dx = x - cx;
        const double d = std::sqrt(dz * dz + dy * dy + dx * dx);
        double cov = 0.0;
        if (kind == SyntheticKind::blobs) {
          cov = std::exp(-(d * d) / (2.0 * sigma * sigma));
        } else {
          switch (cls % 3) {
            case 0:
              cov = soft(d - 4.6 * jitter * scale);
              break;
            case 1: {
              const double mid = 4.4 * jitter * scale;
              const double half = 1.3 * jitter * scale;
              cov = soft(std::abs(d - mid) - half);
              break;
            }
            default: {
              const double arm = 6.4 * jitter * scale;
              const double halfw = 1.25 * jitter * scale;
              const double b0 =
                  std::max({std::abs(dy) - halfw, std::abs(dz) - halfw, std::abs(dx) - arm});
              const double b1 =
                  std::max({std::abs(dx) - halfw, std::abs(dz) - halfw, std::abs(dy) - arm});
              const double b2 =
                  std::max({std::abs(dx) - halfw, std::abs(dy) - halfw, std::abs(dz) - arm});
              cov = std::max({soft(b0), soft(b1), soft(b2)});
              break;
            }
          }
        }
        const double noise = rng.uniform(0.0, 16.0);
        const double v = noise + amp * cov;
        out[(static_cast<std::int64_t>(z) * size + y) * size + x] =
            static_cast<std::uint8_t>(clamp01(v / 255.0) * 255.0 + 0.5);
      }
    }
  }
}

DataSplit make_split(const SyntheticSpec& spec, std::int64_t n, std::uint64_t seed) {
  DataSplit sp;
  sp.n = n;
  const int s = spec.size;
  std::int64_t cells = 1;
  if (spec.dims == 2) {
    sp.image_shape = {n, s, s, 1};
    cells = static_cast<std::int64_t>(s) * s;
  } else {
    sp.image_shape = {n, s, s, s};
    cells = static_cast<std::int64_t>(s) * s * s;
  }
  sp.images.resize(static_cast<std::size_t>(n * cells));
  sp.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  for (std::int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % spec.num_classes);
    sp.labels[static_cast<std::size_t>(i)] = cls;
    if (spec.dims == 2) {
      draw_sample_2d(spec.kind, cls, spec.num_classes, s, rng,
                     sp.images.data() + i * cells);
    } else {
      draw_sample_3d(spec.kind, cls, spec.num_classes, s, rng,
                     sp.images.data() + i * cells);
    }
  }
  return sp;
}

}  // namespace

LabeledDataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.dims != 2 && spec.dims != 3) fail(err::config, "synthetic dims must be 2 or 3");
  if (spec.size % 4 != 0) fail(err::config, "synthetic size must be divisible by 4");
  if (spec.num_classes < 2) fail(err::config, "synthetic needs at least 2 classes");
  if (spec.n_train < 10 * spec.num_classes) {
    fail(err::config, "synthetic needs at least 10 samples per class in train");
  }
  LabeledDataset ds;
  ds.dims = spec.dims;
  ds.channels = 1;
  ds.num_classes = spec.num_classes;
  ds.multi_label = false;
  ds.train = make_split(spec, spec.n_train, derive_seed(spec.seed, 0));
  ds.val = make_split(spec, spec.n_val, derive_seed(spec.seed, 1));
  ds.test = make_split(spec, spec.n_test, derive_seed(spec.seed, 2));
  compute_normalization(ds);
  return ds;
}

bool is_synthetic_spec(const std::string& data_spec) {
  return data_spec.rfind("synthetic:", 0) == 0;
}

SyntheticSpec parse_synthetic_spec(const std::string& data_spec) {
  if (!is_synthetic_spec(data_spec)) fail(err::argument, "not a synthetic dataset spec");
  std::string rest = data_spec.substr(10);
  SyntheticSpec spec;

  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const std::size_t comma = rest.find(',', pos);
    parts.push_back(rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (parts.empty() || parts[0].empty()) {
    fail(err::config, "synthetic spec needs a kind, e.g. synthetic:oriented-shapes");
  }
  if (parts[0] == "blobs") {
    spec.kind = SyntheticKind::blobs;
  } else if (parts[0] == "oriented-shapes") {
    spec.kind = SyntheticKind::oriented_shapes;
  } else {
    fail(err::config, "unknown synthetic kind: " + parts[0]);
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::size_t eq = parts[i].find('=');
    if (eq == std::string::npos) fail(err::config, "synthetic spec expects key=value pairs");
    const std::string key = parts[i].substr(0, eq);
    const std::string val = parts[i].substr(eq + 1);
    char* end = nullptr;
    const long long v = std::strtoll(val.c_str(), &end, 10);
    if (end == val.c_str() || *end != '\0') {
      fail(err::config, "synthetic spec value for " + key + " is not an integer");
    }
    if (key == "dims")
      spec.dims = static_cast<int>(v);
    else if (key == "size")
      spec.size = static_cast<int>(v);
    else if (key == "classes")
      spec.num_classes = static_cast<int>(v);
    else if (key == "train")
      spec.n_train = v;
    else if (key == "val")
      spec.n_val = v;
    else if (key == "test")
      spec.n_test = v;
    else if (key == "seed")
      spec.seed = static_cast<std::uint64_t>(v);
    else
      fail(err::config, "unknown synthetic spec key: " + key);
  }
  return spec;
}

LabeledDataset open_dataset(const std::string& data_spec) {
  if (is_synthetic_spec(data_spec)) {
    return make_synthetic_dataset(parse_synthetic_spec(data_spec));
  }
  if (!file_exists(data_spec)) fail(err::dataset_not_found, "no such dataset: " + data_spec);
  return load_npz_dataset(data_spec);
}

}  // namespace sre
