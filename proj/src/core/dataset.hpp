#pragma once

#include "core/npy.hpp"
#include "core/tensor.hpp"

namespace sre {

// One split of a labeled image dataset. Images stay uint8 ([N,H,W,C] for 2D,
// [N,D,H,W] for 3D); conversion to normalized float happens at batch time.
struct DataSplit {
  std::vector<std::uint8_t> images;
  Shape image_shape;                  // includes leading N
  std::vector<std::int32_t> labels;   // class indices (multi-class)
  std::vector<std::uint8_t> targets;  // [N,K] binary (multi-label)
  std::int64_t n = 0;

  std::int64_t sample_cells() const {
    std::int64_t c = 1;
    for (std::size_t i = 1; i < image_shape.size(); ++i) c *= image_shape[i];
    return c;
  }
};

struct LabeledDataset {
  int dims = 2;
  int channels = 1;
  int num_classes = 2;
  bool multi_label = false;
  DataSplit train, val, test;

  // Per-channel normalization statistics of the training split, on the
  // [0,1] scale.
  std::vector<double> mean, stddev;
};

// Loads a MedMNIST-layout NPZ: keys {train,val,test}_{images,labels}.
LabeledDataset load_npz_dataset(const std::string& path);

// Computes train-split normalization statistics; called by the loaders.
void compute_normalization(LabeledDataset& ds);

enum class SyntheticKind { blobs, oriented_shapes };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::oriented_shapes;
  int dims = 2;
  int size = 32;  // divisible by 4
  int num_classes = 3;
  std::int64_t n_train = 300;
  std::int64_t n_val = 60;
  std::int64_t n_test = 60;
  std::uint64_t seed = 0;
};

// Deterministic desk-scale datasets.
//   blobs: classes separated by blob intensity level (trainability check).
//   oriented-shapes: disk / ring / cross drawn axis-aligned at a random
//   position; class identity is unchanged by rotation, so an equivariant
//   model generalizes to rotated copies without augmentation.
LabeledDataset make_synthetic_dataset(const SyntheticSpec& spec);

// "synthetic:<kind>[,key=value...]" with keys dims,size,classes,train,val,
// test,seed. Anything else is treated as an NPZ path.
bool is_synthetic_spec(const std::string& data_spec);
SyntheticSpec parse_synthetic_spec(const std::string& data_spec);
LabeledDataset open_dataset(const std::string& data_spec);

// Channel-first [0,1]-scaled batch: [n, C, H, W] / [n, C, D, H, W].
// 2D sources are [H,W,C] interleaved and get planarized here.
template <typename T>
Tensor<T> batch01(const LabeledDataset& ds, const DataSplit& split,
                  const std::vector<std::int64_t>& indices) {
  const std::int64_t cells = split.sample_cells();
  const int c = ds.channels;
  const std::int64_t spatial = cells / c;

  Shape shape{static_cast<std::int64_t>(indices.size()), c};
  shape.push_back(split.image_shape[1]);
  shape.push_back(split.image_shape[2]);
  if (ds.dims == 3) shape.push_back(split.image_shape[3]);
  Tensor<T> out(shape);

  for (std::size_t bi = 0; bi < indices.size(); ++bi) {
    const std::int64_t s = indices[bi];
    if (s < 0 || s >= split.n) fail(err::argument, "batch index out of range");
    const std::uint8_t* img = split.images.data() + s * cells;
    T* dst = out.data() + static_cast<std::int64_t>(bi) * cells;
    if (ds.dims == 2) {
      for (int ch = 0; ch < c; ++ch) {
        T* plane = dst + ch * spatial;
        for (std::int64_t p = 0; p < spatial; ++p) {
          plane[p] = static_cast<T>(img[p * c + ch]) * static_cast<T>(1.0 / 255.0);
        }
      }
    } else {
      for (std::int64_t p = 0; p < spatial; ++p) {
        dst[p] = static_cast<T>(img[p]) * static_cast<T>(1.0 / 255.0);
      }
    }
  }
  return out;
}

// Per-channel standardization by the train split's statistics.
template <typename T>
Tensor<T> standardize(const LabeledDataset& ds, const Tensor<T>& x01) {
  Tensor<T> out(x01.shape());
  const std::int64_t n = x01.dim(0);
  const std::int64_t c = x01.dim(1);
  std::int64_t spatial = 1;
  for (int a = 2; a < x01.ndim(); ++a) spatial *= x01.dim(a);
  for (std::int64_t s = 0; s < n; ++s) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T mean = static_cast<T>(ds.mean[static_cast<std::size_t>(ch)]);
      const T inv = static_cast<T>(1.0 / ds.stddev[static_cast<std::size_t>(ch)]);
      const T* src = x01.data() + (s * c + ch) * spatial;
      T* dst = out.data() + (s * c + ch) * spatial;
      for (std::int64_t p = 0; p < spatial; ++p) dst[p] = (src[p] - mean) * inv;
    }
  }
  return out;
}

// Normalized channel-first batch, ready for the network.
template <typename T>
Tensor<T> make_batch(const LabeledDataset& ds, const DataSplit& split,
                     const std::vector<std::int64_t>& indices) {
  return standardize(ds, batch01<T>(ds, split, indices));
}

}  // namespace sre
