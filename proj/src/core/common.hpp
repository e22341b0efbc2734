#pragma once

#include <cmath>
#include <cstdint>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sre {

inline constexpr double kPi = 3.14159265358979323846;

// Typed error: `kind` is a stable machine-readable tag, `what()` the human text.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

[[noreturn]] inline void fail(const char* kind, const std::string& msg) {
  throw Error(kind, msg);
}

namespace err {
inline constexpr const char* shape = "shape-mismatch";
inline constexpr const char* kernel_size = "invalid-kernel-size";
inline constexpr const char* config = "invalid-config";
inline constexpr const char* argument = "invalid-argument";
inline constexpr const char* not_finite = "not-finite";
inline constexpr const char* empty_axis = "empty-axis";
inline constexpr const char* bad_magic = "bad-magic";
inline constexpr const char* unsupported_version = "unsupported-version";
inline constexpr const char* bad_header = "bad-header";
inline constexpr const char* unsupported_dtype = "unsupported-dtype";
inline constexpr const char* length_mismatch = "length-mismatch";
inline constexpr const char* zip_corrupt = "zip-corrupt";
inline constexpr const char* missing_key = "missing-key";
inline constexpr const char* dataset_not_found = "dataset-not-found";
inline constexpr const char* io = "io-error";
inline constexpr const char* ckpt_magic = "checkpoint-bad-magic";
inline constexpr const char* ckpt_version = "checkpoint-version-mismatch";
inline constexpr const char* ckpt_truncated = "checkpoint-truncated";
inline constexpr const char* ckpt_corrupt = "checkpoint-corrupt";
inline constexpr const char* config_mismatch = "config-mismatch";
inline constexpr const char* label_range = "label-out-of-range";
inline constexpr const char* non_binary_target = "non-binary-target";
inline constexpr const char* unsupported_protocol = "unsupported-protocol";
inline constexpr const char* schedule = "invalid-schedule-step";
}  // namespace err

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// uniform draw is hand-rolled so results do not depend on libstdc++'s
// distribution internals.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from (seed, stream index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Thread cap. Defaults to SRE_THREADS (or 1). Work is partitioned so results
// are bit-identical for every thread count: each worker owns a disjoint
// contiguous index range and any cross-range reduction happens afterwards in
// fixed order on the calling thread.
// ---------------------------------------------------------------------------

int thread_count();
void set_thread_count(int n);

template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  const int threads = std::min<std::int64_t>(thread_count(), n);
  if (threads <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  std::exception_ptr first_error;
  std::mutex* mtx = nullptr;  // exceptions funneled via static mutex below
  static std::mutex err_mtx;
  mtx = &err_mtx;
  auto run = [&](std::int64_t lo, std::int64_t hi) {
    try {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(*mtx);
      if (!first_error) first_error = std::current_exception();
    }
  };
  const std::int64_t chunk = (n + threads - 1) / threads;
  for (int t = 1; t < threads; ++t) {
    const std::int64_t lo = t * chunk;
    if (lo >= n) break;
    pool.emplace_back(run, lo, std::min<std::int64_t>(n, lo + chunk));
  }
  run(0, std::min<std::int64_t>(n, chunk));
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace sre
