#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace sre {

enum class NpyDtype { u8, i64, f32 };

inline const char* npy_descr(NpyDtype d) {
  switch (d) {
    case NpyDtype::u8: return "|u1";
    case NpyDtype::i64: return "<i8";
    default: return "<f4";
  }
}

inline std::size_t npy_item_size(NpyDtype d) {
  switch (d) {
    case NpyDtype::u8: return 1;
    case NpyDtype::i64: return 8;
    default: return 4;
  }
}

// One parsed NPY array. Payload is row-major little-endian bytes;
// fortran-ordered inputs are transposed to row-major on load.
struct NpyArray {
  NpyDtype dtype = NpyDtype::u8;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> payload;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }
  const std::uint8_t* data() const { return payload.data(); }
};

// NPY format versions 1.0 and 2.0. Total: every byte stream yields either a
// parsed array or a typed Error; malformed input never crashes.
NpyArray read_npy(const std::uint8_t* bytes, std::size_t size);
NpyArray read_npy(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> write_npy(const NpyArray& a);

// NPZ container: a ZIP archive of .npy members (stored or deflated).
// Member order follows the archive's central directory.
struct NpzFile {
  std::vector<std::pair<std::string, NpyArray>> members;  // names without ".npy"

  const NpyArray* find(const std::string& name) const {
    for (const auto& [n, a] : members) {
      if (n == name) return &a;
    }
    return nullptr;
  }
};

NpzFile read_npz(const std::string& path);
NpzFile read_npz_bytes(const std::vector<std::uint8_t>& bytes);
void write_npz(const std::string& path,
               const std::vector<std::pair<std::string, NpyArray>>& members);

}  // namespace sre
