#include "core/npy.hpp"

#include <zlib.h>

#include <cstring>

namespace sre {

namespace {

constexpr std::uint8_t kNpyMagic[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kMaxHeaderLen = 1 << 20;
constexpr int kMaxDims = 32;
constexpr std::int64_t kMaxElements = std::int64_t{1} << 40;

// Minimal parser for the Python-literal header dict:
//   {'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }
// Key order is not assumed. Anything outside this shape is a bad-header
// error, never undefined behavior.
class HeaderParser {
 public:
  explicit HeaderParser(const std::string& text) : s_(text) {}

  void parse(std::string* descr, bool* fortran, std::vector<std::int64_t>* shape) {
    skip_ws();
    expect('{');
    bool have_descr = false, have_fortran = false, have_shape = false;
    while (true) {
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      const std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      if (key == "descr") {
        *descr = parse_string();
        have_descr = true;
      } else if (key == "fortran_order") {
        *fortran = parse_bool();
        have_fortran = true;
      } else if (key == "shape") {
        *shape = parse_shape();
        have_shape = true;
      } else {
        fail(err::bad_header, "unknown NPY header key: " + key);
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      if (peek() == '}') {
        ++pos_;
        break;
      }
      fail(err::bad_header, "malformed NPY header dict");
    }
    if (!have_descr || !have_fortran || !have_shape) {
      fail(err::bad_header, "NPY header missing descr/fortran_order/shape");
    }
    skip_ws();
    if (pos_ != s_.size()) fail(err::bad_header, "trailing bytes after NPY header dict");
  }

 private:
  char peek() const {
    if (pos_ >= s_.size()) fail(err::bad_header, "NPY header ended unexpectedly");
    return s_[pos_];
  }

  void expect(char c) {
    if (peek() != c) {
      fail(err::bad_header, std::string("NPY header: expected '") + c + "'");
    }
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < s_.size() &&
           (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) {
      ++pos_;
    }
  }

  std::string parse_string() {
    const char quote = peek();
    if (quote != '\'' && quote != '"') fail(err::bad_header, "NPY header: expected string");
    ++pos_;
    std::string out;
    while (peek() != quote) {
      out.push_back(s_[pos_++]);
      if (out.size() > 64) fail(err::bad_header, "NPY header: string too long");
    }
    ++pos_;
    return out;
  }

  bool parse_bool() {
    if (s_.compare(pos_, 4, "True") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "False") == 0) {
      pos_ += 5;
      return false;
    }
    fail(err::bad_header, "NPY header: expected True or False");
  }

  std::vector<std::int64_t> parse_shape() {
    expect('(');
    std::vector<std::int64_t> shape;
    skip_ws();
    if (peek() == ')') {
      ++pos_;
      return shape;  // 0-d scalar
    }
    while (true) {
      skip_ws();
      shape.push_back(parse_int());
      if (shape.size() > kMaxDims) fail(err::bad_header, "NPY header: too many dimensions");
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        skip_ws();
        if (peek() == ')') {
          ++pos_;
          break;
        }
        continue;
      }
      if (peek() == ')') {
        ++pos_;
        break;
      }
      fail(err::bad_header, "NPY header: malformed shape tuple");
    }
    return shape;
  }

  std::int64_t parse_int() {
    if (peek() < '0' || peek() > '9') fail(err::bad_header, "NPY header: expected integer");
    std::int64_t v = 0;
    while (pos_ < s_.size() && s_[pos_] >= '0' && s_[pos_] <= '9') {
      v = v * 10 + (s_[pos_] - '0');
      if (v > kMaxElements) fail(err::bad_header, "NPY header: dimension too large");
      ++pos_;
    }
    return v;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

NpyDtype dtype_from_descr(const std::string& d) {
  if (d == "|u1" || d == "u1" || d == "<u1" || d == ">u1") return NpyDtype::u8;
  if (d == "<i8") return NpyDtype::i64;
  if (d == "<f4") return NpyDtype::f32;
  fail(err::unsupported_dtype, "unsupported NPY dtype: " + d);
}

// Transposes a fortran-ordered payload into row-major.
std::vector<std::uint8_t> to_row_major(const std::vector<std::uint8_t>& src,
                                       const std::vector<std::int64_t>& shape,
                                       std::size_t item) {
  const int nd = static_cast<int>(shape.size());
  std::vector<std::uint8_t> dst(src.size());
  std::vector<std::int64_t> fstride(static_cast<std::size_t>(nd), 1);
  for (int i = 1; i < nd; ++i) {
    fstride[static_cast<std::size_t>(i)] =
        fstride[static_cast<std::size_t>(i - 1)] * shape[static_cast<std::size_t>(i - 1)];
  }
  std::vector<std::int64_t> idx(static_cast<std::size_t>(nd), 0);
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  for (std::int64_t c = 0; c < n; ++c) {
    std::int64_t f = 0;
    for (int i = 0; i < nd; ++i) {
      f += idx[static_cast<std::size_t>(i)] * fstride[static_cast<std::size_t>(i)];
    }
    std::memcpy(dst.data() + static_cast<std::size_t>(c) * item,
                src.data() + static_cast<std::size_t>(f) * item, item);
    for (int i = nd - 1; i >= 0; --i) {
      if (++idx[static_cast<std::size_t>(i)] < shape[static_cast<std::size_t>(i)]) break;
      idx[static_cast<std::size_t>(i)] = 0;
    }
  }
  return dst;
}

}  // namespace

NpyArray read_npy(const std::uint8_t* bytes, std::size_t size) {
  if (size < 6 || std::memcmp(bytes, kNpyMagic, 6) != 0) {
    fail(err::bad_magic, "not an NPY stream (bad magic)");
  }
  if (size < 8) fail(err::bad_header, "NPY stream truncated before version");
  const int major = bytes[6];
  const int minor = bytes[7];
  std::size_t header_len = 0;
  std::size_t header_off = 0;
  if (major == 1) {
    if (size < 10) fail(err::bad_header, "NPY stream truncated before header length");
    header_len = static_cast<std::size_t>(bytes[8]) | (static_cast<std::size_t>(bytes[9]) << 8);
    header_off = 10;
  } else if (major == 2) {
    if (size < 12) fail(err::bad_header, "NPY stream truncated before header length");
    header_len = static_cast<std::size_t>(bytes[8]) | (static_cast<std::size_t>(bytes[9]) << 8) |
                 (static_cast<std::size_t>(bytes[10]) << 16) |
                 (static_cast<std::size_t>(bytes[11]) << 24);
    header_off = 12;
  } else {
    fail(err::unsupported_version,
         "unsupported NPY version " + std::to_string(major) + "." + std::to_string(minor));
  }
  if (header_len > kMaxHeaderLen) fail(err::bad_header, "NPY header implausibly large");
  if (header_off + header_len > size) fail(err::bad_header, "NPY header truncated");

  const std::string htext(reinterpret_cast<const char*>(bytes) + header_off, header_len);
  std::string descr;
  bool fortran = false;
  std::vector<std::int64_t> shape;
  HeaderParser(htext).parse(&descr, &fortran, &shape);

  NpyArray a;
  a.dtype = dtype_from_descr(descr);
  a.shape = shape;
  std::int64_t numel = 1;
  for (auto d : shape) {
    if (d < 0) fail(err::bad_header, "NPY shape has negative extent");
    numel *= std::max<std::int64_t>(d, 1);
    if (numel > kMaxElements) fail(err::bad_header, "NPY element count too large");
  }
  numel = a.numel();

  const std::size_t item = npy_item_size(a.dtype);
  const std::size_t expect = static_cast<std::size_t>(numel) * item;
  const std::size_t have = size - header_off - header_len;
  if (have != expect) {
    fail(err::length_mismatch, "NPY payload is " + std::to_string(have) + " bytes, header says " +
                                   std::to_string(expect));
  }
  a.payload.assign(bytes + header_off + header_len, bytes + size);
  if (fortran && shape.size() > 1) {
    a.payload = to_row_major(a.payload, shape, item);
  }
  return a;
}

NpyArray read_npy(const std::vector<std::uint8_t>& bytes) {
  return read_npy(bytes.data(), bytes.size());
}

std::vector<std::uint8_t> write_npy(const NpyArray& a) {
  std::string header = "{'descr': '";
  header += npy_descr(a.dtype);
  header += "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < a.shape.size(); ++i) {
    header += std::to_string(a.shape[i]);
    if (a.shape.size() == 1 || i + 1 < a.shape.size()) header += ",";
    if (i + 1 < a.shape.size()) header += " ";
  }
  header += "), }";
  // Pad with spaces so that data starts at a multiple of 64 bytes.
  std::size_t total = 10 + header.size() + 1;
  const std::size_t padding = (64 - total % 64) % 64;
  header.append(padding, ' ');
  header.push_back('\n');

  std::vector<std::uint8_t> out;
  out.reserve(10 + header.size() + a.payload.size());
  out.insert(out.end(), kNpyMagic, kNpyMagic + 6);
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>((header.size() >> 8) & 0xff));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), a.payload.begin(), a.payload.end());
  return out;
}

// ---------------------------------------------------------------------------
// ZIP container.
// ---------------------------------------------------------------------------

namespace {

std::uint16_t rd16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t rd32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
void wr16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}
void wr32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::vector<std::uint8_t> inflate_raw(const std::uint8_t* src, std::size_t src_len,
                                      std::size_t expected_len) {
  std::vector<std::uint8_t> out(expected_len);
  z_stream zs;
  std::memset(&zs, 0, sizeof(zs));
  if (inflateInit2(&zs, -15) != Z_OK) fail(err::zip_corrupt, "zlib init failed");
  zs.next_in = const_cast<Bytef*>(src);
  zs.avail_in = static_cast<uInt>(src_len);
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected_len) {
    fail(err::zip_corrupt, "deflated ZIP member did not decompress to its declared size");
  }
  return out;
}

}  // namespace

NpzFile read_npz_bytes(const std::vector<std::uint8_t>& bytes) {
  const std::size_t size = bytes.size();
  if (size < 22) fail(err::zip_corrupt, "file too small to be a ZIP archive");

  // End-of-central-directory record: scan backwards over a possible comment.
  std::size_t eocd = std::string::npos;
  const std::size_t scan_limit = size >= 22 + 65535 ? size - 22 - 65535 : 0;
  for (std::size_t i = size - 22 + 1; i-- > scan_limit;) {
    if (bytes[i] == 0x50 && bytes[i + 1] == 0x4b && bytes[i + 2] == 0x05 && bytes[i + 3] == 0x06) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string::npos) fail(err::zip_corrupt, "ZIP end-of-central-directory not found");

  const std::uint16_t count = rd16(&bytes[eocd + 10]);
  const std::uint32_t cd_size = rd32(&bytes[eocd + 12]);
  const std::uint32_t cd_off = rd32(&bytes[eocd + 16]);
  if (count == 0xffff || cd_size == 0xffffffffu || cd_off == 0xffffffffu) {
    fail(err::zip_corrupt, "ZIP64 archives are not supported");
  }
  if (static_cast<std::size_t>(cd_off) + cd_size > size) {
    fail(err::zip_corrupt, "ZIP central directory out of bounds");
  }

  NpzFile npz;
  std::size_t p = cd_off;
  for (int i = 0; i < count; ++i) {
    if (p + 46 > size || rd32(&bytes[p]) != 0x02014b50) {
      fail(err::zip_corrupt, "ZIP central directory entry malformed");
    }
    const std::uint16_t method = rd16(&bytes[p + 10]);
    const std::uint32_t crc = rd32(&bytes[p + 16]);
    const std::uint32_t csize = rd32(&bytes[p + 20]);
    const std::uint32_t usize = rd32(&bytes[p + 24]);
    const std::uint16_t name_len = rd16(&bytes[p + 28]);
    const std::uint16_t extra_len = rd16(&bytes[p + 30]);
    const std::uint16_t comment_len = rd16(&bytes[p + 32]);
    const std::uint32_t local_off = rd32(&bytes[p + 42]);
    if (p + 46 + name_len > size) fail(err::zip_corrupt, "ZIP entry name out of bounds");
    std::string name(reinterpret_cast<const char*>(&bytes[p + 46]), name_len);
    p += 46 + static_cast<std::size_t>(name_len) + extra_len + comment_len;

    if (static_cast<std::size_t>(local_off) + 30 > size ||
        rd32(&bytes[local_off]) != 0x04034b50) {
      fail(err::zip_corrupt, "ZIP local header malformed for " + name);
    }
    const std::uint16_t lname = rd16(&bytes[local_off + 26]);
    const std::uint16_t lextra = rd16(&bytes[local_off + 28]);
    const std::size_t data_off = static_cast<std::size_t>(local_off) + 30 + lname + lextra;
    if (data_off + csize > size) fail(err::zip_corrupt, "ZIP member data out of bounds");

    std::vector<std::uint8_t> raw;
    if (method == 0) {
      if (csize != usize) fail(err::zip_corrupt, "stored ZIP member size mismatch");
      raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data_off),
                 bytes.begin() + static_cast<std::ptrdiff_t>(data_off + csize));
    } else if (method == 8) {
      raw = inflate_raw(&bytes[data_off], csize, usize);
    } else {
      fail(err::zip_corrupt, "unsupported ZIP compression method " + std::to_string(method));
    }
    const std::uint32_t actual_crc =
        static_cast<std::uint32_t>(crc32(0L, raw.data(), static_cast<uInt>(raw.size())));
    if (actual_crc != crc) fail(err::zip_corrupt, "ZIP member CRC mismatch for " + name);

    if (name.size() > 4 && name.compare(name.size() - 4, 4, ".npy") == 0) {
      name.resize(name.size() - 4);
    }
    npz.members.emplace_back(name, read_npy(raw));
  }
  return npz;
}

NpzFile read_npz(const std::string& path) {
  if (!file_exists(path)) fail(err::dataset_not_found, "no such file: " + path);
  const std::string s = read_file(path);
  std::vector<std::uint8_t> bytes(s.begin(), s.end());
  return read_npz_bytes(bytes);
}

void write_npz(const std::string& path,
               const std::vector<std::pair<std::string, NpyArray>>& members) {
  std::vector<std::uint8_t> out;
  struct CdEntry {
    std::string name;
    std::uint32_t crc, size, offset;
  };
  std::vector<CdEntry> cd;

  for (const auto& [name, arr] : members) {
    const std::vector<std::uint8_t> raw = write_npy(arr);
    const std::string fname = name + ".npy";
    CdEntry e;
    e.name = fname;
    e.crc = static_cast<std::uint32_t>(crc32(0L, raw.data(), static_cast<uInt>(raw.size())));
    e.size = static_cast<std::uint32_t>(raw.size());
    e.offset = static_cast<std::uint32_t>(out.size());
    cd.push_back(e);

    wr32(out, 0x04034b50);
    wr16(out, 20);  // version needed
    wr16(out, 0);   // flags
    wr16(out, 0);   // method: stored
    wr16(out, 0);   // mod time
    wr16(out, 0);   // mod date
    wr32(out, e.crc);
    wr32(out, e.size);
    wr32(out, e.size);
    wr16(out, static_cast<std::uint16_t>(fname.size()));
    wr16(out, 0);  // extra len
    out.insert(out.end(), fname.begin(), fname.end());
    out.insert(out.end(), raw.begin(), raw.end());
  }

  const std::uint32_t cd_off = static_cast<std::uint32_t>(out.size());
  for (const auto& e : cd) {
    wr32(out, 0x02014b50);
    wr16(out, 20);  // version made by
    wr16(out, 20);  // version needed
    wr16(out, 0);
    wr16(out, 0);  // method
    wr16(out, 0);
    wr16(out, 0);
    wr32(out, e.crc);
    wr32(out, e.size);
    wr32(out, e.size);
    wr16(out, static_cast<std::uint16_t>(e.name.size()));
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, 0);
    wr16(out, 0);
    wr32(out, 0);
    wr32(out, e.offset);
    out.insert(out.end(), e.name.begin(), e.name.end());
  }
  const std::uint32_t cd_size = static_cast<std::uint32_t>(out.size()) - cd_off;
  wr32(out, 0x06054b50);
  wr16(out, 0);
  wr16(out, 0);
  wr16(out, static_cast<std::uint16_t>(cd.size()));
  wr16(out, static_cast<std::uint16_t>(cd.size()));
  wr32(out, cd_size);
  wr32(out, cd_off);
  wr16(out, 0);

  write_file(path, std::string(out.begin(), out.end()));
}

}  // namespace sre
