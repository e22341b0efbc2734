#include "core/network.hpp"

#include <cstring>

#include <json.hpp>

namespace sre {

using nlohmann::json;

NetworkConfig default_network_config() {
  NetworkConfig cfg;
  cfg.dims = 2;
  cfg.in_channels = 1;
  cfg.stem_channels = 16;
  cfg.stages = {
      {16, 9, 1, false},
      {16, 9, 1, true},
      {32, 5, 1, true},
      {32, 5, 1, false},
  };
  cfg.num_classes = 10;
  return cfg;
}

void validate_config(const NetworkConfig& cfg) {
  if (cfg.dims != 2 && cfg.dims != 3) fail(err::config, "dims must be 2 or 3");
  if (cfg.in_channels < 1) fail(err::config, "in_channels must be >= 1");
  if (cfg.num_classes < 1) fail(err::config, "num_classes must be >= 1");
  if (!cfg.stages.empty() && cfg.stem_channels < 1) {
    fail(err::config, "stem_channels must be >= 1");
  }
  for (const auto& st : cfg.stages) {
    if (st.channels < 1) fail(err::config, "stage channels must be >= 1");
    if (st.blocks < 1) fail(err::config, "stage blocks must be >= 1");
    if (st.kernel_size < 1 || st.kernel_size % 2 == 0) {
      fail(err::config, "stage kernel sizes must be odd, got " + std::to_string(st.kernel_size));
    }
  }
}

namespace {

const int kDefaultKernels[4] = {9, 9, 5, 5};

ConvKind conv_kind_from_string(const std::string& s) {
  if (s == "sre") return ConvKind::sre;
  if (s == "standard") return ConvKind::standard;
  fail(err::config, "conv_kind must be \"sre\" or \"standard\", got \"" + s + "\"");
}

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "cross_entropy") return LossKind::cross_entropy;
  if (s == "bce") return LossKind::bce;
  fail(err::config, "loss_kind must be \"cross_entropy\" or \"bce\", got \"" + s + "\"");
}

template <typename V>
V get_or(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    fail(err::config, std::string("bad value for \"") + key + "\": " + e.what());
  }
}

}  // namespace

NetworkConfig network_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(err::config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(err::config, "config must be a JSON object");

  NetworkConfig cfg;
  cfg.dims = get_or(j, "dims", 2);
  cfg.in_channels = get_or(j, "in_channels", 1);
  cfg.stem_channels = get_or(j, "stem_channels", 16);
  cfg.num_classes = get_or(j, "num_classes", 10);
  cfg.residual = get_or(j, "residual", true);
  cfg.conv_kind = conv_kind_from_string(get_or<std::string>(j, "conv_kind", "sre"));
  cfg.loss_kind = loss_kind_from_string(get_or<std::string>(j, "loss_kind", "cross_entropy"));
  cfg.seed = get_or<std::uint64_t>(j, "seed", 0);

  if (j.contains("stages")) {
    if (!j["stages"].is_array()) fail(err::config, "stages must be an array");
    int i = 0;
    for (const auto& sj : j["stages"]) {
      if (!sj.is_object()) fail(err::config, "each stage must be an object");
      StageConfig st;
      st.channels = get_or(sj, "channels", 16);
      st.kernel_size = get_or(sj, "kernel_size", kDefaultKernels[std::min(i, 3)]);
      st.blocks = get_or(sj, "blocks", 1);
      st.downsample = get_or(sj, "downsample", false);
      cfg.stages.push_back(st);
      ++i;
    }
  } else {
    cfg.stages = default_network_config().stages;
  }
  validate_config(cfg);
  return cfg;
}

std::string network_config_to_json(const NetworkConfig& cfg) {
  json j;
  j["dims"] = cfg.dims;
  j["in_channels"] = cfg.in_channels;
  j["stem_channels"] = cfg.stem_channels;
  j["num_classes"] = cfg.num_classes;
  j["residual"] = cfg.residual;
  j["conv_kind"] = cfg.conv_kind == ConvKind::sre ? "sre" : "standard";
  j["loss_kind"] = cfg.loss_kind == LossKind::cross_entropy ? "cross_entropy" : "bce";
  j["seed"] = cfg.seed;
  j["stages"] = json::array();
  for (const auto& st : cfg.stages) {
    j["stages"].push_back({{"channels", st.channels},
                           {"kernel_size", st.kernel_size},
                           {"blocks", st.blocks},
                           {"downsample", st.downsample}});
  }
  return j.dump();
}

ParamBreakdown count_parameters(const NetworkConfig& cfg) {
  validate_config(cfg);
  ParamBreakdown b;
  auto add = [&](const std::string& name, std::int64_t n) {
    b.per_layer.emplace_back(name, n);
    b.total += n;
  };
  auto add_conv_block = [&](const std::string& prefix, int c_in, int c_out, int k) {
    const BandSpec spec = make_band_spec(k, cfg.dims);
    const ParamCount pc = kernel_param_count(c_in, c_out, spec, false);
    add(prefix + ".conv.weights", cfg.conv_kind == ConvKind::sre ? pc.sre : pc.standard);
    add(prefix + ".conv.bias", c_out);
    add(prefix + ".bn.gamma", c_out);
    add(prefix + ".bn.beta", c_out);
  };

  int prev = cfg.in_channels;
  if (!cfg.stages.empty()) {
    add_conv_block("stem", cfg.in_channels, cfg.stem_channels, cfg.stages[0].kernel_size);
    prev = cfg.stem_channels;
  }
  for (std::size_t si = 0; si < cfg.stages.size(); ++si) {
    const StageConfig& st = cfg.stages[si];
    if (st.downsample) {
      const std::string p = "down" + std::to_string(si);
      add(p + ".weights", static_cast<std::int64_t>(prev) * st.channels);
      add(p + ".bias", st.channels);
      prev = st.channels;
    }
    for (int bi = 0; bi < st.blocks; ++bi) {
      add_conv_block("stage" + std::to_string(si) + ".block" + std::to_string(bi), prev,
                     st.channels, st.kernel_size);
      prev = st.channels;
    }
  }
  add("head.weights", static_cast<std::int64_t>(cfg.num_classes) * prev);
  add("head.bias", cfg.num_classes);
  return b;
}

// ---------------------------------------------------------------------------
// Checkpoint container IO.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'R', 'E', 'C'};
constexpr std::uint8_t kVersion = 0x01;

void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

static_assert(sizeof(float) == 4, "float must be 32-bit");

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
  json header;
  try {
    header["config"] = json::parse(data.config_json);
  } catch (const json::exception& e) {
    fail(err::config, std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  header["tensors"] = json::array();
  std::int64_t offset = 0;
  for (const auto& t : data.tensors) {
    header["tensors"].push_back({{"name", t.name},
                                 {"dtype", "f32"},
                                 {"shape", t.shape},
                                 {"byte_offset", offset}});
    offset += static_cast<std::int64_t>(t.data.size()) * 4;
  }
  const std::string hj = header.dump();

  std::string out;
  out.reserve(9 + hj.size() + static_cast<std::size_t>(offset));
  out.append(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  put_u32_le(out, static_cast<std::uint32_t>(hj.size()));
  out += hj;
  for (const auto& t : data.tensors) {
    const std::size_t pos = out.size();
    out.resize(pos + t.data.size() * 4);
    std::memcpy(out.data() + pos, t.data.data(), t.data.size() * 4);
  }
  write_file(path, out);
}

CheckpointData read_checkpoint_file(const std::string& path) {
  if (!file_exists(path)) fail(err::io, "checkpoint not found: " + path);
  const std::string bytes = read_file(path);
  if (bytes.size() < 4) fail(err::ckpt_truncated, "checkpoint shorter than its magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(err::ckpt_magic, "not a checkpoint file (bad magic)");
  }
  if (bytes.size() < 9) fail(err::ckpt_truncated, "checkpoint header truncated");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (p[4] != kVersion) {
    fail(err::ckpt_version,
         "unsupported checkpoint version " + std::to_string(static_cast<int>(p[4])));
  }
  const std::uint64_t hlen = get_u32_le(p + 5);
  if (9 + hlen > bytes.size()) fail(err::ckpt_truncated, "checkpoint JSON header truncated");

  json header;
  try {
    header = json::parse(bytes.substr(9, hlen));
  } catch (const json::exception& e) {
    fail(err::ckpt_corrupt, std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("config") || !header.contains("tensors") ||
      !header["tensors"].is_array()) {
    fail(err::ckpt_corrupt, "checkpoint header missing config/tensors");
  }

  const std::size_t payload_begin = 9 + static_cast<std::size_t>(hlen);
  const std::size_t payload_size = bytes.size() - payload_begin;

  CheckpointData data;
  data.config_json = header["config"].dump();
  for (const auto& tj : header["tensors"]) {
    CheckpointTensor ct;
    try {
      ct.name = tj.at("name").get<std::string>();
      if (tj.at("dtype").get<std::string>() != "f32") {
        fail(err::ckpt_corrupt, "checkpoint tensor dtype must be f32");
      }
      ct.shape = tj.at("shape").get<Shape>();
      const std::int64_t off = tj.at("byte_offset").get<std::int64_t>();
      std::int64_t numel = 1;
      for (auto d : ct.shape) {
        if (d < 1 || numel > (std::int64_t{1} << 40)) {
          fail(err::ckpt_corrupt, "checkpoint tensor shape invalid");
        }
        numel *= d;
      }
      if (off < 0 || static_cast<std::size_t>(off) + static_cast<std::size_t>(numel) * 4 >
                         payload_size) {
        fail(err::ckpt_truncated, "checkpoint payload truncated for tensor " + ct.name);
      }
      ct.data.resize(static_cast<std::size_t>(numel));
      std::memcpy(ct.data.data(), bytes.data() + payload_begin + off,
                  static_cast<std::size_t>(numel) * 4);
    } catch (const json::exception& e) {
      fail(err::ckpt_corrupt, std::string("checkpoint tensor table malformed: ") + e.what());
    }
    data.tensors.push_back(std::move(ct));
  }
  return data;
}

}  // namespace sre
