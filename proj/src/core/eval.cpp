#include "core/eval.hpp"

#include <cctype>
#include <fstream>

#include <json.hpp>

namespace sre {

using ordered_json = nlohmann::ordered_json;

std::string report_jsonl(const TrainReport& report) {
  std::string out;
  for (const auto& e : report.epochs) {
    ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["train_acc"] = e.train_acc;
    j["val_acc"] = e.val_acc;
    j["lr"] = e.lr;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string protocol_result_json(const ProtocolResult& r) {
  ordered_json j;
  j["protocol"] = r.protocol;
  j["dims"] = r.dims;
  j["original_accuracy"] = r.original_accuracy;
  j["mean_accuracy"] = r.mean_accuracy;
  j["entries"] = ordered_json::array();
  for (const auto& e : r.entries) {
    j["entries"].push_back({{"transform", e.transform}, {"accuracy", e.accuracy}});
  }
  return j.dump();
}

std::string equiv_check_json(const EquivCheckResult& r) {
  ordered_json j;
  j["pass"] = r.pass;
  j["tolerance"] = r.tolerance;
  j["inputs"] = r.inputs;
  j["logit_invariance"] = ordered_json::array();
  for (const auto& e : r.logit_entries) {
    j["logit_invariance"].push_back({{"transform", e.transform},
                                     {"max_abs_logit_diff", e.max_abs_logit_diff},
                                     {"argmax_invariant", e.argmax_invariant}});
  }
  j["layer_equivariance_error"] = ordered_json::array();
  for (const auto& [name, v] : r.layer_errors) {
    j["layer_equivariance_error"].push_back({{"layer", name}, {"error", v}});
  }
  return j.dump();
}

// Binary PGM (P5, maxval 255), min-max normalized per panel.
void write_pgm(const std::string& path, const Tensor<double>& map) {
  if (map.ndim() != 2) fail(err::shape, "write_pgm: map must be [H, W]");
  const std::int64_t h = map.dim(0), w = map.dim(1);
  double mn = map[0], mx = map[0];
  for (std::int64_t i = 0; i < map.numel(); ++i) {
    mn = std::min(mn, map[i]);
    mx = std::max(mx, map[i]);
  }
  const double scale = mx > mn ? 255.0 / (mx - mn) : 0.0;

  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(h * w));
  for (std::int64_t i = 0; i < map.numel(); ++i) {
    const double v = (map[i] - mn) * scale;
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(v + 0.5)));
  }
  write_file(path, out);
}

Tensor<double> read_pgm(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") fail(err::bad_magic, "not a binary PGM: " + path);
  const std::int64_t w = std::stoll(token());
  const std::int64_t h = std::stoll(token());
  const std::int64_t maxval = std::stoll(token());
  if (maxval != 255) fail(err::bad_header, "PGM maxval must be 255");
  ++pos;  // single whitespace after maxval
  if (pos + static_cast<std::size_t>(h * w) > bytes.size()) {
    fail(err::length_mismatch, "PGM payload truncated");
  }
  Tensor<double> map(Shape{h, w});
  for (std::int64_t i = 0; i < h * w; ++i) {
    map[i] = static_cast<double>(static_cast<std::uint8_t>(bytes[pos + static_cast<std::size_t>(i)]));
  }
  return map;
}

void write_panel_sidecar(const FeaturePanel& panel) {
  ordered_json j;
  j["angle"] = panel.angle;
  j["raw_min"] = panel.raw_min;
  j["raw_max"] = panel.raw_max;
  j["raw_mean"] = panel.raw_mean;
  j["masked_mean_abs"] = panel.masked_mean_abs;
  j["pgm"] = panel.pgm_path;
  write_file(panel.json_path, j.dump() + "\n");
}

}  // namespace sre
