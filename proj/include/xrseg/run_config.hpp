#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "xrseg/model.hpp"
#include "xrseg/train.hpp"

namespace xrseg {

// --- flat key=value files -----------------------------------------------------

inline std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                        const std::string& where) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0, lineno = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t h = line.find('#');
    if (h != std::string::npos) line = line.substr(0, h);
    std::size_t a = line.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    std::size_t b = line.find_last_not_of(" \t");
    line = line.substr(a, b - a + 1);
    const std::size_t eq = line.find('=');
    check(eq != std::string::npos && eq > 0, "bad-config",
          where + ":" + std::to_string(lineno) + ": expected key=value, got '" +
              line + "'");
    auto trim = [](std::string s) {
      const std::size_t x = s.find_first_not_of(" \t");
      if (x == std::string::npos) return std::string();
      const std::size_t y = s.find_last_not_of(" \t");
      return s.substr(x, y - x + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  check(fp != nullptr, "io-error", "cannot open '" + path + "'");
  std::string out;
  char chunk[1 << 14];
  std::size_t got;
  while ((got = std::fread(chunk, 1, sizeof(chunk), fp)) > 0)
    out.append(chunk, got);
  std::fclose(fp);
  return out;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  return parse_kv_text(read_text_file(path), path);
}

// --- resolved run configuration --------------------------------------------------

struct RunConfig {
  ModelSpec spec = default_spec(Arch::SegNet);
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 77;
  std::size_t curve_points = 100;
};

namespace detail {

inline std::uint64_t to_u64(const std::string& key, const std::string& val) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(val, &used);
    check(used == val.size(), "bad-config", "");
    return v;
  } catch (...) {
    fail("bad-config", "key '" + key + "': '" + val + "' is not an integer");
  }
}

inline double to_f64(const std::string& key, const std::string& val) {
  try {
    std::size_t used = 0;
    const double v = std::stod(val, &used);
    check(used == val.size(), "bad-config", "");
    return v;
  } catch (...) {
    fail("bad-config", "key '" + key + "': '" + val + "' is not a number");
  }
}

}  // namespace detail

inline void apply_kv(RunConfig& rc, const std::string& key,
                     const std::string& val) {
  using detail::to_f64;
  using detail::to_u64;
  if (key == "arch") {
    // switches width/depth to the new arch's defaults; apply arch before
    // explicit base_channels/depth keys (see apply_kv_map)
    const ModelSpec keep = rc.spec;
    rc.spec = default_spec(arch_from_name(val));
    rc.spec.in_channels = keep.in_channels;
    rc.spec.input_h = keep.input_h;
    rc.spec.input_w = keep.input_w;
    rc.spec.seed = keep.seed;
  } else if (key == "in_channels")
    rc.spec.in_channels = (std::size_t)to_u64(key, val);
  else if (key == "base_channels")
    rc.spec.base_channels = (std::size_t)to_u64(key, val);
  else if (key == "depth")
    rc.spec.depth = (std::size_t)to_u64(key, val);
  else if (key == "input_h")
    rc.spec.input_h = (std::size_t)to_u64(key, val);
  else if (key == "input_w")
    rc.spec.input_w = (std::size_t)to_u64(key, val);
  else if (key == "size") {
    rc.spec.input_h = (std::size_t)to_u64(key, val);
    rc.spec.input_w = rc.spec.input_h;
  } else if (key == "model_seed")
    rc.spec.seed = to_u64(key, val);
  else if (key == "batch_size")
    rc.train.batch_size = (std::size_t)to_u64(key, val);
  else if (key == "epochs")
    rc.train.epochs = (std::size_t)to_u64(key, val);
  else if (key == "lr")
    rc.train.lr = to_f64(key, val);
  else if (key == "beta1")
    rc.train.beta1 = to_f64(key, val);
  else if (key == "beta2")
    rc.train.beta2 = to_f64(key, val);
  else if (key == "adam_eps")
    rc.train.adam_eps = to_f64(key, val);
  else if (key == "loss")
    rc.train.loss_kind = loss_from_name(val);
  else if (key == "threshold")
    rc.train.threshold = to_f64(key, val);
  else if (key == "seed")
    rc.train.seed = to_u64(key, val);
  else if (key == "checkpoint_every")
    rc.train.checkpoint_every = (std::size_t)to_u64(key, val);
  else if (key == "data_dir")
    rc.data_dir = val;
  else if (key == "out_dir")
    rc.out_dir = val;
  else if (key == "split_fraction")
    rc.split_fraction = to_f64(key, val);
  else if (key == "split_seed")
    rc.split_seed = to_u64(key, val);
  else if (key == "curve_points")
    rc.curve_points = (std::size_t)to_u64(key, val);
  else
    fail("bad-config", "unknown config key '" + key + "'");
}

inline void apply_kv_map(RunConfig& rc,
                         const std::map<std::string, std::string>& kv) {
  // arch first so its defaults don't clobber explicit width/depth keys
  auto it = kv.find("arch");
  if (it != kv.end()) apply_kv(rc, "arch", it->second);
  for (const auto& [k, v] : kv)
    if (k != "arch") apply_kv(rc, k, v);
}

// Resolved snapshot written into the output directory for provenance.
inline std::string serialize_config(const RunConfig& rc) {
  std::string out;
  out += "arch=" + arch_name(rc.spec.arch) + "\n";
  out += "in_channels=" + std::to_string(rc.spec.in_channels) + "\n";
  out += "base_channels=" + std::to_string(rc.spec.base_channels) + "\n";
  out += "depth=" + std::to_string(rc.spec.depth) + "\n";
  out += "input_h=" + std::to_string(rc.spec.input_h) + "\n";
  out += "input_w=" + std::to_string(rc.spec.input_w) + "\n";
  out += "model_seed=" + std::to_string(rc.spec.seed) + "\n";
  out += "batch_size=" + std::to_string(rc.train.batch_size) + "\n";
  out += "epochs=" + std::to_string(rc.train.epochs) + "\n";
  out += "lr=" + fmt_f(rc.train.lr, 9) + "\n";
  out += "beta1=" + fmt_f(rc.train.beta1, 6) + "\n";
  out += "beta2=" + fmt_f(rc.train.beta2, 6) + "\n";
  out += "adam_eps=" + fmt_f(rc.train.adam_eps, 12) + "\n";
  out += "loss=" + loss_name(rc.train.loss_kind) + "\n";
  out += "threshold=" + fmt_f(rc.train.threshold, 6) + "\n";
  out += "seed=" + std::to_string(rc.train.seed) + "\n";
  out += "checkpoint_every=" + std::to_string(rc.train.checkpoint_every) + "\n";
  out += "data_dir=" + rc.data_dir + "\n";
  out += "out_dir=" + rc.out_dir + "\n";
  out += "split_fraction=" + fmt_f(rc.split_fraction, 6) + "\n";
  out += "split_seed=" + std::to_string(rc.split_seed) + "\n";
  out += "curve_points=" + std::to_string(rc.curve_points) + "\n";
  return out;
}

// --- minimal CSV reader (for per-image metric files) ---------------------------------

inline std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(start));
        break;
      }
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

}  // namespace xrseg
