#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "xrseg/model.hpp"
#include "xrseg/tensor.hpp"

namespace xrseg {

// Optimizer moments, keyed by parameter name.
struct AdamState {
  std::map<std::string, Tensor<float>> m;
  std::map<std::string, Tensor<float>> v;
  std::uint64_t t = 0;
};

// Checkpoint file layout (all integers little-endian):
//   bytes 0-7   magic "XRSEGCKP"
//   u32         format version (1)
//   u32 + text  model spec as key=value lines
//   u32         tensor record count (params + buffers)
//   per record  u16 name length, name bytes, u8 rank, rank x u32 dims,
//               prod(dims) x f32 payload
//   u32         epoch index
//   u8          adam-state flag
//   if set      u32 step count, u32 record count, records as above with
//               names "adam.m.<param>" / "adam.v.<param>"
inline constexpr char kCkptMagic[8] = {'X', 'R', 'S', 'E', 'G', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCkptVersion = 1;

namespace detail {

struct FileCloser {
  std::FILE* fp;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back((char)(v & 0xff));
  out.push_back((char)(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

inline std::string spec_text(const ModelSpec& s) {
  std::string out;
  out += "arch=" + arch_name(s.arch) + "\n";
  out += "in_channels=" + std::to_string(s.in_channels) + "\n";
  out += "base_channels=" + std::to_string(s.base_channels) + "\n";
  out += "depth=" + std::to_string(s.depth) + "\n";
  out += "input_h=" + std::to_string(s.input_h) + "\n";
  out += "input_w=" + std::to_string(s.input_w) + "\n";
  out += "seed=" + std::to_string(s.seed) + "\n";
  return out;
}

inline ModelSpec parse_spec_text(const std::string& text) {
  ModelSpec s;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "arch")
        s.arch = arch_from_name(val);
      else if (key == "in_channels")
        s.in_channels = (std::size_t)std::stoull(val);
      else if (key == "base_channels")
        s.base_channels = (std::size_t)std::stoull(val);
      else if (key == "depth")
        s.depth = (std::size_t)std::stoull(val);
      else if (key == "input_h")
        s.input_h = (std::size_t)std::stoull(val);
      else if (key == "input_w")
        s.input_w = (std::size_t)std::stoull(val);
      else if (key == "seed")
        s.seed = std::stoull(val);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail("bad-checkpoint", "malformed spec line '" + line + "'");
    }
  }
  return s;
}

inline void append_record(std::string& out, const std::string& name,
                          const Tensor<float>& t) {
  check(name.size() <= 0xffff, "bad-arg", "tensor name too long");
  put_u16(out, (std::uint16_t)name.size());
  out += name;
  out.push_back((char)t.rank());
  for (std::size_t d = 0; d < t.rank(); ++d)
    put_u32(out, (std::uint32_t)t.dim(d));
  const std::size_t bytes = t.numel() * sizeof(float);
  const std::size_t at = out.size();
  out.resize(at + bytes);
  std::memcpy(out.data() + at, t.data(), bytes);
}

struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) {
    check(pos + n <= buf.size(), "truncated-payload",
          "checkpoint '" + path + "' is truncated");
  }
  std::uint8_t u8() {
    need(1);
    return (std::uint8_t)buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = (std::uint16_t)((std::uint8_t)buf[pos] |
                                      ((std::uint8_t)buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= (std::uint32_t)(std::uint8_t)buf[pos + i] << (8 * i);
    pos += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::pair<std::string, Tensor<float>> read_record(Cursor& c) {
  const std::uint16_t name_len = c.u16();
  const std::string name = c.bytes(name_len);
  const std::uint8_t rank = c.u8();
  check(rank >= 1 && rank <= 8, "bad-checkpoint",
        "tensor '" + name + "' has invalid rank");
  Shape shape(rank);
  for (std::uint8_t d = 0; d < rank; ++d) shape[d] = c.u32();
  const std::size_t n = shape_numel(shape);
  Tensor<float> t = Tensor<float>::zeros(shape);
  c.need(n * sizeof(float));
  std::memcpy(t.data(), c.buf.data() + c.pos, n * sizeof(float));
  c.pos += n * sizeof(float);
  return {name, std::move(t)};
}

}  // namespace detail

inline void save_checkpoint(const Model<float>& model, const AdamState* adam,
                            std::uint32_t epoch, const std::string& path) {
  std::string out(kCkptMagic, 8);
  detail::put_u32(out, kCkptVersion);
  const std::string spec = detail::spec_text(model.spec);
  detail::put_u32(out, (std::uint32_t)spec.size());
  out += spec;
  detail::put_u32(out,
                  (std::uint32_t)(model.params.size() + model.buffers.size()));
  for (const auto& [name, t] : model.params) detail::append_record(out, name, t);
  for (const auto& [name, t] : model.buffers) detail::append_record(out, name, t);
  detail::put_u32(out, epoch);
  out.push_back(adam ? (char)1 : (char)0);
  if (adam) {
    detail::put_u32(out, (std::uint32_t)adam->t);
    detail::put_u32(out, (std::uint32_t)(adam->m.size() + adam->v.size()));
    for (const auto& [name, t] : adam->m)
      detail::append_record(out, "adam.m." + name, t);
    for (const auto& [name, t] : adam->v)
      detail::append_record(out, "adam.v." + name, t);
  }

  const std::string tmp = path + ".tmp";
  std::FILE* fp = std::fopen(tmp.c_str(), "wb");
  check(fp != nullptr, "io-error", "cannot write '" + tmp + "'");
  const bool ok = std::fwrite(out.data(), 1, out.size(), fp) == out.size();
  std::fclose(fp);
  check(ok, "io-error", "short write to '" + tmp + "'");
  check(std::rename(tmp.c_str(), path.c_str()) == 0, "io-error",
        "cannot move '" + tmp + "' into place");
}

struct LoadedCheckpoint {
  Model<float> model;
  AdamState adam;
  bool has_adam = false;
  std::uint32_t epoch = 0;
};

// Rebuilds the model recorded in the file; `expect`, when given, must match
// the stored spec's structure.
inline LoadedCheckpoint load_checkpoint(const std::string& path,
                                        const ModelSpec* expect = nullptr) {
  std::string buf;
  {
    detail::FileCloser fc{std::fopen(path.c_str(), "rb")};
    check(fc.fp != nullptr, "io-error", "cannot open '" + path + "'");
    char chunk[1 << 16];
    std::size_t got;
    while ((got = std::fread(chunk, 1, sizeof(chunk), fc.fp)) > 0)
      buf.append(chunk, got);
  }
  check(buf.size() >= 8 && std::memcmp(buf.data(), kCkptMagic, 8) == 0,
        "bad-magic", "'" + path + "' is not a checkpoint file");
  detail::Cursor c{buf, 8, path};
  const std::uint32_t version = c.u32();
  check(version == kCkptVersion, "bad-version",
        "checkpoint '" + path + "' has unsupported version " +
            std::to_string(version));
  const std::uint32_t spec_len = c.u32();
  const ModelSpec spec = detail::parse_spec_text(c.bytes(spec_len));
  if (expect)
    check(expect->same_structure(spec), "spec-mismatch",
          "checkpoint '" + path + "' holds a " + arch_name(spec.arch) +
              " (base " + std::to_string(spec.base_channels) + ", depth " +
              std::to_string(spec.depth) + ") but a " +
              arch_name(expect->arch) + " was requested");

  LoadedCheckpoint out;
  out.model = build_model<float>(spec);
  const std::uint32_t n_records = c.u32();
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < n_records; ++i) {
    auto [name, t] = detail::read_record(c);
    auto pit = out.model.params.find(name);
    auto bit = out.model.buffers.find(name);
    Tensor<float>* dst = nullptr;
    if (pit != out.model.params.end())
      dst = &pit->second;
    else if (bit != out.model.buffers.end())
      dst = &bit->second;
    check(dst != nullptr, "unknown-tensor",
          "checkpoint '" + path + "' names tensor '" + name +
              "' absent from the " + arch_name(spec.arch) + " structure");
    check(dst->shape == t.shape, "bad-checkpoint",
          "tensor '" + name + "' shape " + shape_str(t.shape) +
              " != expected " + shape_str(dst->shape));
    std::copy(t.vals().begin(), t.vals().end(), dst->vals().begin());
    ++filled;
  }
  check(filled == out.model.params.size() + out.model.buffers.size(),
        "bad-checkpoint", "checkpoint '" + path + "' is missing tensors");

  out.epoch = c.u32();
  const bool has_adam = c.u8() != 0;
  out.has_adam = has_adam;
  if (has_adam) {
    out.adam.t = c.u32();
    const std::uint32_t n_adam = c.u32();
    for (std::uint32_t i = 0; i < n_adam; ++i) {
      auto [name, t] = detail::read_record(c);
      if (name.rfind("adam.m.", 0) == 0)
        out.adam.m.emplace(name.substr(7), std::move(t));
      else if (name.rfind("adam.v.", 0) == 0)
        out.adam.v.emplace(name.substr(7), std::move(t));
      else
        fail("bad-checkpoint",
             "unexpected optimizer record '" + name + "' in '" + path + "'");
    }
  }
  return out;
}

}  // namespace xrseg
