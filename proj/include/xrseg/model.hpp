#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xrseg/ops.hpp"
#include "xrseg/tape.hpp"
#include "xrseg/tensor.hpp"

namespace xrseg {

enum class Arch { SegNet, ResUNet, UNet };

inline std::string arch_name(Arch a) {
  switch (a) {
    case Arch::SegNet: return "segnet";
    case Arch::ResUNet: return "resunet";
    case Arch::UNet: return "unet";
  }
  return "?";
}

inline Arch arch_from_name(const std::string& s) {
  if (s == "segnet") return Arch::SegNet;
  if (s == "resunet") return Arch::ResUNet;
  if (s == "unet") return Arch::UNet;
  fail("bad-arch", "unknown architecture '" + s + "'");
}

struct ModelSpec {
  Arch arch = Arch::SegNet;
  std::size_t in_channels = 1;
  std::size_t base_channels = 32;
  std::size_t depth = 4;
  std::size_t input_h = 128;
  std::size_t input_w = 128;
  std::uint64_t seed = 1234;

  bool same_structure(const ModelSpec& o) const {
    return arch == o.arch && in_channels == o.in_channels &&
           base_channels == o.base_channels && depth == o.depth &&
           input_h == o.input_h && input_w == o.input_w;
  }
};

inline ModelSpec default_spec(Arch a) {
  ModelSpec s;
  s.arch = a;
  if (a == Arch::SegNet) {
    s.base_channels = 32;
    s.depth = 4;
  } else {
    s.base_channels = 16;
    s.depth = 3;
  }
  return s;
}

enum class Mode { Train, Eval };

template <typename T = float>
struct Model {
  ModelSpec spec;
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, Tensor<T>> buffers;
};

template <typename T>
std::size_t param_count(const Model<T>& m) {
  std::size_t n = 0;
  for (const auto& [name, t] : m.params) n += t.numel();
  return n;
}

namespace detail {

inline void check_spec(const ModelSpec& s) {
  check(s.base_channels >= 1 && s.depth >= 1, "bad-spec",
        "model spec: base_channels and depth must be >= 1");
  const std::size_t div = (std::size_t)1 << s.depth;
  check(s.input_h % div == 0 && s.input_w % div == 0, "bad-spec",
        "model spec: input " + std::to_string(s.input_h) + "x" +
            std::to_string(s.input_w) + " not divisible by 2^depth = " +
            std::to_string(div));
}

// Registers parameters in a fixed traversal order so a single RNG stream
// yields reproducible weights for a given (spec, seed).
template <typename T>
struct Builder {
  Model<T>& m;
  std::mt19937 rng;

  Builder(Model<T>& model, std::uint64_t seed)
      : m(model), rng((std::uint32_t)seed) {}

  void conv(const std::string& prefix, std::size_t cin, std::size_t cout,
            std::size_t k) {
    Tensor<T> w = Tensor<T>::zeros({cout, cin, k, k});
    const double std_dev = std::sqrt(2.0 / (double)(cin * k * k));
    std::normal_distribution<double> dist(0.0, std_dev);
    for (auto& v : w.vals()) v = (T)dist(rng);
    w.set_requires_grad(true);
    Tensor<T> b = Tensor<T>::zeros({cout});
    b.set_requires_grad(true);
    m.params.emplace(prefix + ".weight", std::move(w));
    m.params.emplace(prefix + ".bias", std::move(b));
  }

  void bn(const std::string& prefix, std::size_t c) {
    Tensor<T> g = Tensor<T>::full({c}, T(1));
    g.set_requires_grad(true);
    Tensor<T> beta = Tensor<T>::zeros({c});
    beta.set_requires_grad(true);
    m.params.emplace(prefix + ".gamma", std::move(g));
    m.params.emplace(prefix + ".beta", std::move(beta));
    m.buffers.emplace(prefix + ".running_mean", Tensor<T>::zeros({c}));
    m.buffers.emplace(prefix + ".running_var", Tensor<T>::full({c}, T(1)));
  }

  void conv_bn(const std::string& prefix, std::size_t cin, std::size_t cout,
               std::size_t k) {
    conv(prefix + ".conv", cin, cout, k);
    bn(prefix + ".bn", cout);
  }

  // Double 3x3 conv unit; residual variants add a projection when the
  // shortcut cannot be the identity.
  void block(const std::string& prefix, std::size_t cin, std::size_t cout,
             int stride, bool residual) {
    conv(prefix + ".conv1", cin, cout, 3);
    bn(prefix + ".bn1", cout);
    conv(prefix + ".conv2", cout, cout, 3);
    bn(prefix + ".bn2", cout);
    if (residual && (stride != 1 || cin != cout)) {
      conv(prefix + ".proj", cin, cout, 1);
      bn(prefix + ".projbn", cout);
    }
  }
};

template <typename T>
struct Runner {
  Model<T>& m;
  bool training;
  Tape<T>* tape;

  Tensor<T>& p(const std::string& name) {
    auto it = m.params.find(name);
    check(it != m.params.end(), "missing-param", "no parameter '" + name + "'");
    return it->second;
  }
  Tensor<T>& buf(const std::string& name) {
    auto it = m.buffers.find(name);
    check(it != m.buffers.end(), "missing-buffer", "no buffer '" + name + "'");
    return it->second;
  }

  Tensor<T> conv(const std::string& prefix, const Tensor<T>& x, int stride,
                 int padding) {
    return conv2d(x, p(prefix + ".weight"), p(prefix + ".bias"), stride,
                  padding, tape);
  }
  Tensor<T> bn(const std::string& prefix, const Tensor<T>& x) {
    return batchnorm2d(x, p(prefix + ".gamma"), p(prefix + ".beta"),
                       buf(prefix + ".running_mean"),
                       buf(prefix + ".running_var"), training, tape);
  }
  Tensor<T> conv_bn_relu(const std::string& prefix, const Tensor<T>& x,
                         int stride = 1) {
    return relu(bn(prefix + ".bn",
                   conv(prefix + ".conv", x, stride, 1)),
                tape);
  }

  Tensor<T> block(const std::string& prefix, const Tensor<T>& x, int stride,
                  bool residual) {
    Tensor<T> h = conv(prefix + ".conv1", x, stride, 1);
    h = relu(bn(prefix + ".bn1", h), tape);
    h = conv(prefix + ".conv2", h, 1, 1);
    h = bn(prefix + ".bn2", h);
    if (!residual) return relu(h, tape);
    Tensor<T> sc = x;
    if (m.params.count(prefix + ".proj.weight")) {
      sc = conv(prefix + ".proj", x, stride, 0);
      sc = bn(prefix + ".projbn", sc);
    }
    return relu(add(h, sc, tape), tape);
  }
};

}  // namespace detail

// --- builders ---------------------------------------------------------------

template <typename T = float>
Model<T> build_segnet(const ModelSpec& spec) {
  check(spec.arch == Arch::SegNet, "bad-spec", "build_segnet: arch mismatch");
  detail::check_spec(spec);
  Model<T> m;
  m.spec = spec;
  detail::Builder<T> b(m, spec.seed);
  const std::size_t D = spec.depth, base = spec.base_channels;
  auto width = [&](std::size_t i) { return base << i; };
  for (std::size_t i = 0; i < D; ++i) {
    const std::size_t cin = i == 0 ? spec.in_channels : width(i - 1);
    const std::string pre = "enc" + std::to_string(i);
    b.conv_bn(pre + ".1", cin, width(i), 3);
    b.conv_bn(pre + ".2", width(i), width(i), 3);
  }
  for (std::size_t i = D; i-- > 0;) {
    const std::size_t cout = i == 0 ? base : width(i - 1);
    const std::string pre = "dec" + std::to_string(i);
    b.conv_bn(pre + ".1", width(i), width(i), 3);
    b.conv_bn(pre + ".2", width(i), cout, 3);
  }
  b.conv("head", base, 1, 1);
  return m;
}

template <typename T = float>
Model<T> build_resunet(const ModelSpec& spec) {
  check(spec.arch == Arch::ResUNet, "bad-spec", "build_resunet: arch mismatch");
  detail::check_spec(spec);
  Model<T> m;
  m.spec = spec;
  detail::Builder<T> b(m, spec.seed);
  const std::size_t D = spec.depth, base = spec.base_channels;
  auto width = [&](std::size_t i) { return base << i; };
  b.conv_bn("stem", spec.in_channels, base, 3);
  for (std::size_t i = 0; i < D; ++i)
    b.block("enc" + std::to_string(i), width(i), width(i + 1), 2, true);
  b.block("bridge", width(D), width(D), 1, true);
  for (std::size_t i = D; i-- > 0;)
    b.block("dec" + std::to_string(i), width(i + 1) + width(i), width(i), 1,
            true);
  b.conv("head", base, 1, 1);
  return m;
}

template <typename T = float>
Model<T> build_unet(const ModelSpec& spec) {
  check(spec.arch == Arch::UNet, "bad-spec", "build_unet: arch mismatch");
  detail::check_spec(spec);
  Model<T> m;
  m.spec = spec;
  detail::Builder<T> b(m, spec.seed);
  const std::size_t D = spec.depth, base = spec.base_channels;
  auto width = [&](std::size_t i) { return base << i; };
  b.conv_bn("stem", spec.in_channels, base, 3);
  for (std::size_t i = 0; i < D; ++i)
    b.block("enc" + std::to_string(i), width(i), width(i + 1), 2, false);
  b.block("bridge", width(D), width(D), 1, false);
  for (std::size_t i = D; i-- > 0;)
    b.block("dec" + std::to_string(i), width(i + 1) + width(i), width(i), 1,
            false);
  b.conv("head", base, 1, 1);
  return m;
}

template <typename T = float>
Model<T> build_model(const ModelSpec& spec) {
  switch (spec.arch) {
    case Arch::SegNet: return build_segnet<T>(spec);
    case Arch::ResUNet: return build_resunet<T>(spec);
    case Arch::UNet: return build_unet<T>(spec);
  }
  fail("bad-spec", "build_model: unknown arch");
}

// --- forward ------------------------------------------------------------------

template <typename T>
Tensor<T> forward(Model<T>& m, const Tensor<T>& x, Mode mode,
                  Tape<T>* tape = nullptr) {
  check_dims4(x, "forward input");
  check(x.dim(1) == m.spec.in_channels, "shape-mismatch",
        "forward: expected " + std::to_string(m.spec.in_channels) +
            " input channels, got " + std::to_string(x.dim(1)));
  check(x.dim(2) == m.spec.input_h && x.dim(3) == m.spec.input_w,
        "shape-mismatch",
        "forward: expected " + std::to_string(m.spec.input_h) + "x" +
            std::to_string(m.spec.input_w) + " input, got " +
            std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)));
  const bool training = mode == Mode::Train;
  detail::Runner<T> r{m, training, training ? tape : nullptr};
  const std::size_t D = m.spec.depth;
  Tensor<T> h = x;

  if (m.spec.arch == Arch::SegNet) {
    std::vector<IndexTensor> idx(D);
    std::vector<std::pair<std::size_t, std::size_t>> hw(D);
    for (std::size_t i = 0; i < D; ++i) {
      const std::string pre = "enc" + std::to_string(i);
      h = r.conv_bn_relu(pre + ".1", h);
      h = r.conv_bn_relu(pre + ".2", h);
      hw[i] = {h.dim(2), h.dim(3)};
      auto [pooled, pi] = maxpool2d_indices(h, r.tape);
      h = pooled;
      idx[i] = pi;
    }
    for (std::size_t i = D; i-- > 0;) {
      const std::string pre = "dec" + std::to_string(i);
      h = maxunpool2d(h, idx[i], hw[i], r.tape);
      h = r.conv_bn_relu(pre + ".1", h);
      h = r.conv_bn_relu(pre + ".2", h);
    }
  } else {
    const bool residual = m.spec.arch == Arch::ResUNet;
    std::vector<Tensor<T>> skips;
    skips.reserve(D);
    h = r.conv_bn_relu("stem", h);
    for (std::size_t i = 0; i < D; ++i) {
      skips.push_back(h);
      h = r.block("enc" + std::to_string(i), h, 2, residual);
    }
    h = r.block("bridge", h, 1, residual);
    for (std::size_t i = D; i-- > 0;) {
      h = upsample_nearest2x(h, r.tape);
      h = concat_channels(h, skips[i], r.tape);
      h = r.block("dec" + std::to_string(i), h, 1, residual);
    }
  }
  h = r.conv("head", h, 1, 0);
  return sigmoid(h, r.tape);
}

}  // namespace xrseg
