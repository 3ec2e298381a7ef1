#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <type_traits>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xrseg/kernels.hpp"
#include "xrseg/tape.hpp"
#include "xrseg/tensor.hpp"

namespace xrseg {

namespace detail {

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> ts) {
  for (auto* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

template <typename T>
void maybe_record(Tape<T>* tape, OpKind kind,
                  std::type_identity_t<std::vector<Tensor<T>>> inputs,
                  Tensor<T>& out, std::type_identity_t<NodeCtx<T>> ctx) {
  bool needs = false;
  for (const auto& in : inputs)
    if (in.requires_grad()) needs = true;
  if (needs) out.set_requires_grad(true);
  if (tape && needs)
    tape->record(Node<T>{kind, std::move(inputs), out, std::move(ctx)});
}

}  // namespace detail

// --- conv2d -----------------------------------------------------------

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, int stride,
                                int padding) {
  return (in + 2 * (std::size_t)padding - k) / (std::size_t)stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding,
                 Tape<T>* tape = nullptr) {
  check_dims4(input, "conv2d input");
  check_dims4(weight, "conv2d weight");
  check(stride >= 1 && padding >= 0, "bad-arg", "conv2d: stride must be >= 1 and padding >= 0");
  const std::size_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t Cout = weight.dim(0), k = weight.dim(2);
  check(weight.dim(2) == weight.dim(3), "shape-mismatch",
        "conv2d: non-square kernel " + shape_str(weight.shape));
  check(weight.dim(1) == Cin, "shape-mismatch",
        "conv2d: input channels " + std::to_string(Cin) +
            " != weight channels " + std::to_string(weight.dim(1)) +
            " (input " + shape_str(input.shape) + ", weight " +
            shape_str(weight.shape) + ")");
  check(bias.rank() == 1 && bias.dim(0) == Cout, "shape-mismatch",
        "conv2d: bias " + shape_str(bias.shape) + " != [" +
            std::to_string(Cout) + "]");
  check(H + 2 * (std::size_t)padding >= k && W + 2 * (std::size_t)padding >= k,
        "bad-arg", "conv2d: kernel " + std::to_string(k) +
                       " larger than padded input " + shape_str(input.shape));
  const std::size_t Ho = conv_out_dim(H, k, stride, padding);
  const std::size_t Wo = conv_out_dim(W, k, stride, padding);
  check(Ho >= 1 && Wo >= 1, "bad-arg", "conv2d: empty output");

  Tensor<T> out = Tensor<T>::zeros({B, Cout, Ho, Wo});
  const std::size_t K = Cin * k * k;
  const std::size_t out_plane = Ho * Wo;
  const T* x = input.data();
  const T* w = weight.data();
  const T* bvals = bias.data();
  T* y = out.data();

  parallel_for(B, [&](std::size_t b0, std::size_t b1) {
    std::vector<T> col(K * out_plane);
    for (std::size_t b = b0; b < b1; ++b) {
      im2col(x + b * Cin * H * W, Cin, H, W, k, stride, padding, Ho, Wo,
             col.data());
      T* yb = y + b * Cout * out_plane;
      gemm(Cout, out_plane, K, T(1), w, col.data(), T(0), yb);
      for (std::size_t o = 0; o < Cout; ++o) {
        const T bv = bvals[o];
        T* row = yb + o * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) row[i] += bv;
      }
    }
  });
  XRSEG_DEBUG_FINITE(out, "conv2d");
  detail::maybe_record(tape, OpKind::Conv2d, {input, weight, bias}, out,
                       Conv2dCtx{stride, padding});
  return out;
}

// --- max pooling (2x2, stride 2) with argmax indices --------------------

template <typename T>
std::pair<Tensor<T>, IndexTensor> maxpool2d_indices(const Tensor<T>& input,
                                                    Tape<T>* tape = nullptr) {
  check_dims4(input, "maxpool2d input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  check(H % 2 == 0 && W % 2 == 0, "bad-arg",
        "maxpool2d: H and W must be even, got " + shape_str(input.shape));
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> out = Tensor<T>::zeros({B, C, Ho, Wo});
  IndexTensor idx = IndexTensor::zeros({B, C, Ho, Wo});
  const T* x = input.data();
  T* y = out.data();
  std::int32_t* ix = idx.data();

  parallel_for(B * C, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t pc = p0; pc < p1; ++pc) {
      const T* plane = x + pc * H * W;
      T* yplane = y + pc * Ho * Wo;
      std::int32_t* iplane = ix + pc * Ho * Wo;
      for (std::size_t oy = 0; oy < Ho; ++oy) {
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          // ties keep the smallest flat index (strict greater-than)
          std::size_t best = (2 * oy) * W + 2 * ox;
          T bestv = plane[best];
          const std::array<std::size_t, 3> rest = {
              (2 * oy) * W + 2 * ox + 1, (2 * oy + 1) * W + 2 * ox,
              (2 * oy + 1) * W + 2 * ox + 1};
          for (std::size_t cand : rest) {
            if (plane[cand] > bestv) {
              bestv = plane[cand];
              best = cand;
            }
          }
          yplane[oy * Wo + ox] = bestv;
          iplane[oy * Wo + ox] = (std::int32_t)best;
        }
      }
    }
  });
  XRSEG_DEBUG_FINITE(out, "maxpool2d");
  detail::maybe_record(tape, OpKind::MaxPool2d, {input}, out,
                       MaxPool2dCtx{idx});
  return {out, idx};
}

// --- max unpooling (scatter into zeros by saved indices) ----------------

template <typename T>
Tensor<T> maxunpool2d(const Tensor<T>& input, const IndexTensor& indices,
                      std::pair<std::size_t, std::size_t> out_hw,
                      Tape<T>* tape = nullptr) {
  check_dims4(input, "maxunpool2d input");
  check(indices.shape == input.shape, "shape-mismatch",
        "maxunpool2d: indices " + shape_str(indices.shape) + " != input " +
            shape_str(input.shape));
  const std::size_t B = input.dim(0), C = input.dim(1), h = input.dim(2),
                    w = input.dim(3);
  const std::size_t H = out_hw.first, W = out_hw.second;
  const std::size_t out_plane = H * W;
  for (std::int32_t v : indices.vals())
    check(v >= 0 && (std::size_t)v < out_plane, "index-out-of-bounds",
          "maxunpool2d: index " + std::to_string(v) + " outside " +
              std::to_string(out_plane) + "-element plane");

  Tensor<T> out = Tensor<T>::zeros({B, C, H, W});
  const T* x = input.data();
  const std::int32_t* ix = indices.data();
  T* y = out.data();
  parallel_for(B * C, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t pc = p0; pc < p1; ++pc) {
      const std::size_t in_plane = h * w;
      for (std::size_t i = 0; i < in_plane; ++i)
        y[pc * out_plane + (std::size_t)ix[pc * in_plane + i]] =
            x[pc * in_plane + i];
    }
  });
  XRSEG_DEBUG_FINITE(out, "maxunpool2d");
  detail::maybe_record(tape, OpKind::MaxUnpool2d, {input}, out,
                       MaxUnpool2dCtx{indices, H, W});
  return out;
}

// --- batch norm ---------------------------------------------------------

constexpr double kBatchNormEps = 1e-5;
constexpr double kBatchNormMomentum = 0.1;

// Train mode normalizes by batch statistics (biased variance) and folds the
// batch stats into the running buffers; eval mode reads the buffers.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma,
                      const Tensor<T>& beta, Tensor<T>& running_mean,
                      Tensor<T>& running_var, bool training,
                      Tape<T>* tape = nullptr) {
  check_dims4(input, "batchnorm2d input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  check(gamma.rank() == 1 && gamma.dim(0) == C && beta.rank() == 1 &&
            beta.dim(0) == C,
        "shape-mismatch", "batchnorm2d: affine params must be [C]");
  check(running_mean.dim(0) == C && running_var.dim(0) == C, "shape-mismatch",
        "batchnorm2d: running stats must be [C]");
  const std::size_t N = B * H * W;
  if (training)
    check(N >= 2, "bad-arg", "batchnorm2d: needs B*H*W >= 2 in train mode");

  Tensor<T> out = Tensor<T>::zeros(input.shape);
  const T* x = input.data();
  T* y = out.data();
  const std::size_t plane = H * W;
  std::vector<T> mean(C), inv_std(C);

  for (std::size_t c = 0; c < C; ++c) {
    double m, v;
    if (training) {
      double sum = 0, sq = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* pl = x + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum += pl[i];
          sq += (double)pl[i] * pl[i];
        }
      }
      m = sum / (double)N;
      v = sq / (double)N - m * m;
      if (v < 0) v = 0;  // numeric floor
      running_mean.vals()[c] =
          (T)((1.0 - kBatchNormMomentum) * running_mean.vals()[c] +
              kBatchNormMomentum * m);
      running_var.vals()[c] =
          (T)((1.0 - kBatchNormMomentum) * running_var.vals()[c] +
              kBatchNormMomentum * v);
    } else {
      m = running_mean.vals()[c];
      v = running_var.vals()[c];
    }
    mean[c] = (T)m;
    inv_std[c] = (T)(1.0 / std::sqrt(v + kBatchNormEps));
  }

  parallel_for(B * C, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t pc = p0; pc < p1; ++pc) {
      const std::size_t c = pc % C;
      const T mc = mean[c], sc = inv_std[c];
      const T g = gamma.data()[c], bt = beta.data()[c];
      const T* pl = x + pc * plane;
      T* po = y + pc * plane;
      for (std::size_t i = 0; i < plane; ++i)
        po[i] = (pl[i] - mc) * sc * g + bt;
    }
  });
  XRSEG_DEBUG_FINITE(out, "batchnorm2d");
  if (training)
    detail::maybe_record(tape, OpKind::BatchNorm2d, {input, gamma, beta}, out,
                         BatchNorm2dCtx<T>{std::move(mean), std::move(inv_std)});
  return out;
}

// --- activations ----------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& input, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(input.shape);
  const T* x = input.data();
  T* y = out.data();
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  detail::maybe_record(tape, OpKind::Relu, {input}, out, EmptyCtx{});
  return out;
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input, Tape<T>* tape = nullptr) {
  Tensor<T> out = Tensor<T>::zeros(input.shape);
  const T* x = input.data();
  T* y = out.data();
  const std::size_t n = input.numel();
  for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_scalar(x[i]);
  XRSEG_DEBUG_FINITE(out, "sigmoid");
  detail::maybe_record(tape, OpKind::Sigmoid, {input}, out, EmptyCtx{});
  return out;
}

// --- nearest-neighbor 2x upsampling ---------------------------------------

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& input, Tape<T>* tape = nullptr) {
  check_dims4(input, "upsample_nearest2x input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  Tensor<T> out = Tensor<T>::zeros({B, C, 2 * H, 2 * W});
  const T* x = input.data();
  T* y = out.data();
  parallel_for(B * C, [&](std::size_t p0, std::size_t p1) {
    for (std::size_t pc = p0; pc < p1; ++pc) {
      const T* pl = x + pc * H * W;
      T* po = y + pc * 4 * H * W;
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t cidx = 0; cidx < W; ++cidx) {
          const T v = pl[r * W + cidx];
          T* base = po + (2 * r) * (2 * W) + 2 * cidx;
          base[0] = v;
          base[1] = v;
          base[2 * W] = v;
          base[2 * W + 1] = v;
        }
      }
    }
  });
  detail::maybe_record(tape, OpKind::UpsampleNearest2x, {input}, out,
                       EmptyCtx{});
  return out;
}

// --- channel concatenation --------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b,
                          Tape<T>* tape = nullptr) {
  check_dims4(a, "concat_channels a");
  check_dims4(b, "concat_channels b");
  check(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "shape-mismatch", "concat_channels: " + shape_str(a.shape) + " vs " +
                              shape_str(b.shape));
  const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), H = a.dim(2),
                    W = a.dim(3);
  Tensor<T> out = Tensor<T>::zeros({B, Ca + Cb, H, W});
  const std::size_t plane = H * W;
  for (std::size_t bi = 0; bi < B; ++bi) {
    std::copy_n(a.data() + bi * Ca * plane, Ca * plane,
                out.data() + bi * (Ca + Cb) * plane);
    std::copy_n(b.data() + bi * Cb * plane, Cb * plane,
                out.data() + bi * (Ca + Cb) * plane + Ca * plane);
  }
  detail::maybe_record(tape, OpKind::ConcatChannels, {a, b}, out,
                       ConcatCtx{Ca, Cb});
  return out;
}

// Inverse view of concat_channels, handy for tests and slicing.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& t, std::size_t c0, std::size_t c1) {
  check_dims4(t, "slice_channels input");
  check(c0 < c1 && c1 <= t.dim(1), "bad-arg", "slice_channels: bad range");
  const std::size_t B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
  Tensor<T> out = Tensor<T>::zeros({B, c1 - c0, H, W});
  const std::size_t plane = H * W;
  for (std::size_t b = 0; b < B; ++b)
    std::copy_n(t.data() + (b * C + c0) * plane, (c1 - c0) * plane,
                out.data() + b * (c1 - c0) * plane);
  return out;
}

// --- elementwise add (residual shortcuts) -----------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr) {
  check(a.shape == b.shape, "shape-mismatch",
        "add: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  detail::maybe_record(tape, OpKind::Add, {a, b}, out, EmptyCtx{});
  return out;
}

// --- reductions to scalar ----------------------------------------------------

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights,
                       Tape<T>* tape = nullptr) {
  check(weights.size() == x.numel(), "shape-mismatch",
        "weighted_sum: weight count != numel");
  double acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i)
    acc += (double)x.data()[i] * (double)weights[i];
  Tensor<T> out = Tensor<T>::scalar((T)acc);
  detail::maybe_record(tape, OpKind::WeightedSum, {x}, out,
                       WeightedSumCtx<T>{std::move(weights)});
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  return weighted_sum(x, std::vector<T>(x.numel(), T(1)), tape);
}

// --- reverse sweep ------------------------------------------------------------

// Populates persistent grads on every requires_grad leaf reachable from
// `loss`. Intermediate grad buffers are transient per call, so repeated
// backward passes accumulate (and exactly double without zeroing).
template <typename T>
void backward(Tape<T>& tape, const Tensor<T>& loss) {
  check(loss.numel() == 1, "loss-not-scalar",
        "backward: loss must be scalar, got " + shape_str(loss.shape));

  std::unordered_set<std::int64_t> produced;
  for (const auto& node : tape.nodes()) produced.insert(node.output.id);

  std::unordered_map<std::int64_t, std::vector<T>> temp;
  temp[loss.id] = {T(1)};

  auto accum = [&](Tensor<T>& t, const std::vector<T>& g) {
    if (produced.count(t.id)) {
      auto [it, fresh] = temp.try_emplace(t.id);
      if (fresh)
        it->second = g;
      else
        for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    } else if (t.requires_grad()) {
      t.ensure_grad();
      auto& dst = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    }
  };

  const auto& nodes = tape.nodes();
  for (std::size_t ni = nodes.size(); ni-- > 0;) {
    auto& node = const_cast<Node<T>&>(nodes[ni]);
    auto it = temp.find(node.output.id);
    if (it == temp.end()) continue;  // not on the path to the loss
    std::vector<T> gout = std::move(it->second);
    temp.erase(it);

    switch (node.kind) {
      case OpKind::Conv2d: {
        const auto& ctx = std::get<Conv2dCtx>(node.ctx);
        Tensor<T>& input = node.inputs[0];
        Tensor<T>& weight = node.inputs[1];
        Tensor<T>& bias = node.inputs[2];
        const std::size_t B = input.dim(0), Cin = input.dim(1),
                          H = input.dim(2), W = input.dim(3);
        const std::size_t Cout = weight.dim(0), k = weight.dim(2);
        const std::size_t Ho = node.output.dim(2), Wo = node.output.dim(3);
        const std::size_t K = Cin * k * k, out_plane = Ho * Wo;

        const bool need_dx = produced.count(input.id) || input.requires_grad();
        const bool need_dw = weight.requires_grad();
        const bool need_db = bias.requires_grad();

        if (need_db) {
          std::vector<T> db(Cout, T(0));
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Cout; ++o) {
              const T* g = gout.data() + (b * Cout + o) * out_plane;
              T s = 0;
              for (std::size_t i = 0; i < out_plane; ++i) s += g[i];
              db[o] += s;
            }
          accum(bias, db);
        }
        if (need_dw) {
          std::vector<T> dw(weight.numel(), T(0));
          std::vector<T> col(K * out_plane);
          for (std::size_t b = 0; b < B; ++b) {
            im2col(input.data() + b * Cin * H * W, Cin, H, W, k, ctx.stride,
                   ctx.padding, Ho, Wo, col.data());
            // dW += gout_b (Cout x P) * col^T (P x K)
            gemm_bt(Cout, K, out_plane, T(1),
                    gout.data() + b * Cout * out_plane, col.data(), T(1),
                    dw.data());
          }
          accum(weight, dw);
        }
        if (need_dx) {
          std::vector<T> dx(input.numel(), T(0));
          parallel_for(B, [&](std::size_t b0, std::size_t b1) {
            std::vector<T> dcol(K * out_plane);
            for (std::size_t b = b0; b < b1; ++b) {
              // dcol = W^T (K x Cout) * gout_b (Cout x P)
              gemm_at(K, out_plane, Cout, T(1), weight.data(),
                      gout.data() + b * Cout * out_plane, T(0), dcol.data());
              col2im_add(dcol.data(), Cin, H, W, k, ctx.stride, ctx.padding,
                         Ho, Wo, dx.data() + b * Cin * H * W);
            }
          });
          accum(input, dx);
        }
        break;
      }
      case OpKind::MaxPool2d: {
        const auto& ctx = std::get<MaxPool2dCtx>(node.ctx);
        Tensor<T>& input = node.inputs[0];
        const std::size_t planes = input.dim(0) * input.dim(1);
        const std::size_t in_plane = input.dim(2) * input.dim(3);
        const std::size_t out_plane = node.output.dim(2) * node.output.dim(3);
        std::vector<T> dx(input.numel(), T(0));
        for (std::size_t pc = 0; pc < planes; ++pc)
          for (std::size_t i = 0; i < out_plane; ++i)
            dx[pc * in_plane + (std::size_t)ctx.indices.data()[pc * out_plane + i]] +=
                gout[pc * out_plane + i];
        accum(input, dx);
        break;
      }
      case OpKind::MaxUnpool2d: {
        const auto& ctx = std::get<MaxUnpool2dCtx>(node.ctx);
        Tensor<T>& input = node.inputs[0];
        const std::size_t planes = input.dim(0) * input.dim(1);
        const std::size_t in_plane = input.dim(2) * input.dim(3);
        const std::size_t out_plane = ctx.out_h * ctx.out_w;
        std::vector<T> dx(input.numel());
        for (std::size_t pc = 0; pc < planes; ++pc)
          for (std::size_t i = 0; i < in_plane; ++i)
            dx[pc * in_plane + i] =
                gout[pc * out_plane +
                     (std::size_t)ctx.indices.data()[pc * in_plane + i]];
        accum(input, dx);
        break;
      }
      case OpKind::BatchNorm2d: {
        const auto& ctx = std::get<BatchNorm2dCtx<T>>(node.ctx);
        Tensor<T>& input = node.inputs[0];
        Tensor<T>& gamma = node.inputs[1];
        Tensor<T>& beta = node.inputs[2];
        const std::size_t B = input.dim(0), C = input.dim(1),
                          plane = input.dim(2) * input.dim(3);
        const std::size_t N = B * plane;
        std::vector<T> dgamma(C, T(0)), dbeta(C, T(0));
        std::vector<double> sum_g(C, 0), sum_gx(C, 0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const T* xp = input.data() + (b * C + c) * plane;
            const T* gp = gout.data() + (b * C + c) * plane;
            double sg = 0, sgx = 0;
            for (std::size_t i = 0; i < plane; ++i) {
              const double xhat = (xp[i] - ctx.mean[c]) * ctx.inv_std[c];
              sg += gp[i];
              sgx += gp[i] * xhat;
            }
            sum_g[c] += sg;
            sum_gx[c] += sgx;
          }
        for (std::size_t c = 0; c < C; ++c) {
          dbeta[c] = (T)sum_g[c];
          dgamma[c] = (T)sum_gx[c];
        }
        const bool need_dx = produced.count(input.id) || input.requires_grad();
        if (need_dx) {
          std::vector<T> dx(input.numel());
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
              const T* xp = input.data() + (b * C + c) * plane;
              const T* gp = gout.data() + (b * C + c) * plane;
              T* dp = dx.data() + (b * C + c) * plane;
              const double scale =
                  (double)gamma.data()[c] * ctx.inv_std[c] / (double)N;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = (xp[i] - ctx.mean[c]) * ctx.inv_std[c];
                dp[i] = (T)(scale * ((double)N * gp[i] - sum_g[c] -
                                     xhat * sum_gx[c]));
              }
            }
          accum(input, dx);
        }
        accum(gamma, dgamma);
        accum(beta, dbeta);
        break;
      }
      case OpKind::Relu: {
        Tensor<T>& input = node.inputs[0];
        std::vector<T> dx(input.numel());
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx[i] = node.output.data()[i] > T(0) ? gout[i] : T(0);
        accum(input, dx);
        break;
      }
      case OpKind::Sigmoid: {
        Tensor<T>& input = node.inputs[0];
        std::vector<T> dx(input.numel());
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const T y = node.output.data()[i];
          dx[i] = gout[i] * y * (T(1) - y);
        }
        accum(input, dx);
        break;
      }
      case OpKind::UpsampleNearest2x: {
        Tensor<T>& input = node.inputs[0];
        const std::size_t planes = input.dim(0) * input.dim(1);
        const std::size_t H = input.dim(2), W = input.dim(3);
        std::vector<T> dx(input.numel());
        for (std::size_t pc = 0; pc < planes; ++pc) {
          const T* gp = gout.data() + pc * 4 * H * W;
          T* dp = dx.data() + pc * H * W;
          for (std::size_t r = 0; r < H; ++r)
            for (std::size_t c = 0; c < W; ++c) {
              const T* base = gp + (2 * r) * (2 * W) + 2 * c;
              dp[r * W + c] = base[0] + base[1] + base[2 * W] + base[2 * W + 1];
            }
        }
        accum(input, dx);
        break;
      }
      case OpKind::ConcatChannels: {
        const auto& ctx = std::get<ConcatCtx>(node.ctx);
        Tensor<T>& a = node.inputs[0];
        Tensor<T>& b = node.inputs[1];
        const std::size_t B = a.dim(0), plane = a.dim(2) * a.dim(3);
        const std::size_t Ct = ctx.channels_a + ctx.channels_b;
        std::vector<T> da(a.numel()), db(b.numel());
        for (std::size_t bi = 0; bi < B; ++bi) {
          std::copy_n(gout.data() + bi * Ct * plane, ctx.channels_a * plane,
                      da.data() + bi * ctx.channels_a * plane);
          std::copy_n(gout.data() + bi * Ct * plane + ctx.channels_a * plane,
                      ctx.channels_b * plane,
                      db.data() + bi * ctx.channels_b * plane);
        }
        accum(a, da);
        accum(b, db);
        break;
      }
      case OpKind::Add: {
        accum(node.inputs[0], gout);
        accum(node.inputs[1], gout);
        break;
      }
      case OpKind::WeightedSum: {
        const auto& ctx = std::get<WeightedSumCtx<T>>(node.ctx);
        Tensor<T>& input = node.inputs[0];
        std::vector<T> dx(input.numel());
        for (std::size_t i = 0; i < dx.size(); ++i)
          dx[i] = gout[0] * ctx.weights[i];
        accum(input, dx);
        break;
      }
      case OpKind::DiceLoss: {
        const auto& ctx = std::get<LossCtx<T>>(node.ctx);
        Tensor<T>& pred = node.inputs[0];
        const double denom = ctx.sum_p_t + ctx.eps;
        const double numer = 2.0 * ctx.sum_pt + ctx.eps;
        std::vector<T> dx(pred.numel());
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double t = ctx.truth.data()[i];
          dx[i] = (T)(-(double)gout[0] * (2.0 * t * denom - numer) /
                      (denom * denom));
        }
        accum(pred, dx);
        break;
      }
      case OpKind::BceLoss: {
        const auto& ctx = std::get<LossCtx<T>>(node.ctx);
        Tensor<T>& pred = node.inputs[0];
        const double n = (double)pred.numel();
        std::vector<T> dx(pred.numel());
        for (std::size_t i = 0; i < dx.size(); ++i) {
          const double p = pred.data()[i];
          if (p <= ctx.eps || p >= 1.0 - ctx.eps) {
            dx[i] = T(0);  // clamped: flat
            continue;
          }
          const double t = ctx.truth.data()[i];
          dx[i] = (T)((double)gout[0] * (-t / p + (1.0 - t) / (1.0 - p)) / n);
        }
        accum(pred, dx);
        break;
      }
    }
  }
}

}  // namespace xrseg
