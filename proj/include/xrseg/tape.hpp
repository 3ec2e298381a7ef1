#pragma once

#include <cassert>
#include <cstdint>
#include <variant>
#include <vector>

#include "xrseg/tensor.hpp"

namespace xrseg {

enum class OpKind {
  Conv2d,
  MaxPool2d,
  MaxUnpool2d,
  BatchNorm2d,
  Relu,
  Sigmoid,
  UpsampleNearest2x,
  ConcatChannels,
  Add,
  WeightedSum,
  DiceLoss,
  BceLoss,
};

struct Conv2dCtx {
  int stride = 1;
  int padding = 0;
};

struct MaxPool2dCtx {
  IndexTensor indices;  // flat argmax per C-plane
};

struct MaxUnpool2dCtx {
  IndexTensor indices;
  std::size_t out_h = 0, out_w = 0;
};

template <typename T>
struct BatchNorm2dCtx {
  std::vector<T> mean;     // per channel, batch statistics
  std::vector<T> inv_std;  // 1/sqrt(var + eps)
};

struct ConcatCtx {
  std::size_t channels_a = 0, channels_b = 0;
};

template <typename T>
struct WeightedSumCtx {
  std::vector<T> weights;
};

template <typename T>
struct LossCtx {
  Tensor<T> truth;
  double sum_pt = 0;    // dice: sum(pred*truth)
  double sum_p_t = 0;   // dice: sum(pred)+sum(truth)
  double eps = 0;       // dice smoothing / bce clamp
};

struct EmptyCtx {};

template <typename T>
using NodeCtx = std::variant<EmptyCtx, Conv2dCtx, MaxPool2dCtx, MaxUnpool2dCtx,
                             BatchNorm2dCtx<T>, ConcatCtx, WeightedSumCtx<T>,
                             LossCtx<T>>;

// One recorded forward op: handles to inputs/output plus whatever the
// backward pass needs.
template <typename T>
struct Node {
  OpKind kind;
  std::vector<Tensor<T>> inputs;
  Tensor<T> output;
  NodeCtx<T> ctx;
};

// Append-only record of a forward pass, replayed in reverse by backward().
template <typename T>
class Tape {
 public:
  void record(Node<T> node) {
#ifndef NDEBUG
    for (const auto& in : node.inputs) assert(in.id < node.output.id);
#endif
    nodes_.push_back(std::move(node));
  }

  const std::vector<Node<T>>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node<T>> nodes_;
};

}  // namespace xrseg
