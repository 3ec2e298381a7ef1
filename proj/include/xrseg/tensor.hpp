#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "xrseg/common.hpp"

namespace xrseg {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::int64_t next_tensor_id() {
  static std::atomic<std::int64_t> counter{0};
  return ++counter;
}

// Handle over shared storage: copies alias the same values, grad slot, and
// requires_grad flag, and keep the same id. Factories mint fresh tensors.
template <typename T>
struct Tensor {
  struct Payload {
    std::vector<T> values;
    std::vector<T> grad;  // empty until first use
    bool requires_grad = false;
  };

  Shape shape;
  std::shared_ptr<Payload> p;
  std::int64_t id = 0;

  Tensor() = default;

  static Tensor zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.p = std::make_shared<Payload>();
    t.p->values.assign(shape_numel(t.shape), T(0));
    t.id = next_tensor_id();
    return t;
  }

  static Tensor full(Shape s, T v) {
    Tensor t = zeros(std::move(s));
    for (auto& x : t.p->values) x = v;
    return t;
  }

  static Tensor from(std::vector<T> vals, Shape s) {
    check(vals.size() == shape_numel(s), "shape-mismatch",
          "tensor data length " + std::to_string(vals.size()) +
              " != numel of " + shape_str(s));
    Tensor t;
    t.shape = std::move(s);
    t.p = std::make_shared<Payload>();
    t.p->values = std::move(vals);
    t.id = next_tensor_id();
    return t;
  }

  static Tensor scalar(T v) { return from({v}, {1}); }

  bool defined() const { return static_cast<bool>(p); }
  std::size_t numel() const { return p ? p->values.size() : 0; }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  std::vector<T>& vals() { return p->values; }
  const std::vector<T>& vals() const { return p->values; }
  T* data() { return p->values.data(); }
  const T* data() const { return p->values.data(); }

  bool requires_grad() const { return p && p->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    p->requires_grad = b;
    return *this;
  }

  T item() const {
    check(numel() == 1, "not-scalar", "item() on tensor " + shape_str(shape));
    return p->values[0];
  }

  bool has_grad() const { return p && !p->grad.empty(); }
  void ensure_grad() {
    if (p->grad.empty()) p->grad.assign(numel(), T(0));
  }
  void zero_grad() {
    for (auto& g : p->grad) g = T(0);
  }
  std::vector<T>& grad() {
    ensure_grad();
    return p->grad;
  }

  // Deep copy with a fresh id; grad not carried over.
  Tensor clone() const {
    Tensor t = zeros(shape);
    t.p->values = p->values;
    t.p->requires_grad = p->requires_grad;
    return t;
  }
};

using IndexTensor = Tensor<std::int32_t>;

template <typename T>
inline void check_dims4(const Tensor<T>& t, const char* what) {
  check(t.rank() == 4, "shape-mismatch",
        std::string(what) + ": expected 4-d tensor, got " + shape_str(t.shape));
}

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
  for (const T& v : t.vals())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

#ifndef NDEBUG
#define XRSEG_DEBUG_FINITE(t, opname)                                    \
  ::xrseg::check(::xrseg::all_finite(t), "non-finite",                   \
                 std::string(opname) + ": non-finite value in output " + \
                     ::xrseg::shape_str((t).shape))
#else
#define XRSEG_DEBUG_FINITE(t, opname) (void)0
#endif

}  // namespace xrseg
