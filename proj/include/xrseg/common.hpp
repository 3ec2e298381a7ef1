#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace xrseg {

// Error with a short machine-parsable code ("shape-mismatch", "bad-magic", ...)
// plus a human-readable message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& msg)
      : std::runtime_error("[" + code + "] " + msg), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
  throw Error(code, msg);
}

inline void check(bool ok, const std::string& code, const std::string& msg) {
  if (!ok) fail(code, msg);
}

inline std::string fmt_f(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

// Worker cap: XRSEG_THREADS wins, otherwise hardware concurrency.
inline int thread_count() {
  static const int n = [] {
    if (const char* env = std::getenv("XRSEG_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return n;
}

// Chunked parallel loop over [0, n). Each chunk writes disjoint outputs, so
// results are bit-identical at any worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = static_cast<std::size_t>(thread_count());
  if (workers <= 1 || n <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  const std::size_t parts = std::min(workers, n);
  const std::size_t chunk = (n + parts - 1) / parts;
  std::vector<std::thread> pool;
  pool.reserve(parts);
  for (std::size_t p = 0; p < parts; ++p) {
    std::size_t begin = p * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xrseg
