#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "xrseg/image.hpp"
#include "xrseg/tensor.hpp"

namespace xrseg {

struct Sample {
  std::string id;
  Tensor<float> image;  // 1xHxW in [0,1]
  Tensor<float> mask;   // 1xHxW in {0,1}
};

struct Dataset {
  std::vector<Sample> samples;
  std::string source;
  std::size_t target_h = 0, target_w = 0;

  std::size_t size() const { return samples.size(); }
};

// --- loading ------------------------------------------------------------------

namespace detail {

inline bool image_ext(const std::filesystem::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(),
                 [](unsigned char c) { return (char)std::tolower(c); });
  return e == ".png" || e == ".pgm";
}

inline Tensor<float> binarize_mask(const Tensor<float>& m) {
  Tensor<float> out = Tensor<float>::zeros(m.shape);
  for (std::size_t i = 0; i < m.numel(); ++i)
    out.data()[i] = m.data()[i] >= 0.5f ? 1.0f : 0.0f;
  return out;
}

}  // namespace detail

inline Dataset load_dataset(const std::string& image_dir,
                            const std::string& mask_dir, std::size_t target_h,
                            std::size_t target_w) {
  namespace fs = std::filesystem;
  check(fs::is_directory(image_dir), "io-error",
        "image directory '" + image_dir + "' does not exist");
  check(fs::is_directory(mask_dir), "io-error",
        "mask directory '" + mask_dir + "' does not exist");

  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(image_dir))
    if (entry.is_regular_file() && detail::image_ext(entry.path()))
      images.push_back(entry.path());
  std::sort(images.begin(), images.end(), [](const auto& a, const auto& b) {
    return a.stem().string() < b.stem().string();
  });
  check(!images.empty(), "empty-dataset",
        "no image files in '" + image_dir + "'");
  for (std::size_t i = 1; i < images.size(); ++i)
    check(images[i].stem() != images[i - 1].stem(), "duplicate-stem",
          "two image files share the stem '" + images[i].stem().string() +
              "'");

  auto find_mask = [&](const std::string& stem) -> std::optional<fs::path> {
    for (const char* suffix : {"", "_mask"})
      for (const char* ext : {".png", ".pgm"}) {
        fs::path cand = fs::path(mask_dir) / (stem + suffix + ext);
        if (fs::is_regular_file(cand)) return cand;
      }
    return std::nullopt;
  };

  std::vector<std::string> unpaired;
  for (const auto& img : images)
    if (!find_mask(img.stem().string())) unpaired.push_back(img.stem().string());
  if (!unpaired.empty()) {
    std::string list;
    for (const auto& s : unpaired) list += (list.empty() ? "" : ", ") + s;
    fail("unpaired-images", "no mask found for: " + list);
  }

  Dataset ds;
  ds.source = image_dir;
  ds.target_h = target_h;
  ds.target_w = target_w;
  ds.samples.reserve(images.size());
  for (const auto& img_path : images) {
    Sample s;
    s.id = img_path.stem().string();
    s.image = resize_bilinear(read_image(img_path.string()), target_h, target_w);
    Tensor<float> m = read_image(find_mask(s.id)->string());
    s.mask = detail::binarize_mask(resize_nearest(m, target_h, target_w));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// --- splitting ------------------------------------------------------------------

// Seeded Fisher-Yates permutation (modulo draw keeps it portable), then a
// prefix split of size floor(fraction * n).
inline std::pair<Dataset, Dataset> split(const Dataset& ds,
                                         double train_fraction,
                                         std::uint64_t seed) {
  const std::size_t n = ds.size();
  check(n >= 2, "bad-arg", "split: need at least 2 samples, got " +
                               std::to_string(n));
  check(train_fraction > 0.0 && train_fraction < 1.0, "bad-arg",
        "split: fraction must be in (0,1)");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937 rng((std::uint32_t)seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    const std::size_t j = rng() % (i + 1);
    std::swap(idx[i], idx[j]);
  }
  std::size_t cut = (std::size_t)((double)n * train_fraction);
  if (cut == 0) cut = 1;
  if (cut == n) cut = n - 1;

  Dataset a, b;
  a.source = ds.source;
  b.source = ds.source;
  a.target_h = b.target_h = ds.target_h;
  a.target_w = b.target_w = ds.target_w;
  for (std::size_t i = 0; i < n; ++i)
    (i < cut ? a : b).samples.push_back(ds.samples[idx[i]]);
  return {std::move(a), std::move(b)};
}

// --- batching -------------------------------------------------------------------

// Index groups covering the dataset; the final partial batch is kept.
inline std::vector<std::vector<std::size_t>> batch_indices(
    std::size_t n, std::size_t batch_size,
    std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
  check(batch_size >= 1, "bad-arg", "batch_indices: batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_seed) {
    std::mt19937 rng((std::uint32_t)*shuffle_seed);
    for (std::size_t i = n; i > 1; --i) {
      const std::size_t j = rng() % i;
      std::swap(order[i - 1], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) {
    const std::size_t e = std::min(n, b + batch_size);
    out.emplace_back(order.begin() + (std::ptrdiff_t)b,
                     order.begin() + (std::ptrdiff_t)e);
  }
  return out;
}

// Stacks selected samples into (images, masks), each Bx1xHxW.
template <typename T = float>
std::pair<Tensor<T>, Tensor<T>> stack_batch(const Dataset& ds,
                                            const std::vector<std::size_t>& idx) {
  check(!idx.empty(), "bad-arg", "stack_batch: empty index list");
  const std::size_t H = ds.target_h, W = ds.target_w, plane = H * W;
  Tensor<T> images = Tensor<T>::zeros({idx.size(), 1, H, W});
  Tensor<T> masks = Tensor<T>::zeros({idx.size(), 1, H, W});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    check(idx[b] < ds.size(), "index-out-of-bounds", "stack_batch: bad index");
    const Sample& s = ds.samples[idx[b]];
    for (std::size_t i = 0; i < plane; ++i) {
      images.data()[b * plane + i] = (T)s.image.data()[i];
      masks.data()[b * plane + i] = (T)s.mask.data()[i];
    }
  }
  return {std::move(images), std::move(masks)};
}

// --- synthetic data ---------------------------------------------------------------

// Two bright filled ellipses on a dark noisy background; the mask is their
// union. All draws come from one seeded stream, so a (n, hw, seed) triple
// regenerates byte-identically.
inline Dataset gen_synthetic(std::size_t n, std::size_t h, std::size_t w,
                             std::uint64_t seed) {
  check(n >= 1, "bad-arg", "gen_synthetic: n must be >= 1");
  check(h >= 8 && w >= 8, "bad-arg", "gen_synthetic: size too small");
  Dataset ds;
  ds.source = "synthetic";
  ds.target_h = h;
  ds.target_w = w;
  ds.samples.reserve(n);

  std::mt19937 rng((std::uint32_t)seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  auto in_range = [&](double lo, double hi) { return lo + (hi - lo) * uni(rng); };

  for (std::size_t s = 0; s < n; ++s) {
    struct Ellipse {
      double cx, cy, ax, ay, cos_t, sin_t;
    };
    Ellipse es[2];
    for (int e = 0; e < 2; ++e) {
      const double cx = e == 0 ? in_range(0.28, 0.36) : in_range(0.64, 0.72);
      const double cy = in_range(0.45, 0.55);
      const double ax = in_range(0.09, 0.14);
      const double ay = in_range(0.18, 0.30);
      const double rot = in_range(-0.25, 0.25);
      es[e] = {cx * w, cy * h, ax * w, ay * h, std::cos(rot), std::sin(rot)};
    }
    Sample sm;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth_%04zu", s);
    sm.id = idbuf;
    sm.image = Tensor<float>::zeros({1, h, w});
    sm.mask = Tensor<float>::zeros({1, h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        bool inside = false;
        for (const auto& el : es) {
          const double dx = (double)x - el.cx, dy = (double)y - el.cy;
          const double u = dx * el.cos_t + dy * el.sin_t;
          const double v = -dx * el.sin_t + dy * el.cos_t;
          if ((u * u) / (el.ax * el.ax) + (v * v) / (el.ay * el.ay) <= 1.0) {
            inside = true;
            break;
          }
        }
        double px = 0.1 + (inside ? 0.65 : 0.0) + noise(rng);
        if (px < 0) px = 0;
        if (px > 1) px = 1;
        sm.image.data()[y * w + x] = (float)px;
        sm.mask.data()[y * w + x] = inside ? 1.0f : 0.0f;
      }
    ds.samples.push_back(std::move(sm));
  }
  return ds;
}

}  // namespace xrseg
