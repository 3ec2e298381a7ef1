#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "xrseg/common.hpp"
#include "xrseg/tensor.hpp"

namespace xrseg {

// Images travel as 1xHxW float tensors in [0,1].

namespace detail {

// ITU-R 601 luma weights.
inline double luma(double r, double g, double b) {
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (fp) std::fclose(fp);
  }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* fp = nullptr;
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (fp) std::fclose(fp);
  }
};

}  // namespace detail

inline Tensor<float> read_png_gray(const std::string& path) {
  detail::PngReader r;
  r.fp = std::fopen(path.c_str(), "rb");
  check(r.fp != nullptr, "io-error", "cannot open '" + path + "'");
  unsigned char sig[8];
  check(std::fread(sig, 1, 8, r.fp) == 8 && !png_sig_cmp(sig, 0, 8),
        "bad-image", "'" + path + "' is not a PNG file");

  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                 nullptr);
  check(r.png != nullptr, "io-error", "png reader allocation failed");
  r.info = png_create_info_struct(r.png);
  check(r.info != nullptr, "io-error", "png info allocation failed");

  // The longjmp target; no locals with destructors live past this point
  // inside the guarded region.
  if (setjmp(png_jmpbuf(r.png)))
    fail("bad-image", "failed to decode '" + path + "'");

  png_init_io(r.png, r.fp);
  png_set_sig_bytes(r.png, 8);
  // Expand palette/low-bit-depth to 8-bit channels; keep 16-bit as-is.
  png_read_png(r.png, r.info,
               PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND, nullptr);

  const png_uint_32 w = png_get_image_width(r.png, r.info);
  const png_uint_32 h = png_get_image_height(r.png, r.info);
  const int depth = png_get_bit_depth(r.png, r.info);
  const int channels = png_get_channels(r.png, r.info);
  check(depth == 8 || depth == 16, "bad-image",
        "'" + path + "': unsupported bit depth " + std::to_string(depth));
  check(channels >= 1 && channels <= 4, "bad-image",
        "'" + path + "': unsupported channel count " +
            std::to_string(channels));
  png_bytepp rows = png_get_rows(r.png, r.info);

  Tensor<float> out = Tensor<float>::zeros({1, (std::size_t)h, (std::size_t)w});
  float* dst = out.data();
  const double scale = depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
  const int color_ch = channels >= 3 ? 3 : 1;  // alpha (if any) is last, ignored
  for (png_uint_32 y = 0; y < h; ++y) {
    const unsigned char* row = rows[y];
    for (png_uint_32 x = 0; x < w; ++x) {
      double c[3];
      for (int k = 0; k < color_ch; ++k) {
        const std::size_t i = ((std::size_t)x * channels + k);
        // PNG stores 16-bit samples big-endian
        c[k] = depth == 8 ? row[i]
                          : (double)((row[2 * i] << 8) | row[2 * i + 1]);
      }
      const double v = color_ch == 3 ? detail::luma(c[0], c[1], c[2]) : c[0];
      dst[(std::size_t)y * w + x] = (float)(v * scale);
    }
  }
  return out;
}

inline Tensor<float> read_pgm(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  check(fp != nullptr, "io-error", "cannot open '" + path + "'");
  auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = std::fgetc(fp)) != EOF) {
      if (ch == '#') {  // comment to end of line
        while ((ch = std::fgetc(fp)) != EOF && ch != '\n') {}
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back((char)ch);
    }
    return tok;
  };
  auto die = [&](const std::string& msg) {
    std::fclose(fp);
    fail("bad-image", "'" + path + "': " + msg);
  };

  if (next_token() != "P5") die("not a binary PGM (P5) file");
  const std::string ws = next_token(), hs = next_token(), ms = next_token();
  if (ws.empty() || hs.empty() || ms.empty()) die("truncated PGM header");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(ws);
    h = std::stol(hs);
    maxval = std::stol(ms);
  } catch (const std::exception&) {
    die("malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535)
    die("bad PGM dimensions or maxval");

  const std::size_t n = (std::size_t)w * (std::size_t)h;
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  std::vector<unsigned char> raw(n * bytes_per);
  if (std::fread(raw.data(), 1, raw.size(), fp) != raw.size())
    die("truncated PGM pixel data");
  std::fclose(fp);

  Tensor<float> out = Tensor<float>::zeros({1, (std::size_t)h, (std::size_t)w});
  const double scale = 1.0 / (double)maxval;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = bytes_per == 1
                         ? raw[i]
                         : (double)((raw[2 * i] << 8) | raw[2 * i + 1]);
    out.data()[i] = (float)(v * scale);
  }
  return out;
}

// Dispatches on content magic rather than extension.
inline Tensor<float> read_image(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  check(fp != nullptr, "io-error", "cannot open '" + path + "'");
  unsigned char magic[2] = {0, 0};
  const std::size_t got = std::fread(magic, 1, 2, fp);
  std::fclose(fp);
  check(got == 2, "bad-image", "'" + path + "' is too short to decode");
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png_gray(path);
  if (magic[0] == 'P' && magic[1] == '5') return read_pgm(path);
  fail("bad-image", "'" + path + "' is neither PNG nor binary PGM");
}

inline void write_png_gray(const std::string& path, const Tensor<float>& img) {
  check(img.rank() == 3 && img.dim(0) == 1, "shape-mismatch",
        "write_png_gray: expected 1xHxW, got " + shape_str(img.shape));
  const std::size_t h = img.dim(1), w = img.dim(2);
  std::vector<unsigned char> bytes(h * w);
  std::vector<png_bytep> rows(h);
  for (std::size_t i = 0; i < h * w; ++i) {
    float v = img.data()[i];
    if (v < 0) v = 0;
    if (v > 1) v = 1;
    bytes[i] = (unsigned char)std::lround(v * 255.0f);
  }
  for (std::size_t y = 0; y < h; ++y) rows[y] = bytes.data() + y * w;

  detail::PngWriter wr;
  wr.fp = std::fopen(path.c_str(), "wb");
  check(wr.fp != nullptr, "io-error", "cannot write '" + path + "'");
  wr.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr,
                                   nullptr);
  check(wr.png != nullptr, "io-error", "png writer allocation failed");
  wr.info = png_create_info_struct(wr.png);
  check(wr.info != nullptr, "io-error", "png info allocation failed");

  if (setjmp(png_jmpbuf(wr.png)))
    fail("io-error", "failed to encode '" + path + "'");

  png_init_io(wr.png, wr.fp);
  png_set_IHDR(wr.png, wr.info, (png_uint_32)w, (png_uint_32)h, 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  png_write_image(wr.png, rows.data());
  png_write_end(wr.png, nullptr);
}

// --- resizing (half-pixel-center sampling) ----------------------------------

inline Tensor<float> resize_bilinear(const Tensor<float>& img, std::size_t oh,
                                     std::size_t ow) {
  check(img.rank() == 3 && img.dim(0) == 1, "shape-mismatch",
        "resize_bilinear: expected 1xHxW");
  check(oh >= 1 && ow >= 1, "bad-arg", "resize_bilinear: empty output");
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h == oh && w == ow) return img.clone();
  Tensor<float> out = Tensor<float>::zeros({1, oh, ow});
  const double sy = (double)h / (double)oh, sx = (double)w / (double)ow;
  const float* src = img.data();
  for (std::size_t y = 0; y < oh; ++y) {
    double fy = ((double)y + 0.5) * sy - 0.5;
    if (fy < 0) fy = 0;
    if (fy > (double)(h - 1)) fy = (double)(h - 1);
    const std::size_t y0 = (std::size_t)fy;
    const std::size_t y1 = y0 + 1 < h ? y0 + 1 : y0;
    const double wy = fy - (double)y0;
    for (std::size_t x = 0; x < ow; ++x) {
      double fx = ((double)x + 0.5) * sx - 0.5;
      if (fx < 0) fx = 0;
      if (fx > (double)(w - 1)) fx = (double)(w - 1);
      const std::size_t x0 = (std::size_t)fx;
      const std::size_t x1 = x0 + 1 < w ? x0 + 1 : x0;
      const double wx = fx - (double)x0;
      const double top = (1 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1];
      const double bot = (1 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1];
      out.data()[y * ow + x] = (float)((1 - wy) * top + wy * bot);
    }
  }
  return out;
}

inline Tensor<float> resize_nearest(const Tensor<float>& img, std::size_t oh,
                                    std::size_t ow) {
  check(img.rank() == 3 && img.dim(0) == 1, "shape-mismatch",
        "resize_nearest: expected 1xHxW");
  check(oh >= 1 && ow >= 1, "bad-arg", "resize_nearest: empty output");
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (h == oh && w == ow) return img.clone();
  Tensor<float> out = Tensor<float>::zeros({1, oh, ow});
  const double sy = (double)h / (double)oh, sx = (double)w / (double)ow;
  for (std::size_t y = 0; y < oh; ++y) {
    std::size_t ys = (std::size_t)(((double)y + 0.5) * sy);
    if (ys >= h) ys = h - 1;
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t xs = (std::size_t)(((double)x + 0.5) * sx);
      if (xs >= w) xs = w - 1;
      out.data()[y * ow + x] = img.data()[ys * w + xs];
    }
  }
  return out;
}

}  // namespace xrseg
