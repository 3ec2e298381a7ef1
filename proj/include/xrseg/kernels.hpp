#pragma once

#include <cblas.h>

#include <cstddef>
#include <vector>

namespace xrseg {

// Row-major C = alpha*A*B + beta*C. A: MxK, B: KxN, C: MxN.
inline void gemm(std::size_t M, std::size_t N, std::size_t K, float alpha,
                 const float* A, const float* B, float beta, float* C) {
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)M, (int)N, (int)K,
              alpha, A, (int)K, B, (int)N, beta, C, (int)N);
}
inline void gemm(std::size_t M, std::size_t N, std::size_t K, double alpha,
                 const double* A, const double* B, double beta, double* C) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, (int)M, (int)N, (int)K,
              alpha, A, (int)K, B, (int)N, beta, C, (int)N);
}

// A^T variant: C = alpha*A^T*B + beta*C. A: KxM (transposed to MxK), B: KxN.
inline void gemm_at(std::size_t M, std::size_t N, std::size_t K, float alpha,
                    const float* A, const float* B, float beta, float* C) {
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)M, (int)N, (int)K,
              alpha, A, (int)M, B, (int)N, beta, C, (int)N);
}
inline void gemm_at(std::size_t M, std::size_t N, std::size_t K, double alpha,
                    const double* A, const double* B, double beta, double* C) {
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, (int)M, (int)N, (int)K,
              alpha, A, (int)M, B, (int)N, beta, C, (int)N);
}

// B^T variant: C = alpha*A*B^T + beta*C. A: MxK, B: NxK (transposed to KxN).
inline void gemm_bt(std::size_t M, std::size_t N, std::size_t K, float alpha,
                    const float* A, const float* B, float beta, float* C) {
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)M, (int)N, (int)K,
              alpha, A, (int)K, B, (int)K, beta, C, (int)N);
}
inline void gemm_bt(std::size_t M, std::size_t N, std::size_t K, double alpha,
                    const double* A, const double* B, double beta, double* C) {
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, (int)M, (int)N, (int)K,
              alpha, A, (int)K, B, (int)K, beta, C, (int)N);
}

// Unrolls one image plane set (C x H x W) into a (C*k*k) x (out_h*out_w)
// patch matrix. Out-of-range input reads as zero.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w,
            std::size_t k, int stride, int padding, std::size_t out_h,
            std::size_t out_w, T* col) {
  const std::size_t plane = h * w;
  const std::size_t out_plane = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        T* dst = col + row * out_plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = (long)oy * stride - padding + (long)ki;
          if (iy < 0 || iy >= (long)h) {
            for (std::size_t ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] = T(0);
            continue;
          }
          const T* src_row = img + c * plane + (std::size_t)iy * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = (long)ox * stride - padding + (long)kj;
            dst[oy * out_w + ox] =
                (ix < 0 || ix >= (long)w) ? T(0) : src_row[ix];
          }
        }
      }
    }
  }
}

// Scatter-add of a patch matrix back onto an image plane set; adjoint of
// im2col.
template <typename T>
void col2im_add(const T* col, std::size_t channels, std::size_t h,
                std::size_t w, std::size_t k, int stride, int padding,
                std::size_t out_h, std::size_t out_w, T* img) {
  const std::size_t plane = h * w;
  const std::size_t out_plane = out_h * out_w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj, ++row) {
        const T* src = col + row * out_plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = (long)oy * stride - padding + (long)ki;
          if (iy < 0 || iy >= (long)h) continue;
          T* dst_row = img + c * plane + (std::size_t)iy * w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = (long)ox * stride - padding + (long)kj;
            if (ix >= 0 && ix < (long)w) dst_row[ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace xrseg
