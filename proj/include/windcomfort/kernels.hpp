#pragma once

// Numeric kernels behind the autograd engine.
//
// Every kernel exists twice: `serial::` is a straightforward reference kept for
// tests and benchmarks, `parallel::` is the OpenMP version the engine calls.
// Parallel kernels assign each output element to exactly one thread and keep
// the reduction order fixed, so results do not depend on the thread count.

#include <cstddef>

namespace wc::kernels {

enum class Trans { No, Yes };

// Convolution geometry for one image: C channels of H x W, square kernel.
struct ConvGeom {
  int channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_height() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * pad - kernel) / stride + 1; }
  int col_rows() const { return channels * kernel * kernel; }
  int col_cols() const { return out_height() * out_width(); }
};

namespace serial {

// Row-major C[m x n] = alpha * op(A) * op(B) + beta * C.
template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

template <typename T>
void im2col(const ConvGeom& g, const T* image, T* cols);

// Accumulates columns back into image (image must be pre-initialised).
template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* image);

// Direct (non-lowered) convolutions used as an independent check of the
// im2col + gemm path. weight layout: conv [Cout, Cin, k, k]; transposed conv
// [Cin, Cout, k, k] with output size (H-1)*s - 2p + k + out_pad.
template <typename T>
void conv2d_direct(const T* x, int cin, int h, int w, const T* weight, const T* bias, int cout,
                   int k, int stride, int pad, T* y);

template <typename T>
void conv_transpose2d_direct(const T* x, int cin, int h, int w, const T* weight, const T* bias,
                             int cout, int k, int stride, int pad, int out_pad, T* y);

template <typename T>
void instance_norm_forward(const T* x, int planes, int plane_size, T eps, T* y, T* inv_std);

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* dy, int planes, int plane_size,
                            T* dx);

}  // namespace serial

namespace parallel {

template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc);

template <typename T>
void im2col(const ConvGeom& g, const T* image, T* cols);

template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* image);

template <typename T>
void instance_norm_forward(const T* x, int planes, int plane_size, T eps, T* y, T* inv_std);

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* dy, int planes, int plane_size,
                            T* dx);

}  // namespace parallel

int max_threads();

}  // namespace wc::kernels
