#include <cmath>

#include "windcomfort/kernels.hpp"

namespace wc::kernels::serial {

template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int p = 0; p < k; ++p) {
        const T av = ta == Trans::No ? a[i * lda + p] : a[p * lda + i];
        const T bv = tb == Trans::No ? b[p * ldb + j] : b[j * ldb + p];
        acc += av * bv;
      }
      T& out = c[i * ldc + j];
      out = beta == T(0) ? alpha * acc : alpha * acc + beta * out;
    }
  }
}

template <typename T>
void im2col(const ConvGeom& g, const T* image, T* cols) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const int row = (c * g.kernel + ki) * g.kernel + kj;
        for (int y = 0; y < oh; ++y) {
          for (int x = 0; x < ow; ++x) {
            const int iy = y * g.stride - g.pad + ki;
            const int ix = x * g.stride - g.pad + kj;
            const bool inside = iy >= 0 && iy < g.height && ix >= 0 && ix < g.width;
            cols[static_cast<std::size_t>(row) * oh * ow + y * ow + x] =
                inside ? image[(static_cast<std::size_t>(c) * g.height + iy) * g.width + ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* image) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < g.kernel; ++ki) {
      for (int kj = 0; kj < g.kernel; ++kj) {
        const int row = (c * g.kernel + ki) * g.kernel + kj;
        for (int y = 0; y < oh; ++y) {
          for (int x = 0; x < ow; ++x) {
            const int iy = y * g.stride - g.pad + ki;
            const int ix = x * g.stride - g.pad + kj;
            if (iy >= 0 && iy < g.height && ix >= 0 && ix < g.width) {
              image[(static_cast<std::size_t>(c) * g.height + iy) * g.width + ix] +=
                  cols[static_cast<std::size_t>(row) * oh * ow + y * ow + x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_direct(const T* x, int cin, int h, int w, const T* weight, const T* bias, int cout,
                   int k, int stride, int pad, T* y) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  for (int o = 0; o < cout; ++o) {
    for (int yy = 0; yy < oh; ++yy) {
      for (int xx = 0; xx < ow; ++xx) {
        T acc = bias ? bias[o] : T(0);
        for (int c = 0; c < cin; ++c) {
          for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
              const int iy = yy * stride - pad + ki;
              const int ix = xx * stride - pad + kj;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += weight[((o * cin + c) * k + ki) * k + kj] * x[(c * h + iy) * w + ix];
            }
          }
        }
        y[(o * oh + yy) * ow + xx] = acc;
      }
    }
  }
}

template <typename T>
void conv_transpose2d_direct(const T* x, int cin, int h, int w, const T* weight, const T* bias,
                             int cout, int k, int stride, int pad, int out_pad, T* y) {
  const int oh = (h - 1) * stride - 2 * pad + k + out_pad;
  const int ow = (w - 1) * stride - 2 * pad + k + out_pad;
  for (int o = 0; o < cout; ++o) {
    for (int i = 0; i < oh * ow; ++i) y[o * oh * ow + i] = bias ? bias[o] : T(0);
  }
  for (int c = 0; c < cin; ++c) {
    for (int yy = 0; yy < h; ++yy) {
      for (int xx = 0; xx < w; ++xx) {
        const T v = x[(c * h + yy) * w + xx];
        for (int o = 0; o < cout; ++o) {
          for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
              const int oy = yy * stride - pad + ki;
              const int ox = xx * stride - pad + kj;
              if (oy < 0 || oy >= oh || ox < 0 || ox >= ow) continue;
              y[(o * oh + oy) * ow + ox] += v * weight[((c * cout + o) * k + ki) * k + kj];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void instance_norm_forward(const T* x, int planes, int plane_size, T eps, T* y, T* inv_std) {
  for (int p = 0; p < planes; ++p) {
    const T* xp = x + static_cast<std::size_t>(p) * plane_size;
    T* yp = y + static_cast<std::size_t>(p) * plane_size;
    T mean = 0;
    for (int i = 0; i < plane_size; ++i) mean += xp[i];
    mean /= static_cast<T>(plane_size);
    T var = 0;
    for (int i = 0; i < plane_size; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= static_cast<T>(plane_size);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[p] = is;
    for (int i = 0; i < plane_size; ++i) yp[i] = (xp[i] - mean) * is;
  }
}

template <typename T>
void instance_norm_backward(const T* y, const T* inv_std, const T* dy, int planes, int plane_size,
                            T* dx) {
  for (int p = 0; p < planes; ++p) {
    const std::size_t off = static_cast<std::size_t>(p) * plane_size;
    T mean_dy = 0;
    T mean_dyy = 0;
    for (int i = 0; i < plane_size; ++i) {
      mean_dy += dy[off + i];
      mean_dyy += dy[off + i] * y[off + i];
    }
    mean_dy /= static_cast<T>(plane_size);
    mean_dyy /= static_cast<T>(plane_size);
    for (int i = 0; i < plane_size; ++i) {
      dx[off + i] += inv_std[p] * (dy[off + i] - mean_dy - y[off + i] * mean_dyy);
    }
  }
}

#define WC_INSTANTIATE(T)                                                                        \
  template void gemm<T>(Trans, Trans, int, int, int, T, const T*, int, const T*, int, T, T*, int); \
  template void im2col<T>(const ConvGeom&, const T*, T*);                                        \
  template void col2im<T>(const ConvGeom&, const T*, T*);                                        \
  template void conv2d_direct<T>(const T*, int, int, int, const T*, const T*, int, int, int, int, \
                                 T*);                                                            \
  template void conv_transpose2d_direct<T>(const T*, int, int, int, const T*, const T*, int, int, \
                                           int, int, int, T*);                                   \
  template void instance_norm_forward<T>(const T*, int, int, T, T*, T*);                         \
  template void instance_norm_backward<T>(const T*, const T*, const T*, int, int, T*);

WC_INSTANTIATE(float)
WC_INSTANTIATE(double)
#undef WC_INSTANTIATE

}  // namespace wc::kernels::serial
