#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "windcomfort/kernels.hpp"

namespace wc::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {
namespace {

// Packed-panel GEMM: A is packed into kMr-row panels, B into kNr-column panels, and a
// register-blocked micro-kernel computes one kMr x kNr tile of C per call.
constexpr int kVecBytes = 32;
constexpr int kMr = 6;
constexpr int kBlockK = 256;
constexpr int kBlockM = 96;
constexpr int kBlockN = 2048;

template <typename T>
struct Panel {
  static constexpr int lanes = kVecBytes / static_cast<int>(sizeof(T));
  static constexpr int nr = 2 * lanes;
  typedef T vec __attribute__((vector_size(kVecBytes)));
};

template <typename T>
inline typename Panel<T>::vec load_vec(const T* p) {
  typename Panel<T>::vec v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <typename T>
inline void store_vec(T* p, typename Panel<T>::vec v) {
  std::memcpy(p, &v, sizeof(v));
}

// tile[kMr x nr] = sum_p apanel[p][r] * bpanel[p][j]
template <typename T>
inline void micro_kernel(int kc, const T* apanel, const T* bpanel, T* tile) {
  using V = typename Panel<T>::vec;
  constexpr int lanes = Panel<T>::lanes;
  V acc[kMr][2];
  for (int r = 0; r < kMr; ++r) acc[r][0] = acc[r][1] = V{};
  for (int p = 0; p < kc; ++p) {
    const V b0 = load_vec<T>(bpanel + p * 2 * lanes);
    const V b1 = load_vec<T>(bpanel + p * 2 * lanes + lanes);
    const T* ap = apanel + p * kMr;
#pragma GCC unroll 6
    for (int r = 0; r < kMr; ++r) {
      const V a = V{} + ap[r];
      acc[r][0] += a * b0;
      acc[r][1] += a * b1;
    }
  }
  for (int r = 0; r < kMr; ++r) {
    store_vec<T>(tile + r * 2 * lanes, acc[r][0]);
    store_vec<T>(tile + r * 2 * lanes + lanes, acc[r][1]);
  }
}

template <typename T>
inline T elem(const T* m, int ld, bool trans, int row, int col) {
  return trans ? m[static_cast<std::size_t>(col) * ld + row] : m[static_cast<std::size_t>(row) * ld + col];
}

}  // namespace

template <typename T>
void gemm(Trans ta, Trans tb, int m, int n, int k, T alpha, const T* a, int lda, const T* b,
          int ldb, T beta, T* c, int ldc) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    T* row = c + static_cast<std::size_t>(i) * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (int j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == T(0)) return;

  constexpr int nr = Panel<T>::nr;
  const bool at = ta == Trans::Yes;
  const bool bt = tb == Trans::Yes;
  std::vector<T> bpack(static_cast<std::size_t>(kBlockK) * (kBlockN + nr));

  for (int j0 = 0; j0 < n; j0 += kBlockN) {
    const int nc = std::min(kBlockN, n - j0);
    const int npanels = (nc + nr - 1) / nr;
    for (int k0 = 0; k0 < k; k0 += kBlockK) {
      const int kc = std::min(kBlockK, k - k0);
#pragma omp parallel for schedule(static)
      for (int q = 0; q < npanels; ++q) {
        T* dst = bpack.data() + static_cast<std::size_t>(q) * kc * nr;
        const int cols = std::min(nr, nc - q * nr);
        for (int p = 0; p < kc; ++p) {
          T* d = dst + p * nr;
          if (!bt && cols == nr) {
            const T* src = b + static_cast<std::size_t>(k0 + p) * ldb + j0 + q * nr;
            std::copy(src, src + nr, d);
          } else {
            int j = 0;
            for (; j < cols; ++j) d[j] = elem(b, ldb, bt, k0 + p, j0 + q * nr + j);
            for (; j < nr; ++j) d[j] = T(0);
          }
        }
      }
      const int mblocks = (m + kBlockM - 1) / kBlockM;
#pragma omp parallel
      {
        std::vector<T> apack(static_cast<std::size_t>(kBlockM) * kc);
        alignas(64) T tile[kMr * nr];
#pragma omp for schedule(static)
        for (int mb = 0; mb < mblocks; ++mb) {
          const int i0 = mb * kBlockM;
          const int mc = std::min(kBlockM, m - i0);
          const int mpanels = (mc + kMr - 1) / kMr;
          for (int pi = 0; pi < mpanels; ++pi) {
            T* dst = apack.data() + static_cast<std::size_t>(pi) * kc * kMr;
            const int rows = std::min(kMr, mc - pi * kMr);
            for (int p = 0; p < kc; ++p) {
              int r = 0;
              for (; r < rows; ++r) dst[p * kMr + r] = alpha * elem(a, lda, at, i0 + pi * kMr + r, k0 + p);
              for (; r < kMr; ++r) dst[p * kMr + r] = T(0);
            }
          }
          for (int q = 0; q < npanels; ++q) {
            const T* bp = bpack.data() + static_cast<std::size_t>(q) * kc * nr;
            const int cols = std::min(nr, nc - q * nr);
            for (int pi = 0; pi < mpanels; ++pi) {
              const int rows = std::min(kMr, mc - pi * kMr);
              micro_kernel<T>(kc, apack.data() + static_cast<std::size_t>(pi) * kc * kMr, bp, tile);
              for (int r = 0; r < rows; ++r) {
                T* crow = c + static_cast<std::size_t>(i0 + pi * kMr + r) * ldc + j0 + q * nr;
                const T* trow = tile + r * nr;
                for (int j = 0; j < cols; ++j) crow[j] += trow[j];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void im2col(const ConvGeom& g, const T* image, T* cols) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int rows = g.col_rows();
  const int kk = g.kernel * g.kernel;
#pragma omp parallel for schedule(static)
  for (int row = 0; row < rows; ++row) {
    const int c = row / kk;
    const int ki = (row % kk) / g.kernel;
    const int kj = row % g.kernel;
    const T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    T* out = cols + static_cast<std::size_t>(row) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int iy = y * g.stride - g.pad + ki;
      T* orow = out + static_cast<std::size_t>(y) * ow;
      if (iy < 0 || iy >= g.height) {
        std::fill(orow, orow + ow, T(0));
        continue;
      }
      const T* irow = plane + static_cast<std::size_t>(iy) * g.width;
      for (int x = 0; x < ow; ++x) {
        const int ix = x * g.stride - g.pad + kj;
        orow[x] = (ix >= 0 && ix < g.width) ? irow[ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeom& g, const T* cols, T* image) {
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int kk = g.kernel * g.kernel;
  // One thread per channel; every image element is written by a single thread.
#pragma omp parallel for schedule(static)
  for (int c = 0; c < g.channels; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * g.height * g.width;
    for (int r = 0; r < kk; ++r) {
      const int ki = r / g.kernel;
      const int kj = r % g.kernel;
      const T* in = cols + static_cast<std::size_t>(c * kk + r) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        const int iy = y * g.stride - g.pad + ki;
        if (iy < 0 || iy >= g.height) continue;
        T* irow = plane + static_cast<std::size_t>(iy) * g.width;
        const T* crow = in + static_cast<std::size_t>(y) * ow;
        for (int x = 0; x < ow; ++x) {
          const int ix = x * g.stride - g.pad + kj;
          if (ix >= 0 && ix < g.width) irow[ix] += crow[x];
        }
      }
    }
  }
}

template <typename T>
void instance_norm_forward(const T* x, int planes, int plane_size, T eps, T* y, T* inv_std) {
#pragma omp parallel for schedule(static)
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
#pragma omp parallel for schedule(static)
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
  template void instance_norm_forward<T>(const T*, int, int, T, T*, T*);                         \
  template void instance_norm_backward<T>(const T*, const T*, const T*, int, int, T*);

WC_INSTANTIATE(float)
WC_INSTANTIATE(double)
#undef WC_INSTANTIATE

}  // namespace parallel
}  // namespace wc::kernels
