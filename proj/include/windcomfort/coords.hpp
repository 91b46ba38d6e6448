#pragma once

namespace wc {

// Affine map of index i in [0, n-1] onto [-1, 1]; a single row or column maps to 0.
inline double normalized_coord(int i, int n) {
  return n <= 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

}  // namespace wc
