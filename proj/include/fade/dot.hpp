#pragma once

namespace fade {

// Unrolled inner product; the explicit partial sums let the compiler keep
// four independent FMA chains going.
inline double dot_rows(const double* a, const double* b, int dim) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int j = 0;
  for (; j + 4 <= dim; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  double tail = 0.0;
  for (; j < dim; ++j) tail += a[j] * b[j];
  return ((s0 + s1) + (s2 + s3)) + tail;
}

}  // namespace fade
