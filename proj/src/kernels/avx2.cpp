// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include <cmath>
#include <vector>

#include "kernels_impl.hpp"

namespace latnav::kernels::avx2 {

namespace {

// Fixed lane order: (l0 + l1) + (l2 + l3).
inline double hsum(__m256d v) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, v);
  return (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
}

inline void store(double* c, double value, bool accumulate) {
  *c = accumulate ? *c + value : value;
}

inline void store4(double* c, __m256d value, bool accumulate) {
  if (accumulate) value = _mm256_add_pd(_mm256_loadu_pd(c), value);
  _mm256_storeu_pd(c, value);
}

// One output row, columns [j, n), scalar fma in ascending p.
inline void row_tail(std::size_t n, std::size_t k, const double* a_row, const double* b,
                     double* c_row, std::size_t j, bool accumulate) {
  for (; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc = std::fma(a_row[p], b[p * n + j], acc);
    store(c_row + j, acc, accumulate);
  }
}

// Lane-split dot: lanes accumulate p = 4q + lane, then tail in order.
inline double dot_impl(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t p = 0;
  for (; p + 4 <= n; p += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p), acc);
  }
  double sum = hsum(acc);
  for (; p < n; ++p) sum = std::fma(x[p], y[p], sum);
  return sum;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
        __m256d av = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      store4(c + (i + 0) * n + j, c00, accumulate);
      store4(c + (i + 0) * n + j + 4, c01, accumulate);
      store4(c + (i + 1) * n + j, c10, accumulate);
      store4(c + (i + 1) * n + j + 4, c11, accumulate);
      store4(c + (i + 2) * n + j, c20, accumulate);
      store4(c + (i + 2) * n + j + 4, c21, accumulate);
      store4(c + (i + 3) * n + j, c30, accumulate);
      store4(c + (i + 3) * n + j + 4, c31, accumulate);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = _mm256_loadu_pd(b + p * n + j);
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a0 + p), bv, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(a1 + p), bv, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(a2 + p), bv, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(a3 + p), bv, c3);
      }
      store4(c + (i + 0) * n + j, c0, accumulate);
      store4(c + (i + 1) * n + j, c1, accumulate);
      store4(c + (i + 2) * n + j, c2, accumulate);
      store4(c + (i + 3) * n + j, c3, accumulate);
    }
    for (std::size_t r = 0; r < 4; ++r) row_tail(n, k, a + (i + r) * k, b, c + (i + r) * n, j, accumulate);
  }
  for (; i < m; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_broadcast_sd(a_row + p);
        c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j), c0);
        c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b + p * n + j + 4), c1);
      }
      store4(c_row + j, c0, accumulate);
      store4(c_row + j + 4, c1, accumulate);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a_row + p), _mm256_loadu_pd(b + p * n + j), c0);
      }
      store4(c_row + j, c0, accumulate);
    }
    row_tail(n, k, a_row, b, c_row, j, accumulate);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const std::size_t k4 = k - k % 4;
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = a + i * k;
    double* c_row = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d av = _mm256_loadu_pd(a_row + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
      for (std::size_t p = k4; p < k; ++p) {
        t0 = std::fma(a_row[p], b0[p], t0);
        t1 = std::fma(a_row[p], b1[p], t1);
        t2 = std::fma(a_row[p], b2[p], t2);
        t3 = std::fma(a_row[p], b3[p], t3);
      }
      store(c_row + j + 0, t0, accumulate);
      store(c_row + j + 1, t1, accumulate);
      store(c_row + j + 2, t2, accumulate);
      store(c_row + j + 3, t3, accumulate);
    }
    for (; j < n; ++j) store(c_row + j, dot_impl(a_row, b + j * k, k), accumulate);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> out(m * n, 0.0);
  const std::size_t n4 = n - n % 4;
  for (std::size_t r = 0; r < k; ++r) {
    const double* a_row = a + r * m;
    const double* b_row = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double a_ri = a_row[i];
      double* o = out.data() + i * n;
      const __m256d av = _mm256_set1_pd(a_ri);
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        _mm256_storeu_pd(o + j, _mm256_fmadd_pd(av, _mm256_loadu_pd(b_row + j), _mm256_loadu_pd(o + j)));
      }
      for (; j < n; ++j) o[j] = std::fma(a_ri, b_row[j], o[j]);
    }
  }
  for (std::size_t idx = 0; idx < m * n; ++idx) store(c + idx, out[idx], accumulate);
}

double dot(const double* x, const double* y, std::size_t n) { return dot_impl(x, y, n); }

double squared_distance(const double* x, const double* y, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t p = 0;
  for (; p + 4 <= n; p += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p));
    acc = _mm256_fmadd_pd(d, d, acc);
  }
  double sum = hsum(acc);
  for (; p < n; ++p) {
    const double d = x[p] - y[p];
    sum = std::fma(d, d, sum);
  }
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t p = 0;
  for (; p + 4 <= n; p += 4) {
    _mm256_storeu_pd(y + p, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + p), _mm256_loadu_pd(y + p)));
  }
  for (; p < n; ++p) y[p] = std::fma(alpha, x[p], y[p]);
}

}  // namespace latnav::kernels::avx2
