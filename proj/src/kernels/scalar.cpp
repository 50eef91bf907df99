#include "kernels_impl.hpp"

#include <algorithm>
#include <vector>

namespace latnav::kernels::scalar {

namespace {

void store(double* c, double value, bool accumulate) {
  *c = accumulate ? *c + value : value;
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    const double* a_row = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double a_ip = a_row[p];
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += a_ip * b_row[j];
    }
    for (std::size_t j = 0; j < n; ++j) store(c + i * n + j, row[j], accumulate);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      store(c + i * n + j, dot(a + i * k, b + j * k, k), accumulate);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    const double* a_row = a + r * m;
    const double* b_row = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double a_ri = a_row[i];
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += a_ri * b_row[j];
    }
  }
  for (std::size_t idx = 0; idx < m * n; ++idx) store(c + idx, out[idx], accumulate);
}

double dot(const double* x, const double* y, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

double squared_distance(const double* x, const double* y, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    sum += d * d;
  }
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace latnav::kernels::scalar
