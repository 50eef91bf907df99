#pragma once

// Dense double-precision kernels used by the autodiff engine and the
// distance metrics. Every kernel has a portable scalar reference and, on
// x86-64, an AVX2/FMA variant chosen at runtime from the CPU feature bits.
//
// Reduction order contract: each output element of a GEMM is computed as an
// ascending sum over the reduction index starting from zero, and that order
// never depends on the number of rows in the call. A row's result is
// therefore identical whether it is computed alone or inside a batch.

#include <cstddef>
#include <span>
#include <string_view>

namespace latnav::kernels {

enum class Backend { scalar, avx2 };

struct KernelTable {
  Backend backend;
  const char* name;

  // C(m x n) = A(m x k) * B(k x n)
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C(m x n) = A(m x k) * B(n x k)^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  // C(m x n) = A(k x m)^T * B(k x n)
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);

  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*squared_distance)(const double* x, const double* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table() noexcept;

// nullptr when the variant was not compiled in or the CPU lacks the features.
const KernelTable* avx2_table() noexcept;

bool cpu_supports_avx2() noexcept;

// The table every caller goes through. Chosen once: LATNAV_SIMD=scalar
// forces the reference path, otherwise the widest supported variant wins.
const KernelTable& active() noexcept;

// Switches the active table (tests and benchmarking). Throws
// std::invalid_argument if the backend is unavailable on this machine.
void set_backend(Backend backend);

std::string_view backend_name(Backend backend) noexcept;

// Convenience wrappers over active().
double dot(std::span<const double> x, std::span<const double> y);
double squared_distance(std::span<const double> x, std::span<const double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace latnav::kernels
