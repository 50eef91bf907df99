#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "kernels_impl.hpp"

namespace latnav::kernels {

namespace {

constexpr KernelTable kScalar{
    Backend::scalar, "scalar",      &scalar::gemm_nn,          &scalar::gemm_nt,
    &scalar::gemm_tn, &scalar::dot, &scalar::squared_distance, &scalar::axpy,
};

#if defined(LATNAV_HAVE_AVX2)
constexpr KernelTable kAvx2{
    Backend::avx2,  "avx2",       &avx2::gemm_nn,          &avx2::gemm_nt,
    &avx2::gemm_tn, &avx2::dot,   &avx2::squared_distance, &avx2::axpy,
};
#endif

const KernelTable* select_default() noexcept {
  if (const char* env = std::getenv("LATNAV_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return &kScalar;
  }
  if (const KernelTable* wide = avx2_table()) return wide;
  return &kScalar;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{select_default()};
  return table;
}

}  // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

bool cpu_supports_avx2() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* avx2_table() noexcept {
#if defined(LATNAV_HAVE_AVX2)
  if (cpu_supports_avx2()) return &kAvx2;
#endif
  return nullptr;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_acquire); }

void set_backend(Backend backend) {
  switch (backend) {
    case Backend::scalar:
      current().store(&kScalar, std::memory_order_release);
      return;
    case Backend::avx2:
      if (const KernelTable* wide = avx2_table()) {
        current().store(wide, std::memory_order_release);
        return;
      }
      throw std::invalid_argument("avx2 kernels are not available on this machine");
  }
}

std::string_view backend_name(Backend backend) noexcept {
  return backend == Backend::avx2 ? "avx2" : "scalar";
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: length mismatch");
  return active().dot(x.data(), y.data(), x.size());
}

double squared_distance(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("squared_distance: length mismatch");
  return active().squared_distance(x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace latnav::kernels
