#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "latnav/tensor.hpp"

namespace latnav {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moments are created lazily (zero-filled) on the first step so the state
// can be default-constructed before the parameter shapes are known.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bias-corrected Adam update applied in place. Throws NonFiniteError when a
// gradient entry is NaN or infinite; nothing is modified in that case.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state,
               double lr);

// Element range version used by loops that keep per-row state (projection).
// `step` is the 1-based step count for the bias correction.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamConfig& config, double lr);

}  // namespace latnav
