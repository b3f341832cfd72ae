#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "layoutret/params.hpp"

namespace layoutret::inline LAYOUTRET_ABI {

struct AdamConfig {
  real learning_rate = real(1e-3);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real epsilon = real(1e-8);
};

struct AdamMoments {
  DenseMatrix first;
  DenseMatrix second;
};

/// Adam optimizer state for one parameter group. Moment buffers are created
/// lazily on the first step and keyed by tensor name.
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  /// One update over `params` using `grads` (same names and shapes). All
  /// gradients are validated before any parameter moves; a non-finite entry
  /// throws TrainingError naming the tensor.
  void step(const ParamList& params, const ParamList& grads);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  const AdamConfig& config() const { return config_; }
  std::map<std::string, AdamMoments>& moments() { return moments_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

}  // namespace layoutret::inline LAYOUTRET_ABI
