#pragma once

#include <cstdint>
#include <vector>

#include "dcmrl/tensor.hpp"

namespace dcmrl {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Gradients are read from
// each Parameter's value.grad.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig config = {});

  // Rejects the whole step (no parameter touched) if any gradient is non-finite,
  // naming the offending parameter.
  void step();
  void zero_grad();

  std::uint64_t steps() const { return step_; }
  const std::vector<Parameter*>& params() const { return params_; }
  const AdamConfig& config() const { return config_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps(std::uint64_t s) { step_ = s; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

}  // namespace dcmrl
