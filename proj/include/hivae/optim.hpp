#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hivae/tensor.hpp"

namespace hivae {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

// One bias-corrected Adam update of `params` in place. State buffers are
// created on first use.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               const AdamConfig& config);

// Adam over a fixed list of leaf tensors.
class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, AdamConfig config);

  void step();
  void zero_grad();
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<AdamState> states_;
  AdamConfig config_;
};

}  // namespace hivae
