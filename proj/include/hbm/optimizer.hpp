#pragma once

#include <cstdint>
#include <span>

#include "hbm/model.hpp"

namespace hbm {

struct AdamHyper {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;
};

// Elementwise Adam update of one tensor at (1-based) step `step`.
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> first,
                 std::span<float> second, const AdamHyper& hyper, std::uint64_t step);

AdamState adam_init(const ModelParams& params, const AdamHyper& hyper = {});

// One bias-corrected Adam update. Leaves params and state untouched and
// throws TrainingError if any gradient entry is non-finite.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state);

}  // namespace hbm
