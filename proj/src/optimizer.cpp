#include "hbm/optimizer.hpp"

#include <cmath>

#include "hbm/errors.hpp"

namespace hbm {

namespace {

ParameterSet zeros_like(const ParameterSet& params) {
  ParameterSet out = params;
  for (Mat* m : tensor_list(out)) std::fill(m->values().begin(), m->values().end(), 0.0f);
  return out;
}

}  // namespace

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> first,
                 std::span<float> second, const AdamHyper& hyper, std::uint64_t step) {
  const double correction1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = hyper.beta1 * first[i] + (1.0 - hyper.beta1) * g;
    const double v = hyper.beta2 * second[i] + (1.0 - hyper.beta2) * g * g;
    first[i] = static_cast<float>(m);
    second[i] = static_cast<float>(v);
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    param[i] = static_cast<float>(param[i] - hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps));
  }
}

AdamState adam_init(const ModelParams& params, const AdamHyper& hyper) {
  if (!(hyper.lr >= 0.0) || !(hyper.eps > 0.0) || !(hyper.beta1 > 0.0 && hyper.beta1 < 1.0) ||
      !(hyper.beta2 > 0.0 && hyper.beta2 < 1.0)) {
    throw ConfigError("adam_init: invalid hyperparameters");
  }
  return {hyper, 0, zeros_like(params), zeros_like(params)};
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state) {
  auto theta = tensor_list(params);
  const auto g = tensor_list(grads);
  auto m = tensor_list(state.first_moment);
  auto v = tensor_list(state.second_moment);
  if (g.size() != theta.size() || m.size() != theta.size()) {
    throw ShapeError("adam_step: gradient structure does not match parameters");
  }
  for (std::size_t t = 0; t < theta.size(); ++t) {
    if (!g[t]->same_shape(*theta[t]) || !m[t]->same_shape(*theta[t])) {
      throw ShapeError("adam_step: tensor shape mismatch");
    }
    if (!all_finite(*g[t])) throw TrainingError("adam_step: non-finite gradient, step aborted");
  }

  state.step += 1;
  for (std::size_t t = 0; t < theta.size(); ++t) {
    adam_update(theta[t]->values(), g[t]->values(), m[t]->values(), v[t]->values(), state.hyper,
                state.step);
  }
  params.generation += 1;
}

}  // namespace hbm
