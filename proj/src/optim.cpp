#include "plscore/optim.hpp"

#include <cmath>

#include "plscore/errors.hpp"

namespace plscore {

void adam_step(std::vector<NamedTensor>& params,
               const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  if (params.size() != grads.size())
    throw ContractError("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.t.shape));
      state.v.push_back(Tensor::zeros(p.t.shape));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].t.same_shape(grads[i]) ||
        !params[i].t.same_shape(state.m[i]))
      throw ContractError("adam_step: shape mismatch for parameter " +
                          params[i].name);
    for (double g : grads[i].data)
      if (!std::isfinite(g))
        throw TrainError("adam_step: non-finite gradient for parameter " +
                         params[i].name);
  }
  state.step += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].t.data;
    const auto& g = grads[i].data;
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace plscore
