#pragma once

#include <string>
#include <vector>

#include "plscore/tensor.hpp"

namespace plscore {

struct NamedTensor {
  std::string name;
  Tensor t;
};

// First/second moment estimates, one pair per parameter.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

// One bias-corrected Adam update in place. `grads` aligns with `params`;
// a non-finite gradient aborts with the parameter's name.
void adam_step(std::vector<NamedTensor>& params,
               const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

}  // namespace plscore
