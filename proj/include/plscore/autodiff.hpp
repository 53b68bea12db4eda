#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "plscore/rng.hpp"
#include "plscore/tensor.hpp"

namespace plscore {

// Handle to a node on a Tape.
struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Define-by-run reverse-mode tape. Values are computed eagerly when an op
// is applied; backward() replays the recorded closures in reverse creation
// order. A tape is owned by a single thread.
class Tape {
 public:
  Var leaf(Tensor value, bool requires_grad = false);

  const Tensor& value(Var v) const { return nodes_[v.idx].value; }
  Tensor& value(Var v) { return nodes_[v.idx].value; }

  // Gradient of the last backward() loss w.r.t. v. Zeros if unreached.
  const Tensor& grad(Var v);

  // Reverse sweep from a scalar loss. Throws ContractError otherwise.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    std::function<void(Tape&)> backprop;  // empty for leaves / detached nodes
  };

  int add_node(Tensor value, bool requires_grad,
               std::function<void(Tape&)> backprop);
  Tensor& grad_buf(int idx);

  std::vector<Node> nodes_;

  friend Var matmul(Tape&, Var, Var);
  friend Var add(Tape&, Var, Var);
  friend Var add_rowvec(Tape&, Var, Var);
  friend Var hadamard(Tape&, Var, Var);
  friend Var scale(Tape&, Var, double);
  friend Var add_const(Tape&, Var, const Tensor&);
  friend Var transpose(Tape&, Var);
  friend Var gelu(Tape&, Var);
  friend Var layer_norm(Tape&, Var, Var, Var, double);
  friend Var log_softmax(Tape&, Var, int);
  friend Var softmax_rows(Tape&, Var);
  friend Var gather_rows(Tape&, Var, const std::vector<int>&);
  friend Var slice_cols(Tape&, Var, std::int64_t, std::int64_t);
  friend Var slice_rows(Tape&, Var, std::int64_t, std::int64_t);
  friend Var concat_cols(Tape&, const std::vector<Var>&);
  friend Var pick(Tape&, Var, const std::vector<std::pair<int, int>>&);
  friend Var sum(Tape&, Var);
  friend Var mean(Tape&, Var);
  friend Var dropout(Tape&, Var, double, Rng&);
};

// Matrix product of 2-D tensors; inner extents must agree.
Var matmul(Tape& t, Var a, Var b);
// Elementwise sum of same-shape tensors.
Var add(Tape& t, Var a, Var b);
// Adds a length-M vector to every row of an [N, M] matrix.
Var add_rowvec(Tape& t, Var a, Var b);
// Elementwise product of same-shape tensors.
Var hadamard(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
// Adds a constant (non-differentiated) tensor, e.g. an attention mask.
Var add_const(Tape& t, Var a, const Tensor& c);
Var transpose(Tape& t, Var a);
// Gaussian error linear unit, exact (erf) form.
Var gelu(Tape& t, Var a);
// Row-wise layer normalization with learned gain/bias.
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
// Log-softmax along `axis` of a 1-D or 2-D tensor, max-stabilized.
Var log_softmax(Tape& t, Var a, int axis);
Var softmax_rows(Tape& t, Var a);
// rows of `table` selected by index; backward scatter-adds.
Var gather_rows(Tape& t, Var table, const std::vector<int>& ids);
Var slice_cols(Tape& t, Var a, std::int64_t c0, std::int64_t c1);
Var slice_rows(Tape& t, Var a, std::int64_t r0, std::int64_t r1);
Var concat_cols(Tape& t, const std::vector<Var>& parts);
// Gathers entries (row, col) of a 2-D tensor into a vector.
Var pick(Tape& t, Var a, const std::vector<std::pair<int, int>>& at);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
// Inverted dropout; identity when rate == 0.
Var dropout(Tape& t, Var a, double rate, Rng& rng);

}  // namespace plscore
