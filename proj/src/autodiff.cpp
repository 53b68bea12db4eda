#include "plscore/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "plscore/errors.hpp"

namespace plscore {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var Tape::leaf(Tensor value, bool requires_grad) {
  return Var{add_node(std::move(value), requires_grad, nullptr)};
}

int Tape::add_node(Tensor value, bool requires_grad,
                   std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_buf(int idx) {
  Node& n = nodes_[idx];
  if (!n.grad_alloc) {
    n.grad = Tensor::zeros(n.value.shape);
    n.grad_alloc = true;
  }
  return n.grad;
}

const Tensor& Tape::grad(Var v) { return grad_buf(v.idx); }

void Tape::backward(Var loss) {
  if (!loss.valid() || !nodes_[loss.idx].value.is_scalar())
    throw ContractError("backward: loss must be a scalar tensor");
  for (auto& n : nodes_) {
    if (n.grad_alloc)
      for (auto& g : n.grad.data) g = 0.0;
  }
  grad_buf(loss.idx).data[0] = 1.0;
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.backprop && n.grad_alloc) n.backprop(*this);
  }
}

// ---------------------------------------------------------------------------
// ops

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.ndim() != 2 || B.ndim() != 2 || A.cols() != B.rows())
    throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " x " +
                     B.shape_str());
  const std::int64_t N = A.rows(), K = A.cols(), M = B.cols();
  Tensor C = Tensor::zeros({N, M});
  for (std::int64_t i = 0; i < N; ++i)
    for (std::int64_t j = 0; j < M; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < K; ++k) acc += A.at(i, k) * B.at(k, j);
      C.at(i, j) = acc;
    }
  bool rg = t.nodes_[a.idx].requires_grad || t.nodes_[b.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, b, out, N, K, M](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      const Tensor& A2 = tp.value(a);
      const Tensor& B2 = tp.value(b);
      if (tp.nodes_[a.idx].requires_grad) {
        Tensor& dA = tp.grad_buf(a.idx);
        for (std::int64_t i = 0; i < N; ++i)
          for (std::int64_t k = 0; k < K; ++k) {
            double acc = 0.0;
            for (std::int64_t j = 0; j < M; ++j)
              acc += dC.at(i, j) * B2.at(k, j);
            dA.at(i, k) += acc;
          }
      }
      if (tp.nodes_[b.idx].requires_grad) {
        Tensor& dB = tp.grad_buf(b.idx);
        for (std::int64_t k = 0; k < K; ++k)
          for (std::int64_t j = 0; j < M; ++j) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < N; ++i)
              acc += A2.at(i, k) * dC.at(i, j);
            dB.at(k, j) += acc;
          }
      }
    };
  }
  return Var{out};
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (!A.same_shape(B))
    throw ShapeError("add: shape mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor C = A;
  for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += B.data[i];
  bool rg = t.nodes_[a.idx].requires_grad || t.nodes_[b.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, b, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      for (Var v : {a, b}) {
        if (!tp.nodes_[v.idx].requires_grad) continue;
        Tensor& d = tp.grad_buf(v.idx);
        for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] += dC.data[i];
      }
    };
  }
  return Var{out};
}

Var add_rowvec(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.ndim() != 2 || B.ndim() != 1 || A.cols() != B.shape[0])
    throw ShapeError("add_rowvec: shape mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor C = A;
  for (std::int64_t i = 0; i < A.rows(); ++i)
    for (std::int64_t j = 0; j < A.cols(); ++j) C.at(i, j) += B.at(j);
  bool rg = t.nodes_[a.idx].requires_grad || t.nodes_[b.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, b, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      if (tp.nodes_[a.idx].requires_grad) {
        Tensor& dA = tp.grad_buf(a.idx);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
          dA.data[i] += dC.data[i];
      }
      if (tp.nodes_[b.idx].requires_grad) {
        Tensor& dB = tp.grad_buf(b.idx);
        for (std::int64_t i = 0; i < dC.rows(); ++i)
          for (std::int64_t j = 0; j < dC.cols(); ++j)
            dB.at(j) += dC.at(i, j);
      }
    };
  }
  return Var{out};
}

Var hadamard(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (!A.same_shape(B))
    throw ShapeError("hadamard: shape mismatch " + A.shape_str() + " vs " +
                     B.shape_str());
  Tensor C = A;
  for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] *= B.data[i];
  bool rg = t.nodes_[a.idx].requires_grad || t.nodes_[b.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, b, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      const Tensor& A2 = tp.value(a);
      const Tensor& B2 = tp.value(b);
      if (tp.nodes_[a.idx].requires_grad) {
        Tensor& dA = tp.grad_buf(a.idx);
        for (std::size_t i = 0; i < dA.data.size(); ++i)
          dA.data[i] += dC.data[i] * B2.data[i];
      }
      if (tp.nodes_[b.idx].requires_grad) {
        Tensor& dB = tp.grad_buf(b.idx);
        for (std::size_t i = 0; i < dB.data.size(); ++i)
          dB.data[i] += dC.data[i] * A2.data[i];
      }
    };
  }
  return Var{out};
}

Var scale(Tape& t, Var a, double s) {
  Tensor C = t.value(a);
  for (auto& v : C.data) v *= s;
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out, s](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::size_t i = 0; i < dA.data.size(); ++i)
        dA.data[i] += s * dC.data[i];
    };
  }
  return Var{out};
}

Var add_const(Tape& t, Var a, const Tensor& c) {
  const Tensor& A = t.value(a);
  if (!A.same_shape(c))
    throw ShapeError("add_const: shape mismatch " + A.shape_str() + " vs " +
                     c.shape_str());
  Tensor C = A;
  for (std::size_t i = 0; i < C.data.size(); ++i) C.data[i] += c.data[i];
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::size_t i = 0; i < dA.data.size(); ++i) dA.data[i] += dC.data[i];
    };
  }
  return Var{out};
}

Var transpose(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  if (A.ndim() != 2) throw ShapeError("transpose: need 2-D, got " + A.shape_str());
  Tensor C = Tensor::zeros({A.cols(), A.rows()});
  for (std::int64_t i = 0; i < A.rows(); ++i)
    for (std::int64_t j = 0; j < A.cols(); ++j) C.at(j, i) = A.at(i, j);
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::int64_t i = 0; i < dA.rows(); ++i)
        for (std::int64_t j = 0; j < dA.cols(); ++j)
          dA.at(i, j) += dC.at(j, i);
    };
  }
  return Var{out};
}

Var gelu(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  Tensor C = A;
  for (auto& v : C.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      const Tensor& A2 = tp.value(a);
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::size_t i = 0; i < dA.data.size(); ++i) {
        double x = A2.data[i];
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        dA.data[i] += dC.data[i] * (cdf + x * pdf);
      }
    };
  }
  return Var{out};
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = t.value(x);
  const Tensor& G = t.value(gamma);
  const Tensor& B = t.value(beta);
  if (X.ndim() != 2 || G.ndim() != 1 || B.ndim() != 1 ||
      G.shape[0] != X.cols() || B.shape[0] != X.cols())
    throw ShapeError("layer_norm: shape mismatch " + X.shape_str());
  const std::int64_t N = X.rows(), M = X.cols();
  Tensor Y = Tensor::zeros({N, M});
  Tensor xhat = Tensor::zeros({N, M});
  std::vector<double> inv_std(static_cast<std::size_t>(N));
  for (std::int64_t i = 0; i < N; ++i) {
    double mu = 0.0;
    for (std::int64_t j = 0; j < M; ++j) mu += X.at(i, j);
    mu /= static_cast<double>(M);
    double var = 0.0;
    for (std::int64_t j = 0; j < M; ++j) {
      double d = X.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(M);
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < M; ++j) {
      double h = (X.at(i, j) - mu) * is;
      xhat.at(i, j) = h;
      Y.at(i, j) = G.at(j) * h + B.at(j);
    }
  }
  bool rg = t.nodes_[x.idx].requires_grad || t.nodes_[gamma.idx].requires_grad ||
            t.nodes_[beta.idx].requires_grad;
  int out = t.add_node(std::move(Y), rg, nullptr);
  if (rg) {
    auto xh = std::make_shared<Tensor>(std::move(xhat));
    auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
    t.nodes_[out].backprop = [x, gamma, beta, out, xh, is, N, M](Tape& tp) {
      const Tensor& dY = tp.nodes_[out].grad;
      const Tensor& G2 = tp.value(gamma);
      if (tp.nodes_[gamma.idx].requires_grad) {
        Tensor& dG = tp.grad_buf(gamma.idx);
        for (std::int64_t j = 0; j < M; ++j) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < N; ++i)
            acc += dY.at(i, j) * xh->at(i, j);
          dG.at(j) += acc;
        }
      }
      if (tp.nodes_[beta.idx].requires_grad) {
        Tensor& dB = tp.grad_buf(beta.idx);
        for (std::int64_t j = 0; j < M; ++j) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < N; ++i) acc += dY.at(i, j);
          dB.at(j) += acc;
        }
      }
      if (tp.nodes_[x.idx].requires_grad) {
        Tensor& dX = tp.grad_buf(x.idx);
        for (std::int64_t i = 0; i < N; ++i) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::int64_t j = 0; j < M; ++j) {
            double dxh = dY.at(i, j) * G2.at(j);
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh->at(i, j);
          }
          mean_dxh /= static_cast<double>(M);
          mean_dxh_xh /= static_cast<double>(M);
          double s = (*is)[static_cast<std::size_t>(i)];
          for (std::int64_t j = 0; j < M; ++j) {
            double dxh = dY.at(i, j) * G2.at(j);
            dX.at(i, j) += s * (dxh - mean_dxh - xh->at(i, j) * mean_dxh_xh);
          }
        }
      }
    };
  }
  return Var{out};
}

namespace {

// log-softmax of a contiguous strided slice, max-stabilized.
void log_softmax_slice(const double* in, double* out, std::int64_t n,
                       std::int64_t stride) {
  double mx = in[0];
  for (std::int64_t i = 1; i < n; ++i)
    if (in[i * stride] > mx) mx = in[i * stride];
  double z = 0.0;
  for (std::int64_t i = 0; i < n; ++i) z += std::exp(in[i * stride] - mx);
  double lz = std::log(z);
  for (std::int64_t i = 0; i < n; ++i) out[i * stride] = in[i * stride] - mx - lz;
}

}  // namespace

Var log_softmax(Tape& t, Var a, int axis) {
  const Tensor& A = t.value(a);
  if (A.ndim() < 1 || A.ndim() > 2)
    throw ShapeError("log_softmax: need 1-D or 2-D, got " + A.shape_str());
  if (axis < 0) axis += A.ndim();
  if (axis < 0 || axis >= A.ndim())
    throw ContractError("log_softmax: invalid axis");
  if (A.shape[static_cast<std::size_t>(axis)] == 0)
    throw DomainError("log_softmax: empty axis");
  Tensor C = A;
  std::int64_t n, stride, count, step;
  if (A.ndim() == 1) {
    n = A.shape[0]; stride = 1; count = 1; step = 0;
  } else if (axis == 1) {
    n = A.cols(); stride = 1; count = A.rows(); step = A.cols();
  } else {
    n = A.rows(); stride = A.cols(); count = A.cols(); step = 1;
  }
  for (std::int64_t s = 0; s < count; ++s)
    log_softmax_slice(A.data.data() + s * step, C.data.data() + s * step, n,
                      stride);
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out, n, stride, count, step](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      const Tensor& Y = tp.nodes_[out].value;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::int64_t s = 0; s < count; ++s) {
        const double* dy = dC.data.data() + s * step;
        const double* y = Y.data.data() + s * step;
        double* dx = dA.data.data() + s * step;
        double tot = 0.0;
        for (std::int64_t i = 0; i < n; ++i) tot += dy[i * stride];
        for (std::int64_t i = 0; i < n; ++i)
          dx[i * stride] += dy[i * stride] - std::exp(y[i * stride]) * tot;
      }
    };
  }
  return Var{out};
}

Var softmax_rows(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  if (A.ndim() != 2) throw ShapeError("softmax_rows: need 2-D, got " + A.shape_str());
  if (A.cols() == 0) throw DomainError("softmax_rows: empty rows");
  Tensor C = A;
  for (std::int64_t i = 0; i < A.rows(); ++i) {
    double mx = A.at(i, 0);
    for (std::int64_t j = 1; j < A.cols(); ++j)
      if (A.at(i, j) > mx) mx = A.at(i, j);
    double z = 0.0;
    for (std::int64_t j = 0; j < A.cols(); ++j) {
      double e = std::exp(A.at(i, j) - mx);
      C.at(i, j) = e;
      z += e;
    }
    for (std::int64_t j = 0; j < A.cols(); ++j) C.at(i, j) /= z;
  }
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      const Tensor& Y = tp.nodes_[out].value;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::int64_t i = 0; i < Y.rows(); ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < Y.cols(); ++j)
          dot += dC.at(i, j) * Y.at(i, j);
        for (std::int64_t j = 0; j < Y.cols(); ++j)
          dA.at(i, j) += Y.at(i, j) * (dC.at(i, j) - dot);
      }
    };
  }
  return Var{out};
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& ids) {
  const Tensor& T = t.value(table);
  if (T.ndim() != 2) throw ShapeError("gather_rows: need 2-D table");
  for (int id : ids)
    if (id < 0 || id >= T.rows())
      throw ContractError("gather_rows: index out of range: " +
                          std::to_string(id));
  const std::int64_t M = T.cols();
  Tensor C = Tensor::zeros({static_cast<std::int64_t>(ids.size()), M});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::int64_t j = 0; j < M; ++j)
      C.at(static_cast<std::int64_t>(i), j) = T.at(ids[i], j);
  bool rg = t.nodes_[table.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [table, out, ids, M](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dT = tp.grad_buf(table.idx);
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::int64_t j = 0; j < M; ++j)
          dT.at(ids[i], j) += dC.at(static_cast<std::int64_t>(i), j);
    };
  }
  return Var{out};
}

Var slice_cols(Tape& t, Var a, std::int64_t c0, std::int64_t c1) {
  const Tensor& A = t.value(a);
  if (A.ndim() != 2 || c0 < 0 || c1 > A.cols() || c0 >= c1)
    throw ShapeError("slice_cols: bad range on " + A.shape_str());
  Tensor C = Tensor::zeros({A.rows(), c1 - c0});
  for (std::int64_t i = 0; i < A.rows(); ++i)
    for (std::int64_t j = c0; j < c1; ++j) C.at(i, j - c0) = A.at(i, j);
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out, c0, c1](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::int64_t i = 0; i < dC.rows(); ++i)
        for (std::int64_t j = c0; j < c1; ++j)
          dA.at(i, j) += dC.at(i, j - c0);
    };
  }
  return Var{out};
}

Var slice_rows(Tape& t, Var a, std::int64_t r0, std::int64_t r1) {
  const Tensor& A = t.value(a);
  if (A.ndim() != 2 || r0 < 0 || r1 > A.rows() || r0 >= r1)
    throw ShapeError("slice_rows: bad range on " + A.shape_str());
  Tensor C = Tensor::zeros({r1 - r0, A.cols()});
  for (std::int64_t i = r0; i < r1; ++i)
    for (std::int64_t j = 0; j < A.cols(); ++j) C.at(i - r0, j) = A.at(i, j);
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out, r0, r1](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::int64_t i = r0; i < r1; ++i)
        for (std::int64_t j = 0; j < dA.cols(); ++j)
          dA.at(i, j) += dC.at(i - r0, j);
    };
  }
  return Var{out};
}

Var concat_cols(Tape& t, const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  std::int64_t N = t.value(parts[0]).rows();
  std::int64_t M = 0;
  bool rg = false;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    if (P.ndim() != 2 || P.rows() != N)
      throw ShapeError("concat_cols: row mismatch");
    M += P.cols();
    rg = rg || t.nodes_[p.idx].requires_grad;
  }
  Tensor C = Tensor::zeros({N, M});
  std::int64_t off = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    for (std::int64_t i = 0; i < N; ++i)
      for (std::int64_t j = 0; j < P.cols(); ++j)
        C.at(i, off + j) = P.at(i, j);
    off += P.cols();
  }
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    auto ps = parts;
    t.nodes_[out].backprop = [ps, out, N](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      std::int64_t off2 = 0;
      for (Var p : ps) {
        std::int64_t w = tp.value(p).cols();
        if (tp.nodes_[p.idx].requires_grad) {
          Tensor& dP = tp.grad_buf(p.idx);
          for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t j = 0; j < w; ++j)
              dP.at(i, j) += dC.at(i, off2 + j);
        }
        off2 += w;
      }
    };
  }
  return Var{out};
}

Var pick(Tape& t, Var a, const std::vector<std::pair<int, int>>& at) {
  const Tensor& A = t.value(a);
  if (A.ndim() != 2) throw ShapeError("pick: need 2-D, got " + A.shape_str());
  for (auto [i, j] : at)
    if (i < 0 || i >= A.rows() || j < 0 || j >= A.cols())
      throw ContractError("pick: index out of range");
  Tensor C = Tensor::zeros({static_cast<std::int64_t>(at.size())});
  for (std::size_t k = 0; k < at.size(); ++k)
    C.at(static_cast<std::int64_t>(k)) = A.at(at[k].first, at[k].second);
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out, at](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::size_t k = 0; k < at.size(); ++k)
        dA.at(at[k].first, at[k].second) +=
            dC.at(static_cast<std::int64_t>(k));
    };
  }
  return Var{out};
}

Var sum(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  double acc = 0.0;
  for (double v : A.data) acc += v;
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(Tensor::scalar(acc), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out](Tape& tp) {
      double d = tp.nodes_[out].grad.data[0];
      Tensor& dA = tp.grad_buf(a.idx);
      for (auto& g : dA.data) g += d;
    };
  }
  return Var{out};
}

Var mean(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  if (A.numel() == 0) throw DomainError("mean: empty tensor");
  Var s = sum(t, a);
  return scale(t, s, 1.0 / static_cast<double>(A.numel()));
}

Var dropout(Tape& t, Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  if (rate >= 1.0) throw ContractError("dropout: rate must be < 1");
  const Tensor& A = t.value(a);
  auto mask = std::make_shared<std::vector<double>>(A.data.size());
  double keep = 1.0 - rate;
  Tensor C = A;
  for (std::size_t i = 0; i < C.data.size(); ++i) {
    double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    (*mask)[i] = m;
    C.data[i] *= m;
  }
  bool rg = t.nodes_[a.idx].requires_grad;
  int out = t.add_node(std::move(C), rg, nullptr);
  if (rg) {
    t.nodes_[out].backprop = [a, out, mask](Tape& tp) {
      const Tensor& dC = tp.nodes_[out].grad;
      Tensor& dA = tp.grad_buf(a.idx);
      for (std::size_t i = 0; i < dA.data.size(); ++i)
        dA.data[i] += dC.data[i] * (*mask)[i];
    };
  }
  return Var{out};
}

}  // namespace plscore
