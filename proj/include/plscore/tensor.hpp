#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "plscore/errors.hpp"

namespace plscore {

// Dense row-major array of reals. Log-domain where probabilistic.
// Reductions over its contents always run left to right so that repeated
// runs are bit-identical.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {}

  static Tensor zeros(std::vector<std::int64_t> s) {
    std::int64_t n = 1;
    for (auto e : s) n *= e;
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  }

  static Tensor full(std::vector<std::int64_t> s, double v) {
    Tensor t = zeros(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  static Tensor row(std::vector<double> d) {
    auto n = static_cast<std::int64_t>(d.size());
    return Tensor({n}, std::move(d));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::int64_t r = static_cast<std::int64_t>(rows.size());
    std::int64_t c = r > 0 ? static_cast<std::int64_t>(rows.begin()->size()) : 0;
    Tensor t = zeros({r, c});
    std::size_t i = 0;
    for (const auto& rr : rows)
      for (double v : rr) t.data[i++] = v;
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return shape.empty() && data.size() == 1; }

  std::int64_t rows() const { return shape.at(0); }
  std::int64_t cols() const { return shape.at(1); }

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t i, std::int64_t j) {
    return data[static_cast<std::size_t>(i * cols() + j)];
  }
  double at(std::int64_t i, std::int64_t j) const {
    return data[static_cast<std::size_t>(i * cols() + j)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

}  // namespace plscore
