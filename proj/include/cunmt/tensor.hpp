#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cunmt/rng.hpp"

namespace cunmt {

// Dense row-major f64 tensor. Immutable by convention once handed to a
// Graph; the trainer mutates only the tensors it owns (parameters) between
// steps, never while a snapshot is being read elsewhere.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<double> d);

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value);
  // N(0, stddev), deterministic in rng state.
  static Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double stddev = 1.0);

  std::int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  std::int64_t last_dim() const { return shape.empty() ? 1 : shape.back(); }
  // product of all dims but the last (row count when viewed as a matrix)
  std::int64_t rows() const;

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * last_dim() + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * last_dim() + c)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

}  // namespace cunmt
