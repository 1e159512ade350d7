#include "cunmt/tensor.hpp"

#include <cmath>
#include <sstream>

#include "cunmt/errors.hpp"

namespace cunmt {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  for (std::int64_t dim : shape) {
    if (dim <= 0) throw ContractError("tensor: non-positive dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ContractError("tensor: shape " + shape_str(shape) + " does not match data length " +
                        std::to_string(data.size()));
  }
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(std::vector<std::int64_t> shape, Rng& rng, double stddev) {
  Tensor t = zeros(std::move(shape));
  std::normal_distribution<double> nd(0.0, stddev);
  for (double& v : t.data) v = nd(rng);
  return t;
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(data.size()); }

std::int64_t Tensor::rows() const {
  if (shape.empty()) return 1;
  return numel() / shape.back();
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace cunmt
