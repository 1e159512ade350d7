#pragma once

// Finite-difference gradient oracle. Rebuilds the graph from scratch for
// every probe, so it stays independent of the backward implementation it
// checks.

#include <cmath>
#include <functional>
#include <vector>

#include "cunmt/graph.hpp"
#include "cunmt/rng.hpp"
#include "cunmt/tensor.hpp"

namespace cunmt::testing {

// Builds the op under test from already-inserted leaves; returns its output.
using OpBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t probes = 0;
};

// Reduces an arbitrary output to a scalar with a fixed random covector so a
// single backward checks the full Jacobian-vector product.
inline NodeId reduce_with(Graph& g, NodeId out, const Tensor& covector) {
  NodeId flat = g.reshape(out, {1, g.value(out).numel()});
  NodeId w = g.leaf(Tensor({covector.numel(), 1}, covector.data));
  NodeId prod = g.matmul(flat, w);
  return g.reshape(prod, {1});
}

inline double eval_scalar(const OpBuilder& build, const std::vector<Tensor>& inputs,
                          const Tensor& covector) {
  Graph g;
  std::vector<NodeId> ids;
  ids.reserve(inputs.size());
  for (const Tensor& t : inputs) ids.push_back(g.leaf(t));
  NodeId out = build(g, ids);
  if (g.value(out).numel() == 1) return g.value(out).data[0];
  Tensor flat_out = g.value(out);
  double acc = 0.0;
  for (std::size_t i = 0; i < flat_out.data.size(); ++i) acc += flat_out.data[i] * covector.data[i];
  return acc;
}

inline GradCheckResult gradcheck(const OpBuilder& build, const std::vector<Tensor>& inputs,
                                 Rng& rng, double h = 1e-5) {
  // Analytic side.
  Graph g;
  std::vector<NodeId> ids;
  for (const Tensor& t : inputs) ids.push_back(g.leaf(t, /*requires_grad=*/true));
  NodeId out = build(g, ids);
  Tensor covector = Tensor::zeros(g.value(out).shape);
  std::uniform_real_distribution<double> ud(-1.0, 1.0);
  for (double& v : covector.data) v = ud(rng);
  NodeId loss = g.value(out).numel() == 1 ? out : reduce_with(g, out, covector);
  GradMap grads = g.backward(loss);

  GradCheckResult res;
  for (std::size_t ii = 0; ii < inputs.size(); ++ii) {
    const Tensor& analytic = grads.at(ids[ii]);
    for (std::size_t j = 0; j < inputs[ii].data.size(); ++j) {
      std::vector<Tensor> probe = inputs;
      probe[ii].data[j] += h;
      const double fp = eval_scalar(build, probe, covector);
      probe[ii].data[j] -= 2 * h;
      const double fm = eval_scalar(build, probe, covector);
      const double fd = (fp - fm) / (2 * h);
      const double an = analytic.data[j];
      const double rel = std::fabs(an - fd) / std::max({1.0, std::fabs(an), std::fabs(fd)});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.probes;
    }
  }
  return res;
}

}  // namespace cunmt::testing
