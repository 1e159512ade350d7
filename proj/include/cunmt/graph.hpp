#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cunmt/tensor.hpp"

namespace cunmt {

using NodeId = std::int32_t;

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,
  scale,
  gelu,
  softmax_lastdim,
  layer_norm,
  embed_gather,
  concat,
  transpose_last2,
  reshape,
  split_heads,
  merge_heads,
  cross_entropy,
};

const char* op_name(OpKind kind);

struct Node {
  OpKind kind = OpKind::leaf;
  std::vector<NodeId> inputs;
  Tensor value;
  bool requires_grad = false;
  // op-specific payload
  std::vector<std::int64_t> iaux;     // reshape target, head count, concat widths
  std::vector<std::int32_t> tokens;   // gather indices / cross-entropy targets
  double factor = 0.0;                // scale coefficient
  std::int32_t pad_id = -1;           // cross-entropy padding id
};

// Gradients from one backward pass, addressed by node id. Nodes that
// require gradients but are unreachable from the loss hold zeros.
class GradMap {
 public:
  explicit GradMap(std::size_t n) : grads_(n) {}
  bool has(NodeId id) const { return !grads_[static_cast<std::size_t>(id)].data.empty(); }
  const Tensor& at(NodeId id) const;
  Tensor& slot(NodeId id) { return grads_[static_cast<std::size_t>(id)]; }

 private:
  std::vector<Tensor> grads_;
};

// Reverse-mode tape. Append-only: every input id precedes its consumer, so
// reverse creation order is a valid reverse topological order. A graph is
// single-threaded; distinct graphs may live on distinct threads.
class Graph {
 public:
  NodeId leaf(Tensor value, bool requires_grad = false);

  // (m,k)x(k,n), (B,m,k)x(B,k,n), or (B,m,k)x(k,n) with the right factor
  // broadcast over the leading batch dimension.
  NodeId matmul(NodeId a, NodeId b);
  // Elementwise; the second operand may be a trailing-shape suffix of the
  // first, broadcast over the leading dimensions.
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double factor);
  NodeId gelu(NodeId a);
  NodeId softmax_lastdim(NodeId a);
  // Per-row normalization over the last dimension to mean 0, variance 1.
  // Learned scale/offset are applied by the caller via mul/add.
  NodeId layer_norm(NodeId a);
  // out[i,:] = table[ids[i],:]
  NodeId embed_gather(NodeId table, const std::vector<std::int32_t>& ids);
  // Concatenate along the last dimension; all leading dims must match.
  NodeId concat(const std::vector<NodeId>& parts);
  NodeId transpose_last2(NodeId a);
  NodeId reshape(NodeId a, std::vector<std::int64_t> new_shape);
  // [B,T,H] -> [B*heads, T, H/heads] and back.
  NodeId split_heads(NodeId a, std::int64_t heads);
  NodeId merge_heads(NodeId a, std::int64_t heads);
  // Mean -log softmax(logits)[target] over non-pad targets; scalar output.
  NodeId cross_entropy(NodeId logits, const std::vector<std::int32_t>& targets,
                       std::int32_t pad_id);

  const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Node& node(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse-mode sweep from a scalar loss. Deterministic: same graph, same
  // result, bit for bit.
  GradMap backward(NodeId loss) const;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

 private:
  NodeId push(Node n);
  void check_finite(NodeId id, const char* op) const;

  std::vector<Node> nodes_;
};

double layer_norm_epsilon();

}  // namespace cunmt
