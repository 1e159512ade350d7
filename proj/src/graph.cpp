#include "cunmt/graph.hpp"

#include <algorithm>
#include <cmath>

#include "cunmt/errors.hpp"

namespace cunmt {

namespace {

constexpr double kLnEps = 1e-10;
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

// C[m,n] += A[m,k] * B[k,n]
void matmul_acc(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
                std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] * B[k,n]^T
void matmul_acc_da(const double* dc, const double* b, double* da, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::int64_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB[k,n] += A[m,k]^T * dC[m,n]
void matmul_acc_db(const double* a, const double* dc, double* db, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* dbrow = db + p * n;
      for (std::int64_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

bool is_suffix(const std::vector<std::int64_t>& small, const std::vector<std::int64_t>& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

double layer_norm_epsilon() { return kLnEps; }

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax_lastdim: return "softmax_lastdim";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::embed_gather: return "embed_gather";
    case OpKind::concat: return "concat";
    case OpKind::transpose_last2: return "transpose_last2";
    case OpKind::reshape: return "reshape";
    case OpKind::split_heads: return "split_heads";
    case OpKind::merge_heads: return "merge_heads";
    case OpKind::cross_entropy: return "cross_entropy";
  }
  return "?";
}

const Tensor& GradMap::at(NodeId id) const {
  const Tensor& t = grads_[static_cast<std::size_t>(id)];
  if (t.data.empty()) throw ContractError("gradient requested for a node without one");
  return t;
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

void Graph::check_finite(NodeId id, const char* op) const {
  if (!value(id).all_finite()) {
    throw ContractError(std::string(op) + ": non-finite input tensor " + shape_str(value(id).shape));
  }
}

NodeId Graph::leaf(Tensor v, bool requires_grad) {
  if (!v.all_finite()) throw ContractError("leaf: non-finite input tensor " + shape_str(v.shape));
  Node n;
  n.kind = OpKind::leaf;
  n.value = std::move(v);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  const int ra = ta.rank();
  const int rb = tb.rank();
  auto bad = [&] {
    return ContractError("matmul: shape mismatch " + shape_str(ta.shape) + " vs " +
                         shape_str(tb.shape));
  };

  std::int64_t batch = 1, m = 0, k = 0, nn = 0;
  bool b_broadcast = false;
  if (ra == 2 && rb == 2) {
    m = ta.dim(0); k = ta.dim(1);
    if (tb.dim(0) != k) throw bad();
    nn = tb.dim(1);
  } else if (ra == 3 && rb == 3) {
    batch = ta.dim(0); m = ta.dim(1); k = ta.dim(2);
    if (tb.dim(0) != batch || tb.dim(1) != k) throw bad();
    nn = tb.dim(2);
  } else if (ra == 3 && rb == 2) {
    batch = ta.dim(0); m = ta.dim(1); k = ta.dim(2);
    if (tb.dim(0) != k) throw bad();
    nn = tb.dim(1);
    b_broadcast = true;
  } else {
    throw bad();
  }

  std::vector<std::int64_t> out_shape =
      (ra == 2) ? std::vector<std::int64_t>{m, nn} : std::vector<std::int64_t>{batch, m, nn};
  Node n;
  n.kind = OpKind::matmul;
  n.inputs = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = Tensor::zeros(std::move(out_shape));
  for (std::int64_t s = 0; s < batch; ++s) {
    const double* pa = ta.data.data() + s * m * k;
    const double* pb = tb.data.data() + (b_broadcast ? 0 : s * k * nn);
    matmul_acc(pa, pb, n.value.data.data() + s * m * nn, m, k, nn);
  }
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_finite(a, "add");
  check_finite(b, "add");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!is_suffix(tb.shape, ta.shape)) {
    throw ContractError("add: shape mismatch " + shape_str(ta.shape) + " vs " +
                        shape_str(tb.shape));
  }
  Node n;
  n.kind = OpKind::add;
  n.inputs = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = ta;
  const std::int64_t inner = tb.numel();
  const std::int64_t outer = ta.numel() / inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    double* out = n.value.data.data() + o * inner;
    for (std::int64_t i = 0; i < inner; ++i) out[i] += tb.data[static_cast<std::size_t>(i)];
  }
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_finite(a, "mul");
  check_finite(b, "mul");
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (!is_suffix(tb.shape, ta.shape)) {
    throw ContractError("mul: shape mismatch " + shape_str(ta.shape) + " vs " +
                        shape_str(tb.shape));
  }
  Node n;
  n.kind = OpKind::mul;
  n.inputs = {a, b};
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  n.value = ta;
  const std::int64_t inner = tb.numel();
  const std::int64_t outer = ta.numel() / inner;
  for (std::int64_t o = 0; o < outer; ++o) {
    double* out = n.value.data.data() + o * inner;
    for (std::int64_t i = 0; i < inner; ++i) out[i] *= tb.data[static_cast<std::size_t>(i)];
  }
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double factor) {
  check_finite(a, "scale");
  if (!std::isfinite(factor)) throw ContractError("scale: non-finite factor");
  Node n;
  n.kind = OpKind::scale;
  n.inputs = {a};
  n.factor = factor;
  n.requires_grad = node(a).requires_grad;
  n.value = value(a);
  for (double& v : n.value.data) v *= factor;
  return push(std::move(n));
}

NodeId Graph::gelu(NodeId a) {
  check_finite(a, "gelu");
  Node n;
  n.kind = OpKind::gelu;
  n.inputs = {a};
  n.requires_grad = node(a).requires_grad;
  n.value = value(a);
  for (double& v : n.value.data) v = v * norm_cdf(v);
  return push(std::move(n));
}

NodeId Graph::softmax_lastdim(NodeId a) {
  check_finite(a, "softmax_lastdim");
  const Tensor& ta = value(a);
  Node n;
  n.kind = OpKind::softmax_lastdim;
  n.inputs = {a};
  n.requires_grad = node(a).requires_grad;
  n.value = ta;
  const std::int64_t cols = ta.last_dim();
  const std::int64_t rows = ta.rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = n.value.data.data() + r * cols;
    double mx = row[0];
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::int64_t j = 0; j < cols; ++j) row[j] *= inv;
  }
  return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId a) {
  check_finite(a, "layer_norm");
  const Tensor& ta = value(a);
  if (ta.last_dim() < 2) {
    throw ContractError("layer_norm: last dimension must be >= 2, got " + shape_str(ta.shape));
  }
  Node n;
  n.kind = OpKind::layer_norm;
  n.inputs = {a};
  n.requires_grad = node(a).requires_grad;
  n.value = ta;
  const std::int64_t cols = ta.last_dim();
  const std::int64_t rows = ta.rows();
  for (std::int64_t r = 0; r < rows; ++r) {
    double* row = n.value.data.data() + r * cols;
    double mean = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) mean += row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    for (std::int64_t j = 0; j < cols; ++j) row[j] = (row[j] - mean) * inv;
  }
  return push(std::move(n));
}

NodeId Graph::embed_gather(NodeId table, const std::vector<std::int32_t>& ids) {
  check_finite(table, "embed_gather");
  const Tensor& tt = value(table);
  if (tt.rank() != 2) {
    throw ContractError("embed_gather: table must be rank 2, got " + shape_str(tt.shape));
  }
  if (ids.empty()) throw ContractError("embed_gather: empty id list");
  const std::int64_t vocab = tt.dim(0);
  const std::int64_t width = tt.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || id >= vocab) {
      throw ContractError("embed_gather: id " + std::to_string(id) + " outside table of " +
                          std::to_string(vocab) + " rows");
    }
  }
  Node n;
  n.kind = OpKind::embed_gather;
  n.inputs = {table};
  n.tokens = ids;
  n.requires_grad = node(table).requires_grad;
  n.value = Tensor::zeros({static_cast<std::int64_t>(ids.size()), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double* src = tt.data.data() + static_cast<std::int64_t>(ids[i]) * width;
    std::copy(src, src + width, n.value.data.data() + static_cast<std::int64_t>(i) * width);
  }
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts) {
  if (parts.size() < 2) throw ContractError("concat: needs at least two inputs");
  const Tensor& first = value(parts[0]);
  std::vector<std::int64_t> lead(first.shape.begin(), first.shape.end() - 1);
  std::int64_t total = 0;
  Node n;
  n.kind = OpKind::concat;
  for (NodeId p : parts) {
    check_finite(p, "concat");
    const Tensor& t = value(p);
    std::vector<std::int64_t> plead(t.shape.begin(), t.shape.end() - 1);
    if (plead != lead) {
      throw ContractError("concat: shape mismatch " + shape_str(first.shape) + " vs " +
                          shape_str(t.shape));
    }
    n.iaux.push_back(t.last_dim());
    total += t.last_dim();
    n.requires_grad = n.requires_grad || node(p).requires_grad;
  }
  n.inputs = parts;
  std::vector<std::int64_t> out_shape = lead;
  out_shape.push_back(total);
  n.value = Tensor::zeros(std::move(out_shape));
  const std::int64_t rows = n.value.rows();
  std::int64_t col_off = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const Tensor& t = value(parts[pi]);
    const std::int64_t w = t.last_dim();
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy(t.data.data() + r * w, t.data.data() + (r + 1) * w,
                n.value.data.data() + r * total + col_off);
    }
    col_off += w;
  }
  return push(std::move(n));
}

NodeId Graph::transpose_last2(NodeId a) {
  check_finite(a, "transpose_last2");
  const Tensor& ta = value(a);
  if (ta.rank() < 2) {
    throw ContractError("transpose_last2: needs rank >= 2, got " + shape_str(ta.shape));
  }
  const std::int64_t m = ta.dim(ta.rank() - 2);
  const std::int64_t c = ta.last_dim();
  const std::int64_t batch = ta.numel() / (m * c);
  std::vector<std::int64_t> out_shape = ta.shape;
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Node n;
  n.kind = OpKind::transpose_last2;
  n.inputs = {a};
  n.requires_grad = node(a).requires_grad;
  n.value = Tensor::zeros(std::move(out_shape));
  for (std::int64_t s = 0; s < batch; ++s) {
    const double* src = ta.data.data() + s * m * c;
    double* dst = n.value.data.data() + s * m * c;
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < c; ++j) dst[j * m + i] = src[i * c + j];
  }
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId a, std::vector<std::int64_t> new_shape) {
  check_finite(a, "reshape");
  const Tensor& ta = value(a);
  if (shape_numel(new_shape) != ta.numel()) {
    throw ContractError("reshape: shape mismatch " + shape_str(ta.shape) + " vs " +
                        shape_str(new_shape));
  }
  Node n;
  n.kind = OpKind::reshape;
  n.inputs = {a};
  n.requires_grad = node(a).requires_grad;
  n.value = Tensor(std::move(new_shape), ta.data);
  return push(std::move(n));
}

NodeId Graph::split_heads(NodeId a, std::int64_t heads) {
  check_finite(a, "split_heads");
  const Tensor& ta = value(a);
  if (ta.rank() != 3 || heads < 1 || ta.dim(2) % heads != 0) {
    throw ContractError("split_heads: cannot split " + shape_str(ta.shape) + " into " +
                        std::to_string(heads) + " heads");
  }
  const std::int64_t b = ta.dim(0), t = ta.dim(1), h = ta.dim(2);
  const std::int64_t dh = h / heads;
  Node n;
  n.kind = OpKind::split_heads;
  n.inputs = {a};
  n.iaux = {heads};
  n.requires_grad = node(a).requires_grad;
  n.value = Tensor::zeros({b * heads, t, dh});
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ti = 0; ti < t; ++ti)
      for (std::int64_t hi = 0; hi < heads; ++hi) {
        const double* src = ta.data.data() + (bi * t + ti) * h + hi * dh;
        double* dst = n.value.data.data() + ((bi * heads + hi) * t + ti) * dh;
        std::copy(src, src + dh, dst);
      }
  return push(std::move(n));
}

NodeId Graph::merge_heads(NodeId a, std::int64_t heads) {
  check_finite(a, "merge_heads");
  const Tensor& ta = value(a);
  if (ta.rank() != 3 || heads < 1 || ta.dim(0) % heads != 0) {
    throw ContractError("merge_heads: cannot merge " + shape_str(ta.shape) + " from " +
                        std::to_string(heads) + " heads");
  }
  const std::int64_t b = ta.dim(0) / heads, t = ta.dim(1), dh = ta.dim(2);
  Node n;
  n.kind = OpKind::merge_heads;
  n.inputs = {a};
  n.iaux = {heads};
  n.requires_grad = node(a).requires_grad;
  n.value = Tensor::zeros({b, t, heads * dh});
  for (std::int64_t bi = 0; bi < b; ++bi)
    for (std::int64_t ti = 0; ti < t; ++ti)
      for (std::int64_t hi = 0; hi < heads; ++hi) {
        const double* src = ta.data.data() + ((bi * heads + hi) * t + ti) * dh;
        double* dst = n.value.data.data() + (bi * t + ti) * heads * dh + hi * dh;
        std::copy(src, src + dh, dst);
      }
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId logits, const std::vector<std::int32_t>& targets,
                            std::int32_t pad_id) {
  check_finite(logits, "cross_entropy");
  const Tensor& tl = value(logits);
  if (tl.rank() != 2) {
    throw ContractError("cross_entropy: logits must be rank 2, got " + shape_str(tl.shape));
  }
  const std::int64_t rows = tl.dim(0);
  const std::int64_t vocab = tl.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != rows) {
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(rows) + " rows");
  }
  std::int64_t count = 0;
  for (std::int32_t t : targets) {
    if (t == pad_id) continue;
    if (t < 0 || t >= vocab) {
      throw ContractError("cross_entropy: target " + std::to_string(t) + " outside vocab " +
                          std::to_string(vocab));
    }
    ++count;
  }
  if (count == 0) throw ContractError("cross_entropy: degenerate batch, all targets are padding");

  double loss = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    if (targets[static_cast<std::size_t>(r)] == pad_id) continue;
    const double* row = tl.data.data() + r * vocab;
    double mx = row[0];
    for (std::int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - row[targets[static_cast<std::size_t>(r)]];
  }
  loss /= static_cast<double>(count);

  Node n;
  n.kind = OpKind::cross_entropy;
  n.inputs = {logits};
  n.tokens = targets;
  n.pad_id = pad_id;
  n.requires_grad = node(logits).requires_grad;
  n.value = Tensor::scalar(loss);
  return push(std::move(n));
}

GradMap Graph::backward(NodeId loss) const {
  if (value(loss).numel() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(value(loss).shape));
  }
  GradMap grads(nodes_.size());
  // Zero slots for every grad-requiring node so unreachable parameters
  // still report zero gradients.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].requires_grad) grads.slot(static_cast<NodeId>(i)) = Tensor::zeros(nodes_[i].value.shape);
  }
  if (!node(loss).requires_grad) return grads;

  std::vector<char> needed(nodes_.size(), 0);
  needed[static_cast<std::size_t>(loss)] = 1;
  for (std::int64_t i = loss; i >= 0; --i) {
    if (!needed[static_cast<std::size_t>(i)]) continue;
    for (NodeId in : nodes_[static_cast<std::size_t>(i)].inputs) {
      if (node(in).requires_grad) needed[static_cast<std::size_t>(in)] = 1;
    }
  }

  grads.slot(loss).data[0] = 1.0;

  for (std::int64_t ni = loss; ni >= 0; --ni) {
    const Node& n = nodes_[static_cast<std::size_t>(ni)];
    if (!needed[static_cast<std::size_t>(ni)] || !n.requires_grad) continue;
    const Tensor& g = grads.slot(static_cast<NodeId>(ni));

    auto wants = [&](std::size_t idx) { return node(n.inputs[idx]).requires_grad; };
    auto gslot = [&](std::size_t idx) -> Tensor& { return grads.slot(n.inputs[idx]); };
    auto ival = [&](std::size_t idx) -> const Tensor& { return value(n.inputs[idx]); };

    switch (n.kind) {
      case OpKind::leaf:
        break;

      case OpKind::matmul: {
        const Tensor& ta = ival(0);
        const Tensor& tb = ival(1);
        const bool batched = ta.rank() == 3;
        const bool b_broadcast = batched && tb.rank() == 2;
        const std::int64_t batch = batched ? ta.dim(0) : 1;
        const std::int64_t m = ta.dim(batched ? 1 : 0);
        const std::int64_t k = ta.dim(batched ? 2 : 1);
        const std::int64_t nn = tb.last_dim();
        for (std::int64_t s = 0; s < batch; ++s) {
          const double* pg = g.data.data() + s * m * nn;
          if (wants(0)) {
            matmul_acc_da(pg, tb.data.data() + (b_broadcast ? 0 : s * k * nn),
                          gslot(0).data.data() + s * m * k, m, k, nn);
          }
          if (wants(1)) {
            matmul_acc_db(ta.data.data() + s * m * k, pg,
                          gslot(1).data.data() + (b_broadcast ? 0 : s * k * nn), m, k, nn);
          }
        }
        break;
      }

      case OpKind::add: {
        if (wants(0)) {
          Tensor& da = gslot(0);
          for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        }
        if (wants(1)) {
          Tensor& db = gslot(1);
          const std::int64_t inner = db.numel();
          const std::int64_t outer = g.numel() / inner;
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i)
              db.data[static_cast<std::size_t>(i)] += g.data[static_cast<std::size_t>(o * inner + i)];
        }
        break;
      }

      case OpKind::mul: {
        const Tensor& ta = ival(0);
        const Tensor& tb = ival(1);
        const std::int64_t inner = tb.numel();
        const std::int64_t outer = ta.numel() / inner;
        if (wants(0)) {
          Tensor& da = gslot(0);
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
              const auto idx = static_cast<std::size_t>(o * inner + i);
              da.data[idx] += g.data[idx] * tb.data[static_cast<std::size_t>(i)];
            }
        }
        if (wants(1)) {
          Tensor& db = gslot(1);
          for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
              const auto idx = static_cast<std::size_t>(o * inner + i);
              db.data[static_cast<std::size_t>(i)] += g.data[idx] * ta.data[idx];
            }
        }
        break;
      }

      case OpKind::scale: {
        if (wants(0)) {
          Tensor& da = gslot(0);
          for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * n.factor;
        }
        break;
      }

      case OpKind::gelu: {
        if (wants(0)) {
          const Tensor& ta = ival(0);
          Tensor& da = gslot(0);
          for (std::size_t i = 0; i < g.data.size(); ++i) {
            const double x = ta.data[i];
            da.data[i] += g.data[i] * (norm_cdf(x) + x * norm_pdf(x));
          }
        }
        break;
      }

      case OpKind::softmax_lastdim: {
        if (wants(0)) {
          Tensor& da = gslot(0);
          const std::int64_t cols = n.value.last_dim();
          const std::int64_t rows = n.value.rows();
          for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = n.value.data.data() + r * cols;
            const double* gy = g.data.data() + r * cols;
            double dot = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
            double* dx = da.data.data() + r * cols;
            for (std::int64_t j = 0; j < cols; ++j) dx[j] += y[j] * (gy[j] - dot);
          }
        }
        break;
      }

      case OpKind::layer_norm: {
        if (wants(0)) {
          const Tensor& ta = ival(0);
          Tensor& da = gslot(0);
          const std::int64_t cols = ta.last_dim();
          const std::int64_t rows = ta.rows();
          for (std::int64_t r = 0; r < rows; ++r) {
            const double* x = ta.data.data() + r * cols;
            const double* xhat = n.value.data.data() + r * cols;
            const double* gy = g.data.data() + r * cols;
            double mean = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) mean += x[j];
            mean /= static_cast<double>(cols);
            double var = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) {
              const double d = x[j] - mean;
              var += d * d;
            }
            var /= static_cast<double>(cols);
            const double inv = 1.0 / std::sqrt(var + kLnEps);
            double gmean = 0.0, gxdot = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) {
              gmean += gy[j];
              gxdot += gy[j] * xhat[j];
            }
            gmean /= static_cast<double>(cols);
            gxdot /= static_cast<double>(cols);
            double* dx = da.data.data() + r * cols;
            for (std::int64_t j = 0; j < cols; ++j) {
              dx[j] += inv * (gy[j] - gmean - xhat[j] * gxdot);
            }
          }
        }
        break;
      }

      case OpKind::embed_gather: {
        if (wants(0)) {
          Tensor& dt = gslot(0);
          const std::int64_t width = dt.last_dim();
          for (std::size_t i = 0; i < n.tokens.size(); ++i) {
            const double* src = g.data.data() + static_cast<std::int64_t>(i) * width;
            double* dst = dt.data.data() + static_cast<std::int64_t>(n.tokens[i]) * width;
            for (std::int64_t j = 0; j < width; ++j) dst[j] += src[j];
          }
        }
        break;
      }

      case OpKind::concat: {
        const std::int64_t total = n.value.last_dim();
        const std::int64_t rows = n.value.rows();
        std::int64_t col_off = 0;
        for (std::size_t pi = 0; pi < n.inputs.size(); ++pi) {
          const std::int64_t w = n.iaux[pi];
          if (wants(pi)) {
            Tensor& dp = gslot(pi);
            for (std::int64_t r = 0; r < rows; ++r) {
              const double* src = g.data.data() + r * total + col_off;
              double* dst = dp.data.data() + r * w;
              for (std::int64_t j = 0; j < w; ++j) dst[j] += src[j];
            }
          }
          col_off += w;
        }
        break;
      }

      case OpKind::transpose_last2: {
        if (wants(0)) {
          const Tensor& ta = ival(0);
          Tensor& da = gslot(0);
          const std::int64_t m = ta.dim(ta.rank() - 2);
          const std::int64_t c = ta.last_dim();
          const std::int64_t batch = ta.numel() / (m * c);
          for (std::int64_t s = 0; s < batch; ++s) {
            const double* src = g.data.data() + s * m * c;  // [c, m]
            double* dst = da.data.data() + s * m * c;       // [m, c]
            for (std::int64_t i = 0; i < m; ++i)
              for (std::int64_t j = 0; j < c; ++j) dst[i * c + j] += src[j * m + i];
          }
        }
        break;
      }

      case OpKind::reshape: {
        if (wants(0)) {
          Tensor& da = gslot(0);
          for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
        }
        break;
      }

      case OpKind::split_heads: {
        if (wants(0)) {
          const Tensor& ta = ival(0);
          Tensor& da = gslot(0);
          const std::int64_t heads = n.iaux[0];
          const std::int64_t b = ta.dim(0), t = ta.dim(1), h = ta.dim(2);
          const std::int64_t dh = h / heads;
          for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t ti = 0; ti < t; ++ti)
              for (std::int64_t hi = 0; hi < heads; ++hi) {
                const double* src = g.data.data() + ((bi * heads + hi) * t + ti) * dh;
                double* dst = da.data.data() + (bi * t + ti) * h + hi * dh;
                for (std::int64_t j = 0; j < dh; ++j) dst[j] += src[j];
              }
        }
        break;
      }

      case OpKind::merge_heads: {
        if (wants(0)) {
          const Tensor& ta = ival(0);
          Tensor& da = gslot(0);
          const std::int64_t heads = n.iaux[0];
          const std::int64_t b = ta.dim(0) / heads, t = ta.dim(1), dh = ta.dim(2);
          for (std::int64_t bi = 0; bi < b; ++bi)
            for (std::int64_t ti = 0; ti < t; ++ti)
              for (std::int64_t hi = 0; hi < heads; ++hi) {
                const double* src = g.data.data() + (bi * t + ti) * heads * dh + hi * dh;
                double* dst = da.data.data() + ((bi * heads + hi) * t + ti) * dh;
                for (std::int64_t j = 0; j < dh; ++j) dst[j] += src[j];
              }
        }
        break;
      }

      case OpKind::cross_entropy: {
        if (wants(0)) {
          const Tensor& tl = ival(0);
          Tensor& dl = gslot(0);
          const std::int64_t rows = tl.dim(0);
          const std::int64_t vocab = tl.dim(1);
          std::int64_t count = 0;
          for (std::int32_t t : n.tokens)
            if (t != n.pad_id) ++count;
          const double go = g.data[0] / static_cast<double>(count);
          for (std::int64_t r = 0; r < rows; ++r) {
            const std::int32_t tgt = n.tokens[static_cast<std::size_t>(r)];
            if (tgt == n.pad_id) continue;
            const double* row = tl.data.data() + r * vocab;
            double mx = row[0];
            for (std::int64_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
            double sum = 0.0;
            for (std::int64_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - mx);
            const double inv = 1.0 / sum;
            double* drow = dl.data.data() + r * vocab;
            for (std::int64_t j = 0; j < vocab; ++j) {
              drow[j] += go * std::exp(row[j] - mx) * inv;
            }
            drow[tgt] -= go;
          }
        }
        break;
      }
    }
  }
  return grads;
}

}  // namespace cunmt
