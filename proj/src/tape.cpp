#include "mtdl/tape.hpp"

#include <algorithm>
#include <cmath>

#include "mtdl/errors.hpp"
#include "mtdl/exact_sum.hpp"

namespace mtdl {

namespace {

// Fixed-order four-lane reduction. The evaluation order is pinned by the
// source, so results are bit-identical regardless of buffer alignment or
// thread; the lane structure still lets the compiler vectorize.
double dot_kernel(const double* a, const double* b, std::size_t n) {
  double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    a0 += a[i] * b[i];
    a1 += a[i + 1] * b[i + 1];
    a2 += a[i + 2] * b[i + 2];
    a3 += a[i + 3] * b[i + 3];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((a0 + a2) + (a1 + a3)) + tail;
}

void axpy_kernel(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require_vector(const Tensor& t, const char* who) {
  if (!t.is_vector()) {
    throw ShapeError(std::string(who) + ": expected a vector, got " + t.shape_str());
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(who) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

void require_scalar(const Tensor& t, const char* who) {
  if (!t.is_scalar()) {
    throw ShapeError(std::string(who) + ": expected a scalar, got " + t.shape_str());
  }
}

}  // namespace

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

NodeId Tape::push(TapeNode node) {
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value) {
  TapeNode n;
  n.kind = OpKind::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Tape::leaf_scalar(double value) { return leaf(Tensor::scalar(value)); }

NodeId Tape::leaf_zeros(std::vector<std::size_t> shape) { return leaf(Tensor::zeros(std::move(shape))); }

NodeId Tape::matvec(NodeId w, NodeId x) {
  const Tensor& wv = nodes_[w].value;
  const Tensor& xv = nodes_[x].value;
  if (!wv.is_matrix()) throw ShapeError("matvec: left operand " + wv.shape_str() + " is not a matrix");
  require_vector(xv, "matvec");
  if (wv.cols() != xv.numel()) {
    throw ShapeError("matvec: inner dimensions disagree, " + wv.shape_str() + " vs " + xv.shape_str());
  }
  TapeNode n;
  n.kind = OpKind::kMatVec;
  n.in0 = w;
  n.in1 = x;
  n.value = Tensor::zeros({wv.rows()});
  std::size_t cols = wv.cols();
  for (std::size_t r = 0; r < wv.rows(); ++r) {
    n.value.data[r] = dot_kernel(wv.data.data() + r * cols, xv.data.data(), cols);
  }
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  require_same_shape(av, bv, "add");
  TapeNode n;
  n.kind = OpKind::kAdd;
  n.in0 = a;
  n.in1 = b;
  n.value = av;
  for (std::size_t i = 0; i < bv.numel(); ++i) n.value.data[i] += bv.data[i];
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  require_same_shape(av, bv, "mul");
  TapeNode n;
  n.kind = OpKind::kMul;
  n.in0 = a;
  n.in1 = b;
  n.value = av;
  for (std::size_t i = 0; i < bv.numel(); ++i) n.value.data[i] *= bv.data[i];
  return push(std::move(n));
}

NodeId Tape::tanh(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kTanh;
  n.in0 = x;
  n.value = nodes_[x].value;
  for (double& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kRelu;
  n.in0 = x;
  n.value = nodes_[x].value;
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

NodeId Tape::sigmoid(NodeId x) {
  TapeNode n;
  n.kind = OpKind::kSigmoid;
  n.in0 = x;
  n.value = nodes_[x].value;
  for (double& v : n.value.data) v = stable_sigmoid(v);
  return push(std::move(n));
}

NodeId Tape::ste_threshold(NodeId soft, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("ste_threshold: threshold " + std::to_string(threshold) +
                      " outside (0, 1)");
  }
  require_scalar(nodes_[soft].value, "ste_threshold");
  TapeNode n;
  n.kind = OpKind::kSteThreshold;
  n.in0 = soft;
  n.value = Tensor::scalar(nodes_[soft].value.data[0] > threshold ? 1.0 : 0.0);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId v, NodeId s) {
  require_scalar(nodes_[s].value, "scale");
  const Tensor& vv = nodes_[v].value;
  double sv = nodes_[s].value.data[0];
  TapeNode n;
  n.kind = OpKind::kScale;
  n.in0 = v;
  n.in1 = s;
  n.value = vv;
  for (double& x : n.value.data) x *= sv;
  return push(std::move(n));
}

NodeId Tape::pool(std::span<const NodeId> items, OpKind kind) {
  if (items.empty()) throw EmptyPoolError("pool over empty item list");
  const Tensor& first = nodes_[items[0]].value;
  require_vector(first, "pool");
  for (NodeId id : items) {
    require_same_shape(nodes_[id].value, first, "pool");
  }
  TapeNode n;
  n.kind = kind;
  n.arg0 = static_cast<std::uint32_t>(pool_inputs_.size());
  n.arg1 = static_cast<std::uint32_t>(items.size());
  pool_inputs_.insert(pool_inputs_.end(), items.begin(), items.end());
  std::size_t dim = first.numel();
  n.value = Tensor::zeros({dim});
  double inv = 1.0 / static_cast<double>(items.size());
  ExactSum acc;
  for (std::size_t j = 0; j < dim; ++j) {
    acc.reset();
    for (NodeId id : items) acc.add(nodes_[id].value.data[j]);
    double s = acc.result();
    n.value.data[j] = kind == OpKind::kMeanPool ? s * inv : s;
  }
  return push(std::move(n));
}

NodeId Tape::mean_pool(std::span<const NodeId> items) { return pool(items, OpKind::kMeanPool); }

NodeId Tape::sum_pool(std::span<const NodeId> items) { return pool(items, OpKind::kSumPool); }

NodeId Tape::slice(NodeId x, std::size_t offset, std::size_t length) {
  const Tensor& xv = nodes_[x].value;
  require_vector(xv, "slice");
  if (offset + length > xv.numel()) {
    throw ShapeError("slice: range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + length) + ") exceeds " + xv.shape_str());
  }
  TapeNode n;
  n.kind = OpKind::kSlice;
  n.in0 = x;
  n.arg0 = static_cast<std::uint32_t>(offset);
  n.arg1 = static_cast<std::uint32_t>(length);
  n.value = Tensor::zeros({length});
  std::copy_n(xv.data.begin() + static_cast<std::ptrdiff_t>(offset), length, n.value.data.begin());
  return push(std::move(n));
}

NodeId Tape::dot(NodeId a, NodeId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  require_vector(av, "dot");
  require_same_shape(av, bv, "dot");
  TapeNode n;
  n.kind = OpKind::kDot;
  n.in0 = a;
  n.in1 = b;
  double s = ConstVecMap(av.data.data(), static_cast<Eigen::Index>(av.numel()))
                 .dot(ConstVecMap(bv.data.data(), static_cast<Eigen::Index>(bv.numel())));
  n.value = Tensor::scalar(s);
  return push(std::move(n));
}

NodeId Tape::softmax_cross_entropy(NodeId logits, std::size_t label) {
  const Tensor& lv = nodes_[logits].value;
  require_vector(lv, "softmax_cross_entropy");
  std::size_t classes = lv.numel();
  if (classes < 2) {
    throw ShapeError("softmax_cross_entropy: need at least 2 classes, got " + lv.shape_str());
  }
  if (label >= classes) {
    throw ConfigError("softmax_cross_entropy: label " + std::to_string(label) +
                      " out of range for " + std::to_string(classes) + " classes");
  }
  double mx = *std::max_element(lv.data.begin(), lv.data.end());
  Tensor probs = Tensor::zeros({classes});
  double z = 0.0;
  for (std::size_t i = 0; i < classes; ++i) {
    probs.data[i] = std::exp(lv.data[i] - mx);
    z += probs.data[i];
  }
  for (double& p : probs.data) p /= z;
  double loss = -(lv.data[label] - mx - std::log(z));
  TapeNode n;
  n.kind = OpKind::kSoftmaxXent;
  n.in0 = logits;
  n.arg0 = static_cast<std::uint32_t>(label);
  n.value = Tensor::scalar(loss);
  n.aux = std::move(probs);
  return push(std::move(n));
}

Tensor& Tape::grad_ref(NodeId id) {
  Tensor& g = grads_[id];
  if (g.data.empty() && nodes_[id].value.numel() > 0) {
    g = Tensor::zeros(nodes_[id].value.shape);
  }
  live_[id] = 1;
  return g;
}

const Tensor& Tape::grad(NodeId id) const {
  const Tensor& g = grads_[id];
  if (g.data.empty()) {
    // Node off the loss path: materialize its zero gradient.
    const_cast<Tensor&>(g) = Tensor::zeros(nodes_[id].value.shape);
  }
  return g;
}

void Tape::backward(NodeId loss) {
  if (backward_done_) {
    throw StateError("backward called twice on the same tape without reset");
  }
  require_scalar(nodes_[loss].value, "backward");
  grads_.assign(nodes_.size(), Tensor{});
  live_.assign(nodes_.size(), 0);
  grad_ref(loss).data[0] = 1.0;
  for (NodeId id = loss;; --id) {
    if (live_[id]) backprop_node(id);
    if (id == 0) break;
  }
  backward_done_ = true;
}

void Tape::backprop_node(NodeId id) {
  const TapeNode& n = nodes_[id];
  const Tensor& g = grads_[id];
  switch (n.kind) {
    case OpKind::kLeaf:
      break;
    case OpKind::kMatVec: {
      const Tensor& wv = nodes_[n.in0].value;
      const Tensor& xv = nodes_[n.in1].value;
      Tensor& gw = grad_ref(n.in0);
      Tensor& gx = grad_ref(n.in1);
      auto m = static_cast<Eigen::Index>(wv.rows());
      auto k = static_cast<Eigen::Index>(wv.cols());
      ConstVecMap gm(g.data.data(), m);
      MatMap(gw.data.data(), m, k).noalias() += gm * ConstVecMap(xv.data.data(), k).transpose();
      VecMap(gx.data.data(), k).noalias() += ConstMatMap(wv.data.data(), m, k).transpose() * gm;
      break;
    }
    case OpKind::kAdd: {
      Tensor& ga = grad_ref(n.in0);
      Tensor& gb = grad_ref(n.in1);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga.data[i] += g.data[i];
        gb.data[i] += g.data[i];
      }
      break;
    }
    case OpKind::kMul: {
      const Tensor& av = nodes_[n.in0].value;
      const Tensor& bv = nodes_[n.in1].value;
      Tensor& ga = grad_ref(n.in0);
      Tensor& gb = grad_ref(n.in1);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ga.data[i] += g.data[i] * bv.data[i];
        gb.data[i] += g.data[i] * av.data[i];
      }
      break;
    }
    case OpKind::kTanh: {
      Tensor& gx = grad_ref(n.in0);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double y = n.value.data[i];
        gx.data[i] += g.data[i] * (1.0 - y * y);
      }
      break;
    }
    case OpKind::kRelu: {
      const Tensor& xv = nodes_[n.in0].value;
      Tensor& gx = grad_ref(n.in0);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        if (xv.data[i] > 0.0) gx.data[i] += g.data[i];
      }
      break;
    }
    case OpKind::kSigmoid: {
      Tensor& gx = grad_ref(n.in0);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        double y = n.value.data[i];
        gx.data[i] += g.data[i] * y * (1.0 - y);
      }
      break;
    }
    case OpKind::kSteThreshold: {
      // Straight-through: the threshold backpropagates as the identity.
      grad_ref(n.in0).data[0] += g.data[0];
      break;
    }
    case OpKind::kScale: {
      const Tensor& vv = nodes_[n.in0].value;
      double sv = nodes_[n.in1].value.data[0];
      Tensor& gv = grad_ref(n.in0);
      Tensor& gs = grad_ref(n.in1);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) {
        gv.data[i] += sv * g.data[i];
        acc += g.data[i] * vv.data[i];
      }
      gs.data[0] += acc;
      break;
    }
    case OpKind::kMeanPool:
    case OpKind::kSumPool: {
      std::size_t start = n.arg0;
      std::size_t count = n.arg1;
      double w = n.kind == OpKind::kMeanPool ? 1.0 / static_cast<double>(count) : 1.0;
      for (std::size_t j = 0; j < count; ++j) {
        Tensor& gi = grad_ref(pool_inputs_[start + j]);
        for (std::size_t i = 0; i < g.numel(); ++i) gi.data[i] += w * g.data[i];
      }
      break;
    }
    case OpKind::kSlice: {
      Tensor& gx = grad_ref(n.in0);
      for (std::size_t i = 0; i < g.numel(); ++i) gx.data[n.arg0 + i] += g.data[i];
      break;
    }
    case OpKind::kDot: {
      const Tensor& av = nodes_[n.in0].value;
      const Tensor& bv = nodes_[n.in1].value;
      Tensor& ga = grad_ref(n.in0);
      Tensor& gb = grad_ref(n.in1);
      double gs = g.data[0];
      for (std::size_t i = 0; i < av.numel(); ++i) {
        ga.data[i] += gs * bv.data[i];
        gb.data[i] += gs * av.data[i];
      }
      break;
    }
    case OpKind::kSoftmaxXent: {
      Tensor& gl = grad_ref(n.in0);
      double gs = g.data[0];
      for (std::size_t i = 0; i < gl.numel(); ++i) {
        double p = n.aux.data[i];
        gl.data[i] += gs * (i == n.arg0 ? p - 1.0 : p);
      }
      break;
    }
  }
}

void Tape::reset() {
  nodes_.clear();
  pool_inputs_.clear();
  grads_.clear();
  live_.clear();
  backward_done_ = false;
}

}  // namespace mtdl
