#pragma once

#include "nwb/activation.hpp"
#include "nwb/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace nwb {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the
/// owning graph is alive.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  const Tensor& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr && id >= 0; }
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  Activate,
  ActivateGrad,
  Relu,
  Transpose,
  Sum,
  Mean,
  SquaredNorm,
  Inner,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Activate: return "activate";
    case OpKind::ActivateGrad: return "activate_grad";
    case OpKind::Relu: return "relu";
    case OpKind::Transpose: return "transpose";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::Inner: return "inner";
  }
  return "?";
}

/// Append-only record of a computation over Tensors. Forward values are
/// computed eagerly when a node is recorded. backward() accumulates
/// d(root)/d(parameter) for every registered parameter leaf.
///
/// input_grad() expands the reverse pass of a sub-computation into new
/// differentiable nodes, so expressions such as f(grad g(y)) can be
/// differentiated again with respect to the parameters of g.
///
/// Single owner; not safe for concurrent mutation.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = delete;
  Graph& operator=(Graph&&) = delete;

  Var constant(Tensor t) { return leaf(std::move(t), false); }
  Var parameter(Tensor t) { return leaf(std::move(t), true); }

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  bool is_parameter(Var v) const { return node(v).is_parameter; }
  OpKind op(Var v) const { return node(v).op; }

  /// Gradient of the last backward() root with respect to parameter v.
  const Tensor& grad(Var v) const {
    const Node& n = node(v);
    if (!n.is_parameter) throw Error("grad() requested for a non-parameter node");
    if (static_cast<std::size_t>(v.id) >= param_grads_.size() || !backward_done_)
      throw Error("grad() requested before backward()");
    return param_grads_[static_cast<std::size_t>(v.id)];
  }

  // Op recording. Prefer the free functions below.
  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows())
      throw ShapeError("matmul: inner dimensions differ, " + A.shape_str() + " x " + B.shape_str());
    Matrix out(A.rows(), B.cols());
    out.noalias() = A.mat() * B.mat();
    return record(OpKind::MatMul, a, b, Tensor(std::move(out)));
  }

  Var add(Var a, Var b) { return binary_elementwise(OpKind::Add, a, b); }
  Var sub(Var a, Var b) { return binary_elementwise(OpKind::Sub, a, b); }
  Var mul(Var a, Var b) { return binary_elementwise(OpKind::Mul, a, b); }

  Var scale(Var a, double c) {
    Var v = record(OpKind::Scale, a, {}, Tensor(Matrix(value(a).mat() * c)));
    nodes_[static_cast<std::size_t>(v.id)].scalar = c;
    return v;
  }

  Var activate(Var a, Activation act) {
    const Matrix& x = value(a).mat();
    Matrix out = x.unaryExpr([act](double t) { return act.value(t); });
    Var v = record(OpKind::Activate, a, {}, Tensor(std::move(out)));
    nodes_[static_cast<std::size_t>(v.id)].act = act;
    return v;
  }

  /// Elementwise first derivative of act at a, itself differentiable once.
  Var activate_grad(Var a, Activation act) {
    if (!act.has_second_derivative())
      throw Error("activate_grad: activation '" + act.name() + "' has no second derivative");
    const Matrix& x = value(a).mat();
    Matrix out = x.unaryExpr([act](double t) { return act.derivative(t); });
    Var v = record(OpKind::ActivateGrad, a, {}, Tensor(std::move(out)));
    nodes_[static_cast<std::size_t>(v.id)].act = act;
    return v;
  }

  Var relu(Var a) { return record(OpKind::Relu, a, {}, Tensor(Matrix(value(a).mat().cwiseMax(0.0)))); }
  Var transpose(Var a) { return record(OpKind::Transpose, a, {}, Tensor(Matrix(value(a).mat().transpose()))); }
  Var sum(Var a) { return record(OpKind::Sum, a, {}, Tensor::scalar(value(a).mat().sum())); }

  Var mean(Var a) {
    const Tensor& A = value(a);
    if (A.size() == 0) throw ShapeError("mean: empty tensor");
    return record(OpKind::Mean, a, {}, Tensor::scalar(A.mat().mean()));
  }

  Var squared_norm(Var a) { return record(OpKind::SquaredNorm, a, {}, Tensor::scalar(value(a).mat().squaredNorm())); }

  /// Frobenius inner product <a, b>.
  Var inner(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw ShapeError("inner: shapes differ, " + A.shape_str() + " vs " + B.shape_str());
    return record(OpKind::Inner, a, b, Tensor::scalar(A.mat().cwiseProduct(B.mat()).sum()));
  }

  void backward(Var root);
  Var input_grad(Var scalar_output, Var input);

 private:
  struct Node {
    OpKind op = OpKind::Leaf;
    int a = -1;
    int b = -1;
    Tensor value;
    double scalar = 0.0;
    Activation act{};
    bool requires_grad = false;
    bool is_parameter = false;
  };

  const Node& node(Var v) const {
    if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw Error("Var does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  Var leaf(Tensor t, bool is_param) {
    if (!t.all_finite()) throw NumericError("leaf tensor " + t.shape_str() + " contains non-finite values");
    Node n;
    n.value = std::move(t);
    n.requires_grad = is_param;
    n.is_parameter = is_param;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  Var record(OpKind op, Var a, Var b, Tensor value) {
    if (!value.all_finite())
      throw NumericError(std::string(op_name(op)) + " produced non-finite values (shape " + value.shape_str() + ")");
    Node n;
    n.op = op;
    n.a = a.id;
    n.b = b.valid() ? b.id : -1;
    n.value = std::move(value);
    n.requires_grad = node(a).requires_grad || (b.valid() && node(b).requires_grad);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  Var binary_elementwise(OpKind op, Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    Matrix out;
    if (A.same_shape(B)) {
      switch (op) {
        case OpKind::Add: out = A.mat() + B.mat(); break;
        case OpKind::Sub: out = A.mat() - B.mat(); break;
        default: out = A.mat().cwiseProduct(B.mat()); break;
      }
    } else if (B.is_scalar()) {
      const double s = B.item();
      switch (op) {
        case OpKind::Add: out = A.mat().array() + s; break;
        case OpKind::Sub: out = A.mat().array() - s; break;
        default: out = A.mat() * s; break;
      }
    } else if (A.is_scalar()) {
      const double s = A.item();
      switch (op) {
        case OpKind::Add: out = s + B.mat().array(); break;
        case OpKind::Sub: out = s - B.mat().array(); break;
        default: out = B.mat() * s; break;
      }
    } else {
      throw ShapeError(std::string(op_name(op)) + ": shapes differ, " + A.shape_str() + " vs " + B.shape_str());
    }
    return record(op, a, b, Tensor(std::move(out)));
  }

  // Reduce an adjoint to the shape of an operand that was scalar-broadcast.
  static Matrix reduce_to(const Matrix& g, const Tensor& operand) {
    if (operand.is_scalar() && !(g.rows() == 1 && g.cols() == 1)) return Matrix::Constant(1, 1, g.sum());
    return g;
  }

  static void accumulate(std::vector<Matrix>& adj, int id, const Matrix& g) {
    Matrix& slot = adj[static_cast<std::size_t>(id)];
    if (slot.size() == 0)
      slot = g;
    else
      slot += g;
  }

  Var symbolic_reduce_to(Var g, Var operand) {
    if (value(operand).is_scalar() && !value(g).is_scalar()) return sum(g);
    return g;
  }

  Var ones_like(Var v) { return constant(Tensor(v.rows(), v.cols(), 1.0)); }

  std::vector<Node> nodes_;
  std::vector<Tensor> param_grads_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

inline void Graph::backward(Var root) {
  const Tensor& r = value(root);
  if (!r.is_scalar()) throw ShapeError("backward: root must be scalar, got " + r.shape_str());
  const auto n = static_cast<std::size_t>(root.id) + 1;
  std::vector<Matrix> adj(n);
  if (nodes_[static_cast<std::size_t>(root.id)].requires_grad) adj.back() = Matrix::Ones(1, 1);

  for (std::size_t idx = n; idx-- > 0;) {
    const Node& nd = nodes_[idx];
    if (!nd.requires_grad || adj[idx].size() == 0 || nd.op == OpKind::Leaf) continue;
    const Matrix& g = adj[idx];
    const Node* A = &nodes_[static_cast<std::size_t>(nd.a)];
    const Node* B = nd.b >= 0 ? &nodes_[static_cast<std::size_t>(nd.b)] : nullptr;
    const bool ga = A->requires_grad;
    const bool gb = B != nullptr && B->requires_grad;

    switch (nd.op) {
      case OpKind::MatMul:
        if (ga) accumulate(adj, nd.a, g * B->value.mat().transpose());
        if (gb) accumulate(adj, nd.b, A->value.mat().transpose() * g);
        break;
      case OpKind::Add:
        if (ga) accumulate(adj, nd.a, reduce_to(g, A->value));
        if (gb) accumulate(adj, nd.b, reduce_to(g, B->value));
        break;
      case OpKind::Sub:
        if (ga) accumulate(adj, nd.a, reduce_to(g, A->value));
        if (gb) accumulate(adj, nd.b, reduce_to(Matrix(-g), B->value));
        break;
      case OpKind::Mul: {
        auto times = [&](const Tensor& other) -> Matrix {
          if (other.is_scalar() && !(g.rows() == 1 && g.cols() == 1)) return g * other.item();
          if (g.rows() == 1 && g.cols() == 1 && !other.is_scalar()) return other.mat() * g(0, 0);
          return g.cwiseProduct(other.mat());
        };
        if (ga) accumulate(adj, nd.a, reduce_to(times(B->value), A->value));
        if (gb) accumulate(adj, nd.b, reduce_to(times(A->value), B->value));
        break;
      }
      case OpKind::Scale: accumulate(adj, nd.a, g * nd.scalar); break;
      case OpKind::Activate: {
        const Activation act = nd.act;
        accumulate(adj, nd.a,
                   g.cwiseProduct(A->value.mat().unaryExpr([act](double t) { return act.derivative(t); })));
        break;
      }
      case OpKind::ActivateGrad: {
        const Activation act = nd.act;
        accumulate(adj, nd.a,
                   g.cwiseProduct(A->value.mat().unaryExpr([act](double t) { return act.second_derivative(t); })));
        break;
      }
      case OpKind::Relu:
        accumulate(adj, nd.a, g.cwiseProduct(Matrix((A->value.mat().array() > 0.0).cast<double>())));
        break;
      case OpKind::Transpose: accumulate(adj, nd.a, g.transpose()); break;
      case OpKind::Sum: accumulate(adj, nd.a, Matrix::Constant(A->value.rows(), A->value.cols(), g(0, 0))); break;
      case OpKind::Mean:
        accumulate(adj, nd.a,
                   Matrix::Constant(A->value.rows(), A->value.cols(), g(0, 0) / static_cast<double>(A->value.size())));
        break;
      case OpKind::SquaredNorm: accumulate(adj, nd.a, A->value.mat() * (2.0 * g(0, 0))); break;
      case OpKind::Inner:
        if (ga) accumulate(adj, nd.a, B->value.mat() * g(0, 0));
        if (gb) accumulate(adj, nd.b, A->value.mat() * g(0, 0));
        break;
      case OpKind::Leaf: break;
    }
  }

  param_grads_.assign(nodes_.size(), Tensor());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& nd = nodes_[i];
    if (!nd.is_parameter) continue;
    if (i < n && adj[i].size() != 0)
      param_grads_[i] = Tensor(std::move(adj[i]));
    else
      param_grads_[i] = Tensor(nd.value.rows(), nd.value.cols(), 0.0);
  }
  backward_done_ = true;
}

inline Var Graph::input_grad(Var scalar_output, Var input) {
  const Tensor& out = value(scalar_output);
  if (!out.is_scalar()) throw ShapeError("input_grad: output must be scalar, got " + out.shape_str());
  if (input.id > scalar_output.id) throw Error("input_grad: input recorded after output");

  const auto first = static_cast<std::size_t>(input.id);
  const auto last = static_cast<std::size_t>(scalar_output.id);

  // Nodes on a path from input to output.
  std::vector<char> depends(last + 1, 0);
  depends[first] = 1;
  for (std::size_t i = first + 1; i <= last; ++i) {
    const Node& nd = nodes_[i];
    if (nd.op == OpKind::Leaf) continue;
    const bool d = depends[static_cast<std::size_t>(nd.a)] || (nd.b >= 0 && depends[static_cast<std::size_t>(nd.b)]);
    if (!d) continue;
    depends[i] = 1;
    if (nd.op == OpKind::Activate && !nd.act.has_second_derivative())
      throw Error("input_grad: activation '" + nd.act.name() + "' on the input path lacks a second derivative");
    if (nd.op == OpKind::ActivateGrad)
      throw Error("input_grad: nested input gradients are not supported");
  }

  std::vector<std::optional<Var>> adj(last + 1);
  if (depends[last]) adj[last] = constant(Tensor::scalar(1.0));

  auto push = [&](int id, Var contrib) {
    auto& slot = adj[static_cast<std::size_t>(id)];
    slot = slot ? add(*slot, contrib) : contrib;
  };

  for (std::size_t i = last + 1; i-- > first + 1;) {
    if (!depends[i] || !adj[i]) continue;
    // Copy fields up front: recording new nodes may reallocate nodes_.
    const OpKind op = nodes_[i].op;
    const Var a{this, nodes_[i].a};
    const Var b{this, nodes_[i].b};
    const double c = nodes_[i].scalar;
    const Activation act = nodes_[i].act;
    const bool da = depends[static_cast<std::size_t>(a.id)] != 0;
    const bool db = b.id >= 0 && depends[static_cast<std::size_t>(b.id)] != 0;
    const Var g = *adj[i];

    switch (op) {
      case OpKind::MatMul:
        if (da) push(a.id, matmul(g, transpose(b)));
        if (db) push(b.id, matmul(transpose(a), g));
        break;
      case OpKind::Add:
        if (da) push(a.id, symbolic_reduce_to(g, a));
        if (db) push(b.id, symbolic_reduce_to(g, b));
        break;
      case OpKind::Sub:
        if (da) push(a.id, symbolic_reduce_to(g, a));
        if (db) push(b.id, symbolic_reduce_to(scale(g, -1.0), b));
        break;
      case OpKind::Mul:
        if (da) push(a.id, symbolic_reduce_to(mul(g, b), a));
        if (db) push(b.id, symbolic_reduce_to(mul(g, a), b));
        break;
      case OpKind::Scale: push(a.id, scale(g, c)); break;
      case OpKind::Activate: push(a.id, mul(g, activate_grad(a, act))); break;
      case OpKind::Relu: {
        Tensor mask(Matrix((value(a).mat().array() > 0.0).cast<double>()));
        push(a.id, mul(g, constant(std::move(mask))));
        break;
      }
      case OpKind::Transpose: push(a.id, transpose(g)); break;
      case OpKind::Sum: push(a.id, mul(ones_like(a), g)); break;
      case OpKind::Mean: push(a.id, scale(mul(ones_like(a), g), 1.0 / static_cast<double>(value(a).size()))); break;
      case OpKind::SquaredNorm: push(a.id, scale(mul(a, g), 2.0)); break;
      case OpKind::Inner:
        if (da) push(a.id, mul(b, g));
        if (db) push(b.id, mul(a, g));
        break;
      case OpKind::ActivateGrad:
      case OpKind::Leaf: break;
    }
  }

  if (adj[first]) return *adj[first];
  return constant(Tensor(value(input).rows(), value(input).cols(), 0.0));
}

// Free-function vocabulary.
inline Var matmul(Var a, Var b) { return a.graph->matmul(a, b); }
inline Var operator+(Var a, Var b) { return a.graph->add(a, b); }
inline Var operator-(Var a, Var b) { return a.graph->sub(a, b); }
/// Elementwise (Hadamard) product, scalar operands broadcast.
inline Var operator*(Var a, Var b) { return a.graph->mul(a, b); }
inline Var operator*(double c, Var a) { return a.graph->scale(a, c); }
inline Var operator*(Var a, double c) { return a.graph->scale(a, c); }
inline Var operator-(Var a) { return a.graph->scale(a, -1.0); }
inline Var scale(Var a, double c) { return a.graph->scale(a, c); }
inline Var activate(Var a, Activation act) { return a.graph->activate(a, act); }
inline Var relu(Var a) { return a.graph->relu(a); }
inline Var transpose(Var a) { return a.graph->transpose(a); }
inline Var sum(Var a) { return a.graph->sum(a); }
inline Var mean(Var a) { return a.graph->mean(a); }
inline Var squared_norm(Var a) { return a.graph->squared_norm(a); }
inline Var inner(Var a, Var b) { return a.graph->inner(a, b); }
inline Var input_grad(Var scalar_output, Var input) { return input.graph->input_grad(scalar_output, input); }

}  // namespace nwb
