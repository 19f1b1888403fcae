#pragma once

#include "nwb/graph.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace nwb {

/// One named weight tensor of a network. Sign-constrained blocks must be
/// non-negative for the network to be convex in its sample input.
struct ParamBlock {
  std::string name;
  Tensor value;
  bool sign_constrained = false;

  friend bool operator==(const ParamBlock&, const ParamBlock&) = default;
};

/// Register every block of a network on a graph, as trainable parameters
/// or as constants.
inline std::vector<Var> bind_params(Graph& graph, const std::vector<ParamBlock>& blocks, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(blocks.size());
  for (const auto& b : blocks) vars.push_back(trainable ? graph.parameter(b.value) : graph.constant(b.value));
  return vars;
}

/// Gradients of bound blocks, in block order. Constants yield zeros.
inline std::vector<Tensor> gradients(const Graph& graph, std::span<const Var> vars) {
  std::vector<Tensor> out;
  out.reserve(vars.size());
  for (Var v : vars) {
    if (graph.is_parameter(v))
      out.push_back(graph.grad(v));
    else
      out.emplace_back(v.rows(), v.cols(), 0.0);
  }
  return out;
}

namespace detail {

inline Tensor gaussian_block(Index rows, Index cols, double stddev, bool absolute, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.data()) {
    v = normal(rng);
    if (absolute) v = std::abs(v);
  }
  return t;
}

inline Var ones_column(Graph& g, Index rows) { return g.constant(Tensor(rows, 1, 1.0)); }

// Broadcast a 1 x k row over a batch of `rows` rows.
inline Var broadcast_row(Var row, Index rows) {
  if (rows == 1) return row;
  return matmul(ones_column(*row.graph, rows), row);
}

// 0.5 * c * ||x_j||^2 per row, as a rows x 1 column.
inline Var half_squared_rows(Var x, double c) {
  Var sq = x * x;
  Var summed = matmul(sq, x.graph->constant(Tensor(x.cols(), 1, 1.0)));
  return scale(summed, 0.5 * c);
}

inline void check_dim(const char* what, Index got, Index want) {
  if (got != want)
    throw ShapeError(std::string(what) + ": input has " + std::to_string(got) + " columns, network expects " +
                     std::to_string(want));
}

inline Var prelu_learnable(Var x, Var slope) { return relu(x) - slope * relu(-x); }

}  // namespace detail

// ---------------------------------------------------------------------------
// FICNN

/// Fully input-convex network
///   z_1     = s_0(x A_0 + b_0)
///   z_{l+1} = s_l(z_l W_l + x A_l + b_l),   l = 1..L-1
///   f(x)    = z_L w + x a + c  (+ q/2 |x|^2 when quadratic > 0)
/// Convex in x when every W_l and w are >= 0 and the activations are
/// convex and non-decreasing. With no hidden layers f is affine plus the
/// optional quadratic term.
struct FicnnParams {
  Index input_dim = 0;
  std::vector<Index> widths;
  std::vector<Activation> activations;
  double quadratic = 0.0;
  std::vector<ParamBlock> blocks;

  Index layers() const { return static_cast<Index>(widths.size()); }
  // Block layout: A_0, b_0, then (W_l, A_l, b_l) for l >= 1, then w, a, c.
  std::size_t idx_w(Index l) const { return 2 + 3 * static_cast<std::size_t>(l - 1); }
  std::size_t idx_a(Index l) const { return l == 0 ? 0 : idx_w(l) + 1; }
  std::size_t idx_b(Index l) const { return l == 0 ? 1 : idx_w(l) + 2; }
  std::size_t idx_out() const { return widths.empty() ? 0 : 2 + 3 * static_cast<std::size_t>(layers() - 1); }
  bool has_out_w() const { return !widths.empty(); }
};

namespace detail {
inline void validate_ficnn_activations(const std::vector<Activation>& acts) {
  for (const auto& a : acts)
    if (!a.convex_nondecreasing())
      throw std::invalid_argument("FICNN activation '" + a.name() + "' is not convex and non-decreasing");
}
}  // namespace detail

/// Random FICNN. Sign-constrained blocks start non-negative, drawn from
/// |N(0, 1/fan_in)|; other weights from N(0, 1/fan_in); biases zero.
inline FicnnParams make_ficnn(Index input_dim, std::vector<Index> widths, Activation act, std::mt19937_64& rng,
                              double quadratic = 0.0) {
  if (input_dim < 1) throw std::invalid_argument("FICNN input dimension must be >= 1");
  if (quadratic < 0.0) throw std::invalid_argument("FICNN quadratic coefficient must be >= 0");
  detail::validate_ficnn_activations({act});
  FicnnParams p;
  p.input_dim = input_dim;
  p.widths = std::move(widths);
  p.activations.assign(p.widths.size(), act);
  p.quadratic = quadratic;
  const double sd_x = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (Index l = 0; l < p.layers(); ++l) {
    const Index w = p.widths[static_cast<std::size_t>(l)];
    if (w < 1) throw std::invalid_argument("FICNN widths must be >= 1");
    const std::string s = std::to_string(l);
    if (l > 0) {
      const Index prev = p.widths[static_cast<std::size_t>(l - 1)];
      p.blocks.push_back(
          {"W" + s, detail::gaussian_block(prev, w, 1.0 / std::sqrt(static_cast<double>(prev)), true, rng), true});
    }
    p.blocks.push_back({"A" + s, detail::gaussian_block(input_dim, w, sd_x, false, rng), false});
    p.blocks.push_back({"b" + s, Tensor(1, w, 0.0), false});
  }
  if (p.has_out_w()) {
    const Index last = p.widths.back();
    p.blocks.push_back(
        {"W_out", detail::gaussian_block(last, 1, 1.0 / std::sqrt(static_cast<double>(last)), true, rng), true});
  }
  p.blocks.push_back({"A_out", detail::gaussian_block(input_dim, 1, sd_x, false, rng), false});
  p.blocks.push_back({"b_out", Tensor(1, 1, 0.0), false});
  return p;
}

/// f(x) = q/2 |x|^2 + <linear, x>, no hidden layers.
inline FicnnParams make_quadratic_ficnn(const Tensor& linear, double q = 1.0) {
  FicnnParams p;
  p.input_dim = linear.rows();
  p.quadratic = q;
  p.blocks.push_back({"A_out", linear, false});
  p.blocks.push_back({"b_out", Tensor(1, 1, 0.0), false});
  return p;
}

/// Batch forward: x is M x d, result M x 1.
inline Var ficnn_forward(const FicnnParams& p, std::span<const Var> v, Var x) {
  detail::check_dim("ficnn_forward", x.cols(), p.input_dim);
  if (v.size() != p.blocks.size()) throw Error("ficnn_forward: bound block count mismatch");
  const Index m = x.rows();
  std::optional<Var> z;
  for (Index l = 0; l < p.layers(); ++l) {
    Var pre = matmul(x, v[p.idx_a(l)]) + detail::broadcast_row(v[p.idx_b(l)], m);
    if (l > 0) pre = matmul(*z, v[p.idx_w(l)]) + pre;
    z = activate(pre, p.activations[static_cast<std::size_t>(l)]);
  }
  const std::size_t o = p.idx_out();
  const std::size_t oa = p.has_out_w() ? o + 1 : o;
  Var out = matmul(x, v[oa]) + detail::broadcast_row(v[oa + 1], m);
  if (z) out = matmul(*z, v[o]) + out;
  if (p.quadratic > 0.0) out = out + detail::half_squared_rows(x, p.quadratic);
  return out;
}

/// Point evaluation f(x) for a single point.
inline double ficnn_forward(const FicnnParams& p, std::span<const double> x) {
  Graph g;
  auto v = bind_params(g, p.blocks, false);
  return ficnn_forward(p, v, g.constant(Tensor::row(x))).value().item();
}

/// grad_x f at each row of x, as a differentiable node (M x d).
inline Var ficnn_input_grad(const FicnnParams& p, std::span<const Var> v, Var x) {
  return input_grad(sum(ficnn_forward(p, v, x)), x);
}

inline std::vector<double> ficnn_input_grad(const FicnnParams& p, std::span<const double> x) {
  Graph g;
  auto v = bind_params(g, p.blocks, false);
  Var xv = g.constant(Tensor::row(x));
  const Tensor& t = ficnn_input_grad(p, v, xv).value();
  return {t.data().begin(), t.data().end()};
}

// ---------------------------------------------------------------------------
// PICNN

/// Partially input-convex network, convex in the sample y and arbitrary in
/// the context u_0 = a (a simplex weight vector):
///   u_{l+1} = celu(u_l V_l + v_l)
///   z_{l+1} = s_l( (z_l o relu(u_l Wzu_l + bz_l)) Wz_l
///                  + (y o (u_l Wyu_l + by_l)) Wy_l + u_l Wu_l + b_l )
/// for hidden layers l = 0..L-1 (no z-term at l = 0) and an output layer
/// of the same form with identity activation and width 1. Wz_l >= 0 is the
/// only sign constraint.
struct PicnnParams {
  Index input_dim = 0;
  Index context_dim = 0;
  std::vector<Index> widths;
  Activation activation = Activation::celu();
  double quadratic = 0.0;
  std::vector<ParamBlock> blocks;

  struct LayerIdx {
    int wz = -1, wzu = -1, bz = -1;  // absent at layer 0
    int wyu, by, wy, wu, b;
    int v = -1, vb = -1;  // context step, absent at the output layer
  };
  std::vector<LayerIdx> layout;  // hidden layers then output layer

  Index layers() const { return static_cast<Index>(widths.size()); }
};

inline PicnnParams make_picnn(Index input_dim, Index context_dim, std::vector<Index> widths, Activation act,
                              std::mt19937_64& rng, double quadratic = 0.0) {
  if (input_dim < 1 || context_dim < 1) throw std::invalid_argument("PICNN dimensions must be >= 1");
  detail::validate_ficnn_activations({act});
  PicnnParams p;
  p.input_dim = input_dim;
  p.context_dim = context_dim;
  p.widths = std::move(widths);
  p.activation = act;
  p.quadratic = quadratic;
  auto add = [&](const std::string& name, Tensor t, bool constrained) {
    p.blocks.push_back({name, std::move(t), constrained});
    return static_cast<int>(p.blocks.size() - 1);
  };
  auto sd = [](Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  Index ctx = context_dim;
  Index prev = 0;
  const Index n_layers = p.layers() + 1;
  for (Index l = 0; l < n_layers; ++l) {
    const bool output = l == p.layers();
    const Index w = output ? 1 : p.widths[static_cast<std::size_t>(l)];
    if (w < 1) throw std::invalid_argument("PICNN widths must be >= 1");
    const std::string s = output ? "_out" : std::to_string(l);
    PicnnParams::LayerIdx li{};
    if (l > 0) {
      li.wz = add("Wz" + s, detail::gaussian_block(prev, w, sd(prev), true, rng), true);
      li.wzu = add("Wzu" + s, detail::gaussian_block(ctx, prev, sd(ctx), false, rng), false);
      li.bz = add("bz" + s, Tensor(1, prev, 1.0), false);
    }
    li.wyu = add("Wyu" + s, detail::gaussian_block(ctx, input_dim, sd(ctx), false, rng), false);
    li.by = add("by" + s, Tensor(1, input_dim, 1.0), false);
    li.wy = add("Wy" + s, detail::gaussian_block(input_dim, w, sd(input_dim), false, rng), false);
    li.wu = add("Wu" + s, detail::gaussian_block(ctx, w, sd(ctx), false, rng), false);
    li.b = add("b" + s, Tensor(1, w, 0.0), false);
    if (!output) {
      li.v = add("V" + s, detail::gaussian_block(ctx, w, sd(ctx), false, rng), false);
      li.vb = add("v" + s, Tensor(1, w, 0.0), false);
      ctx = w;
    }
    prev = w;
    p.layout.push_back(li);
  }
  return p;
}

inline void check_simplex(const Tensor& a, double tol = 1e-9) {
  double total = 0.0;
  for (double v : a.data()) {
    if (v < 0.0) throw std::invalid_argument("weight vector has a negative entry");
    total += v;
  }
  if (std::abs(total - 1.0) > tol) throw std::invalid_argument("weight vector does not sum to 1");
}

/// Batch forward: y is M x d, context is the 1 x N weight row a.
inline Var picnn_forward(const PicnnParams& p, std::span<const Var> v, Var y, Var context) {
  detail::check_dim("picnn_forward", y.cols(), p.input_dim);
  if (context.rows() != 1 || context.cols() != p.context_dim)
    throw ShapeError("picnn_forward: context must be 1x" + std::to_string(p.context_dim) + ", got " +
                     context.value().shape_str());
  check_simplex(context.value());
  if (v.size() != p.blocks.size()) throw Error("picnn_forward: bound block count mismatch");
  const Index m = y.rows();
  const Activation ctx_act = Activation::celu();
  auto at = [&](int i) { return v[static_cast<std::size_t>(i)]; };
  Var u = context;
  std::optional<Var> z;
  for (std::size_t l = 0; l < p.layout.size(); ++l) {
    const auto& li = p.layout[l];
    const bool output = l + 1 == p.layout.size();
    Var y_gate = detail::broadcast_row(matmul(u, at(li.wyu)) + at(li.by), m);
    Var pre = matmul(y * y_gate, at(li.wy)) + detail::broadcast_row(matmul(u, at(li.wu)) + at(li.b), m);
    if (z) {
      Var z_gate = detail::broadcast_row(relu(matmul(u, at(li.wzu)) + at(li.bz)), m);
      pre = matmul(*z * z_gate, at(li.wz)) + pre;
    }
    if (output) {
      z = pre;
    } else {
      z = activate(pre, p.activation);
      u = activate(matmul(u, at(li.v)) + at(li.vb), ctx_act);
    }
  }
  Var out = *z;
  if (p.quadratic > 0.0) out = out + detail::half_squared_rows(y, p.quadratic);
  return out;
}

inline double picnn_forward(const PicnnParams& p, std::span<const double> y, std::span<const double> a) {
  Graph g;
  auto v = bind_params(g, p.blocks, false);
  return picnn_forward(p, v, g.constant(Tensor::row(y)), g.constant(Tensor::row(a))).value().item();
}

inline Var picnn_input_grad(const PicnnParams& p, std::span<const Var> v, Var y, Var context) {
  return input_grad(sum(picnn_forward(p, v, y, context)), y);
}

// ---------------------------------------------------------------------------
// Generator

/// Unconstrained feed-forward map from the latent space (optionally
/// conditioned on a weight vector a, concatenated to the latent input at
/// the first layer) to the ambient space. Hidden activations default to
/// PReLU with a learnable slope per layer.
struct GeneratorParams {
  Index latent_dim = 0;
  Index output_dim = 0;
  Index context_dim = 0;
  std::vector<Index> widths;
  Activation activation = Activation::prelu();
  std::vector<ParamBlock> blocks;

  struct LayerIdx {
    int w, b;
    int ctx = -1;    // first layer only, when conditioned
    int slope = -1;  // hidden PReLU layers only
  };
  std::vector<LayerIdx> layout;  // hidden layers then output layer
};

inline GeneratorParams make_generator(Index latent_dim, Index output_dim, std::vector<Index> widths,
                                      Activation act, std::mt19937_64& rng, Index context_dim = 0) {
  if (latent_dim < 1 || output_dim < 1) throw std::invalid_argument("generator dimensions must be >= 1");
  GeneratorParams p;
  p.latent_dim = latent_dim;
  p.output_dim = output_dim;
  p.context_dim = context_dim;
  p.widths = std::move(widths);
  p.activation = act;
  auto add = [&](const std::string& name, Tensor t) {
    p.blocks.push_back({name, std::move(t), false});
    return static_cast<int>(p.blocks.size() - 1);
  };
  Index prev = latent_dim;
  for (std::size_t l = 0; l <= p.widths.size(); ++l) {
    const bool output = l == p.widths.size();
    const Index w = output ? output_dim : p.widths[l];
    if (w < 1) throw std::invalid_argument("generator widths must be >= 1");
    const std::string s = output ? "_out" : std::to_string(l);
    const double fan_in = static_cast<double>(prev + (l == 0 ? context_dim : 0));
    GeneratorParams::LayerIdx li{};
    li.w = add("W" + s, detail::gaussian_block(prev, w, 1.0 / std::sqrt(fan_in), false, rng));
    li.b = add("b" + s, Tensor(1, w, 0.0));
    if (l == 0 && context_dim > 0)
      li.ctx = add("C" + s, detail::gaussian_block(context_dim, w, 1.0 / std::sqrt(fan_in), false, rng));
    if (!output && act.kind == Activation::Kind::PRelu) li.slope = add("slope" + s, Tensor::scalar(act.param));
    p.layout.push_back(li);
    prev = w;
  }
  return p;
}

/// Batch forward: z is M x latent_dim; context (1 x N) required iff the
/// generator is conditioned.
inline Var generator_forward(const GeneratorParams& p, std::span<const Var> v, Var z,
                             std::optional<Var> context = std::nullopt) {
  detail::check_dim("generator_forward", z.cols(), p.latent_dim);
  if ((p.context_dim > 0) != context.has_value())
    throw Error(p.context_dim > 0 ? "generator_forward: conditioned generator needs a weight vector"
                                  : "generator_forward: unconditioned generator got a weight vector");
  if (context && (context->rows() != 1 || context->cols() != p.context_dim))
    throw ShapeError("generator_forward: context shape " + context->value().shape_str());
  if (v.size() != p.blocks.size()) throw Error("generator_forward: bound block count mismatch");
  const Index m = z.rows();
  auto at = [&](int i) { return v[static_cast<std::size_t>(i)]; };
  Var x = z;
  for (std::size_t l = 0; l < p.layout.size(); ++l) {
    const auto& li = p.layout[l];
    Var bias = at(li.b);
    if (li.ctx >= 0) bias = matmul(*context, at(li.ctx)) + bias;
    Var pre = matmul(x, at(li.w)) + detail::broadcast_row(bias, m);
    if (l + 1 == p.layout.size()) {
      x = pre;
    } else if (li.slope >= 0) {
      x = detail::prelu_learnable(pre, at(li.slope));
    } else {
      x = activate(pre, p.activation);
    }
  }
  return x;
}

inline std::vector<double> generator_forward(const GeneratorParams& p, std::span<const double> z,
                                             std::span<const double> a = {}) {
  Graph g;
  auto v = bind_params(g, p.blocks, false);
  std::optional<Var> ctx;
  if (!a.empty()) ctx = g.constant(Tensor::row(a));
  const Tensor& t = generator_forward(p, v, g.constant(Tensor::row(z)), ctx).value();
  return {t.data().begin(), t.data().end()};
}

// ---------------------------------------------------------------------------
// Convexity enforcement

/// max(W, 0) on every sign-constrained block, in place.
inline void clip_nonneg(std::vector<ParamBlock>& blocks) {
  for (auto& b : blocks)
    if (b.sign_constrained) b.value.mat() = b.value.mat().cwiseMax(0.0);
}
inline void clip_nonneg(FicnnParams& p) { clip_nonneg(p.blocks); }
inline void clip_nonneg(PicnnParams& p) { clip_nonneg(p.blocks); }

/// lambda * sum ||max(-W, 0)||_F^2 over sign-constrained blocks.
inline Var convexity_penalty(const std::vector<ParamBlock>& blocks, std::span<const Var> v, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("penalty weight lambda must be >= 0");
  if (v.empty()) throw Error("convexity_penalty: no bound blocks");
  Graph& g = *v.front().graph;
  std::optional<Var> total;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (!blocks[i].sign_constrained) continue;
    Var term = squared_norm(relu(-v[i]));
    total = total ? *total + term : term;
  }
  if (!total) return g.constant(Tensor::scalar(0.0));
  return scale(*total, lambda);
}

inline double convexity_penalty(const std::vector<ParamBlock>& blocks, double lambda) {
  Graph g;
  auto v = bind_params(g, blocks, false);
  return convexity_penalty(blocks, v, lambda).value().item();
}

inline bool all_constrained_nonneg(const std::vector<ParamBlock>& blocks) {
  for (const auto& b : blocks)
    if (b.sign_constrained && b.value.mat().minCoeff() < 0.0) return false;
  return true;
}

}  // namespace nwb
