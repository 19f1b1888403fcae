#pragma once

#include "nwb/data.hpp"
#include "nwb/networks.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nwb {

/// N marginals, their weights on the simplex (or free weights for the
/// all-weights variant), the latent dimension and the penalty weight.
struct BarycenterProblem {
  std::vector<MarginalSpec> marginals;
  std::vector<double> weights;
  bool free_weights = false;
  Index latent_dim = 0;
  double lambda = 0.1;

  Index count() const { return static_cast<Index>(marginals.size()); }
  Index dim() const { return marginals.empty() ? 0 : dimension(marginals.front()); }

  void validate() const {
    if (marginals.empty()) throw std::invalid_argument("problem: need at least one marginal");
    for (const auto& m : marginals) {
      nwb::validate(m);
      if (dimension(m) != dim()) throw std::invalid_argument("problem: marginal dimensions differ");
    }
    if (!free_weights) {
      if (weights.size() != marginals.size())
        throw std::invalid_argument("problem: expected " + std::to_string(marginals.size()) + " weights");
      check_simplex(Tensor::row(weights));
    }
    if (latent_dim < 1) throw std::invalid_argument("problem: latent dimension must be >= 1");
    if (lambda < 0.0) throw std::invalid_argument("problem: lambda must be >= 0");
  }
};

/// Objective breakdown: total = sum_i a_i (J_i + R_i) + generator.
struct ObjectiveValue {
  double total = 0.0;
  std::vector<double> j;
  std::vector<double> r;
  double generator = 0.0;
};

/// Which networks are trainable in a recorded objective.
enum class Role { None, G, F, H, All };

inline bool trains_g(Role r) { return r == Role::G || r == Role::All; }
inline bool trains_f(Role r) { return r == Role::F || r == Role::All; }
inline bool trains_h(Role r) { return r == Role::H || r == Role::All; }

inline Var potential_forward(const FicnnParams& p, std::span<const Var> v, Var x, std::optional<Var> context) {
  if (context) throw Error("FICNN potentials take no weight vector");
  return ficnn_forward(p, v, x);
}

inline Var potential_forward(const PicnnParams& p, std::span<const Var> v, Var x, std::optional<Var> context) {
  if (!context) throw Error("PICNN potentials need a weight vector");
  return picnn_forward(p, v, x, *context);
}

/// (1/M) sum_j [ f(grad g(Y_j)) - <Y_j, grad g(Y_j)> - f(h(Z_j)) ]
/// given the generator output h(Z) as a node.
template <class P>
Var j_term(const P& f, std::span<const Var> fv, const P& g, std::span<const Var> gv, Var generated, Var y,
           std::optional<Var> context = std::nullopt) {
  const Index m = y.rows();
  if (m < 1 || generated.rows() < 1) throw std::invalid_argument("j_term: empty batch");
  if (generated.rows() != m) throw ShapeError("j_term: Y and Z batches differ in size");
  Var grad_g = input_grad(sum(potential_forward(g, gv, y, context)), y);
  Var transported = mean(potential_forward(f, fv, grad_g, context));
  Var pairing = scale(inner(y, grad_g), 1.0 / static_cast<double>(m));
  Var generated_term = mean(potential_forward(f, fv, generated, context));
  return transported - pairing - generated_term;
}

/// Plain-valued J for a single (f, g, h) triple and batches Y, Z.
inline double j_term(const FicnnParams& f, const FicnnParams& g, const GeneratorParams& h, const Tensor& y,
                     const Tensor& z) {
  if (y.rows() < 1 || z.rows() < 1) throw std::invalid_argument("j_term: empty batch");
  Graph gr;
  auto fv = bind_params(gr, f.blocks, false);
  auto gv = bind_params(gr, g.blocks, false);
  auto hv = bind_params(gr, h.blocks, false);
  Var generated = generator_forward(h, hv, gr.constant(z));
  return j_term(f, fv, g, gv, generated, gr.constant(y)).value().item();
}

/// Batches for one outer cycle: one Y batch per marginal and a shared Z.
struct Batches {
  std::vector<Tensor> y;
  Tensor z;
};

template <class P>
struct BarycenterModel {
  std::vector<P> f;
  std::vector<P> g;
  GeneratorParams h;
};

using NwbModel = BarycenterModel<FicnnParams>;
using NwbfModel = BarycenterModel<PicnnParams>;

/// A recorded objective together with the bound network variables.
struct ObjectiveGraph {
  Var total;
  std::vector<Var> j;
  std::vector<Var> r;
  Var generator;
  std::vector<std::vector<Var>> f_vars;
  std::vector<std::vector<Var>> g_vars;
  std::vector<Var> h_vars;

  ObjectiveValue value() const {
    ObjectiveValue v;
    v.total = total.value().item();
    for (Var x : j) v.j.push_back(x.value().item());
    for (Var x : r) v.r.push_back(x.value().item());
    v.generator = generator.value().item();
    return v;
  }
};

/// Records sum_i a_i (J_i + R(g_i)) + (1/2M) sum_j |h(Z_j)|^2 on `graph`
/// using already bound network variables (out.f_vars, out.g_vars,
/// out.h_vars). A non-null `context` (1 x N weight row) conditions every
/// network.
template <class P>
void record_objective(Graph& graph, std::span<const double> weights, const BarycenterModel<P>& model,
                      const Batches& batches, double lambda, ObjectiveGraph& out, const Tensor* context = nullptr) {
  const std::size_t n = model.f.size();
  if (n == 0 || model.g.size() != n || weights.size() != n || batches.y.size() != n)
    throw std::invalid_argument("objective: network, weight and batch counts must agree");
  if (out.f_vars.size() != n || out.g_vars.size() != n) throw std::invalid_argument("objective: unbound networks");
  const Index m = batches.z.rows();
  if (m < 1) throw std::invalid_argument("objective: empty batch");
  for (std::size_t i = 0; i < n; ++i)
    if (batches.y[i].rows() != m)
      throw std::invalid_argument("objective: batch size of marginal " + std::to_string(i) + " is " +
                                  std::to_string(batches.y[i].rows()) + ", expected " + std::to_string(m));

  std::optional<Var> ctx;
  if (context) ctx = graph.constant(*context);
  Var generated = generator_forward(model.h, out.h_vars, graph.constant(batches.z), ctx);
  out.generator = scale(squared_norm(generated), 0.5 / static_cast<double>(m));

  std::optional<Var> total;
  out.j.clear();
  out.r.clear();
  for (std::size_t i = 0; i < n; ++i) {
    Var j = j_term(model.f[i], out.f_vars[i], model.g[i], out.g_vars[i], generated, graph.constant(batches.y[i]), ctx);
    Var r = convexity_penalty(model.g[i].blocks, out.g_vars[i], lambda);
    out.j.push_back(j);
    out.r.push_back(r);
    Var term = scale(j + r, weights[i]);
    total = total ? *total + term : term;
  }
  out.total = *total + out.generator;
}

/// Binds the networks (those selected by `role` as trainable parameters,
/// the rest as constants) and records the objective.
template <class P>
ObjectiveGraph build_objective(Graph& graph, std::span<const double> weights, const BarycenterModel<P>& model,
                               const Batches& batches, double lambda, Role role, const Tensor* context = nullptr) {
  if (model.g.size() != model.f.size()) throw std::invalid_argument("objective: network, weight and batch counts must agree");
  ObjectiveGraph out;
  out.h_vars = bind_params(graph, model.h.blocks, trains_h(role));
  for (std::size_t i = 0; i < model.f.size(); ++i) {
    out.f_vars.push_back(bind_params(graph, model.f[i].blocks, trains_f(role)));
    out.g_vars.push_back(bind_params(graph, model.g[i].blocks, trains_g(role)));
  }
  record_objective(graph, weights, model, batches, lambda, out, context);
  return out;
}

/// Objective value for fixed weights (FICNN networks).
inline ObjectiveValue nwb_objective(const BarycenterProblem& problem, const NwbModel& model, const Batches& batches) {
  Graph g;
  return build_objective(g, problem.weights, model, batches, problem.lambda, Role::None).value();
}

/// Objective value for a sampled weight a (PICNN networks, conditioned generator).
inline ObjectiveValue nwbf_objective(const BarycenterProblem& problem, const NwbfModel& model, const Batches& batches,
                                     const Tensor& a) {
  check_simplex(a);
  if (a.rows() != 1 || a.cols() != problem.count()) throw ShapeError("nwbf_objective: weight must be 1xN");
  Graph g;
  return build_objective(g, a.data(), model, batches, problem.lambda, Role::None, &a).value();
}

}  // namespace nwb
