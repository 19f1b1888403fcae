#pragma once

#include "nwb/data.hpp"
#include "nwb/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

namespace nwb {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  int cases = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 1e-4;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [&](const auto& e) { return e.max_rel_error < tolerance; });
  }
};

inline void print_report(std::ostream& os, const GradCheckReport& r) {
  for (const auto& e : r.entries)
    os << (e.max_rel_error < r.tolerance ? "ok    " : "FAIL  ") << e.name << "  cases=" << e.cases
       << "  max_rel_err=" << e.max_rel_error << "\n";
  os << (r.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << r.tolerance << ")\n";
}

/// A scalar function of a list of parameter tensors, recorded on a graph.
using GradFunction = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8)
/// between reverse-mode gradients and central differences of step h.
/// The step is small because relu, and the CELU derivative inside input
/// gradients, have kinks; a wider step occasionally straddles one.
inline double check_gradient(const GradFunction& fn, std::vector<Tensor> params, double h = 1e-6) {
  auto eval = [&] {
    Graph g;
    std::vector<Var> v;
    for (const auto& p : params) v.push_back(g.constant(p));
    return fn(g, v).value().item();
  };
  Graph g;
  std::vector<Var> vars;
  for (const auto& p : params) vars.push_back(g.parameter(p));
  g.backward(fn(g, vars));

  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor analytic = g.grad(vars[i]);
    auto data = params[i].data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      const double up = eval();
      data[k] = saved - h;
      const double down = eval();
      data[k] = saved;
      const double num = (up - down) / (2 * h);
      const double an = analytic.data()[k];
      diff += (an - num) * (an - num);
      na += an * an;
      nn += num * num;
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
}

namespace detail {

inline std::vector<Tensor> values(const std::vector<ParamBlock>& blocks) {
  std::vector<Tensor> out;
  for (const auto& b : blocks) out.push_back(b.value);
  return out;
}

inline std::span<const Var> slice(const std::vector<Var>& v, std::size_t offset, std::size_t n) {
  return std::span<const Var>(v).subspan(offset, n);
}

inline Tensor gaussian_tensor(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Tensor t(r, c);
  for (double& x : t.data()) x = n(rng);
  return t;
}

// Makes some sign-constrained g weights negative so the penalty is active.
inline void perturb_constrained(std::vector<ParamBlock>& blocks, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& b : blocks)
    if (b.sign_constrained)
      for (double& x : b.value.data()) x += n(rng);
}

}  // namespace detail

/// Finite-difference suite over the networks and objectives: FICNN and
/// PICNN parameter and input gradients, the double-backprop term
/// d/d(theta_g) sum f(grad g(Y)), the convexity penalty, the generator and
/// the full objective. Every check runs once per seed and dimension; the
/// report keeps the worst relative error of each.
inline GradCheckReport run_gradcheck(std::uint64_t seed, int seeds = 100, std::vector<Index> dims = {1, 2, 3},
                                     double tolerance = 1e-4) {
  GradCheckReport report;
  report.tolerance = tolerance;
  const std::vector<std::string> names = {"ficnn_params",       "ficnn_input_grad",     "double_backprop_theta_g",
                                          "double_backprop_theta_f", "convexity_penalty", "picnn_double_backprop",
                                          "generator_params",   "objective_all_networks"};
  for (const auto& n : names) report.entries.push_back({n, 0.0, 0});
  auto record = [&](std::size_t i, double err) {
    auto& e = report.entries[i];
    e.max_rel_error = std::max(e.max_rel_error, std::isnan(err) ? INFINITY : err);
    ++e.cases;
  };

  const Index batch = 3;
  for (int s = 0; s < seeds; ++s) {
    for (Index d : dims) {
      std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(s)));
      const std::vector<Index> widths = {4, 3};
      FicnnParams f = make_ficnn(d, widths, Activation::celu(), rng);
      FicnnParams g = make_ficnn(d, widths, Activation::celu(), rng);
      detail::perturb_constrained(g.blocks, rng);
      const Tensor y = detail::gaussian_tensor(batch, d, rng);
      const std::size_t nf = f.blocks.size(), ng = g.blocks.size();

      record(0, check_gradient([&](Graph&, const std::vector<Var>& v) {
                                 return sum(ficnn_forward(f, detail::slice(v, 0, nf), v[nf]));
                               },
                               [&] {
                                 auto p = detail::values(f.blocks);
                                 p.push_back(y);
                                 return p;
                               }()));

      record(1, check_gradient(
                    [&](Graph&, const std::vector<Var>& v) {
                      Var x = v[nf];
                      std::span<const Var> fv = detail::slice(v, 0, nf);
                      Var grad = ficnn_input_grad(f, fv, x);
                      return sum(ficnn_forward(f, fv, x)) + inner(grad, grad);
                    },
                    [&] {
                      auto p = detail::values(f.blocks);
                      p.push_back(y);
                      return p;
                    }()));

      // J-type composite mean f(grad g(Y)) - <Y, grad g(Y)>/M, first in
      // theta_g alone, then in theta_g and theta_f together.
      auto composite = [&](Graph& gr, std::span<const Var> gv, std::span<const Var> fv) {
        Var yy = gr.constant(y);
        Var grad = ficnn_input_grad(g, gv, yy);
        return mean(ficnn_forward(f, fv, grad)) - scale(inner(yy, grad), 1.0 / static_cast<double>(batch));
      };
      record(2, check_gradient(
                    [&](Graph& gr, const std::vector<Var>& v) { return composite(gr, v, bind_params(gr, f.blocks, false)); },
                    detail::values(g.blocks)));
      auto both = detail::values(g.blocks);
      for (auto& t : detail::values(f.blocks)) both.push_back(t);
      record(3, check_gradient(
                    [&](Graph& gr, const std::vector<Var>& v) {
                      return composite(gr, detail::slice(v, 0, ng), detail::slice(v, ng, nf));
                    },
                    both));

      record(4, check_gradient(
                    [&](Graph&, const std::vector<Var>& v) { return convexity_penalty(g.blocks, v, 0.1); },
                    detail::values(g.blocks)));

      PicnnParams pf = make_picnn(d, 2, {4, 3}, Activation::celu(), rng);
      PicnnParams pg = make_picnn(d, 2, {4, 3}, Activation::celu(), rng);
      const Tensor a = sample_simplex(2, rng());
      const std::size_t npf = pf.blocks.size(), npg = pg.blocks.size();
      auto pboth = detail::values(pg.blocks);
      for (auto& t : detail::values(pf.blocks)) pboth.push_back(t);
      record(5, check_gradient(
                    [&](Graph& gr, const std::vector<Var>& v) {
                      Var yy = gr.constant(y);
                      Var ctx = gr.constant(a);
                      Var grad = picnn_input_grad(pg, detail::slice(v, 0, npg), yy, ctx);
                      return mean(picnn_forward(pf, detail::slice(v, npg, npf), grad, ctx)) +
                             scale(squared_norm(grad), 0.1);
                    },
                    pboth));

      GeneratorParams h = make_generator(d, d, {4, 4}, Activation::prelu(), rng);
      const Tensor z = detail::gaussian_tensor(batch, d, rng);
      record(6, check_gradient(
                    [&](Graph& gr, const std::vector<Var>& v) {
                      Var out = generator_forward(h, v, gr.constant(z));
                      return mean(ficnn_forward(f, bind_params(gr, f.blocks, false), out)) + squared_norm(out);
                    },
                    detail::values(h.blocks)));

      // Full objective, two marginals, every network trainable.
      NwbModel model;
      model.f = {f, make_ficnn(d, widths, Activation::celu(), rng)};
      model.g = {g, make_ficnn(d, widths, Activation::celu(), rng)};
      detail::perturb_constrained(model.g[1].blocks, rng);
      model.h = h;
      Batches batches{{y, detail::gaussian_tensor(batch, d, rng)}, z};
      const std::vector<double> weights = {0.3, 0.7};
      std::vector<Tensor> all;
      for (const auto* net : {&model.f[0].blocks, &model.f[1].blocks, &model.g[0].blocks, &model.g[1].blocks,
                              &model.h.blocks})
        for (auto& t : detail::values(*net)) all.push_back(t);
      record(7, check_gradient(
                    [&](Graph& gr, const std::vector<Var>& v) {
                      ObjectiveGraph obj;
                      std::size_t k = 0;
                      auto take = [&](std::size_t count) {
                        std::vector<Var> out(v.begin() + static_cast<std::ptrdiff_t>(k),
                                             v.begin() + static_cast<std::ptrdiff_t>(k + count));
                        k += count;
                        return out;
                      };
                      for (const auto& fi : model.f) obj.f_vars.push_back(take(fi.blocks.size()));
                      for (const auto& gi : model.g) obj.g_vars.push_back(take(gi.blocks.size()));
                      obj.h_vars = take(model.h.blocks.size());
                      record_objective(gr, weights, model, batches, 0.1, obj);
                      return obj.total;
                    },
                    all));
    }
  }
  return report;
}

}  // namespace nwb
