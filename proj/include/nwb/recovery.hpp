#pragma once

#include "nwb/gaussian.hpp"
#include "nwb/objectives.hpp"

#include <optional>
#include <variant>
#include <vector>

namespace nwb {

/// {h(Z_j)} for n draws Z ~ N(0, I_latent); `a` conditions the generator.
inline SampleBatch sample_generator(const GeneratorParams& h, Index n, std::uint64_t seed,
                                    const Tensor* a = nullptr) {
  if (n < 1) throw std::invalid_argument("sample_generator: n must be >= 1");
  Graph g;
  auto hv = bind_params(g, h.blocks, false);
  std::optional<Var> ctx;
  if (a) ctx = g.constant(*a);
  Var z = g.constant(sample_standard_normal(n, h.latent_dim, seed));
  return {generator_forward(h, hv, z, ctx).value(), -1, seed};
}

/// {grad g(Y_j)}: maps marginal samples onto the barycenter. Only re-maps
/// the samples given; the output has exactly as many points as the input.
inline SampleBatch pushforward_marginal(const FicnnParams& g, const SampleBatch& y) {
  Graph gr;
  auto gv = bind_params(gr, g.blocks, false);
  return {ficnn_input_grad(g, gv, gr.constant(y.points)).value(), y.marginal_id, y.seed};
}

inline SampleBatch pushforward_marginal(const PicnnParams& g, const SampleBatch& y, const Tensor& a) {
  Graph gr;
  auto gv = bind_params(gr, g.blocks, false);
  return {picnn_input_grad(g, gv, gr.constant(y.points), gr.constant(a)).value(), y.marginal_id, y.seed};
}

/// {grad f(h(Z_j))}: generator samples carried back to marginal i.
inline SampleBatch backward_to_marginal(const FicnnParams& f, const GeneratorParams& h, Index n,
                                        std::uint64_t seed) {
  const SampleBatch gen = sample_generator(h, n, seed);
  Graph gr;
  auto fv = bind_params(gr, f.blocks, false);
  return {ficnn_input_grad(f, fv, gr.constant(gen.points)).value(), -1, seed};
}

inline SampleBatch backward_to_marginal(const PicnnParams& f, const GeneratorParams& h, Index n, std::uint64_t seed,
                                        const Tensor& a) {
  const SampleBatch gen = sample_generator(h, n, seed, &a);
  Graph gr;
  auto fv = bind_params(gr, f.blocks, false);
  return {picnn_input_grad(f, fv, gr.constant(gen.points), gr.constant(a)).value(), -1, seed};
}

inline bool all_gaussian(const BarycenterProblem& problem) {
  for (const auto& m : problem.marginals)
    if (!std::holds_alternative<GaussianSpec>(m)) return false;
  return true;
}

/// Exact barycenter when every marginal is Gaussian, otherwise nullopt.
inline std::optional<GaussianMoments> oracle_barycenter(const BarycenterProblem& problem,
                                                        std::span<const double> weights) {
  if (!all_gaussian(problem)) return std::nullopt;
  std::vector<GaussianMoments> ms;
  for (const auto& m : problem.marginals) ms.push_back(std::get<GaussianSpec>(m).moments);
  return gaussian_barycenter(ms, weights).moments;
}

struct RunScore {
  UvpScore generator;             // UVP(h#eta, exact)
  UvpScore pushforward;           // sum_i a_i UVP(grad g_i # mu_i, exact)
  std::vector<UvpScore> per_marginal;
  GaussianMoments truth;
};

/// Scores both recovery routes against the exact Gaussian barycenter from
/// n fresh samples per route. `seed` should differ from training seeds.
template <class P>
RunScore score_run(const BarycenterProblem& problem, const BarycenterModel<P>& model, Index n, std::uint64_t seed,
                   const Tensor* a = nullptr) {
  std::vector<double> weights = problem.weights;
  if (a) weights.assign(a->data().begin(), a->data().end());
  if constexpr (std::is_same_v<P, PicnnParams>) {
    if (!a) throw std::invalid_argument("score_run: free-weight model needs a weight vector");
  }
  const auto truth = oracle_barycenter(problem, weights);
  if (!truth) throw std::invalid_argument("score_run: exact barycenter needs Gaussian marginals");

  RunScore s;
  s.truth = *truth;
  const auto gen = sample_generator(model.h, n, stream_seed(seed, streams::kEvalLatent, 0), a);
  s.generator = uvp(empirical_moments(gen.points), *truth, static_cast<std::size_t>(n));
  s.pushforward.samples = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < model.g.size(); ++i) {
    const auto y = sample(problem.marginals[i], n, stream_seed(seed, streams::kEval, i), static_cast<int>(i));
    SampleBatch pushed;
    if constexpr (std::is_same_v<P, PicnnParams>)
      pushed = pushforward_marginal(model.g[i], y, *a);
    else
      pushed = pushforward_marginal(model.g[i], y);
    s.per_marginal.push_back(uvp(empirical_moments(pushed.points), *truth, static_cast<std::size_t>(n)));
    s.pushforward.value += weights[i] * s.per_marginal.back().value;
    s.pushforward.bw2sq += weights[i] * s.per_marginal.back().bw2sq;
  }
  return s;
}

}  // namespace nwb
