#pragma once

#include "nwb/adam.hpp"
#include "nwb/objectives.hpp"
#include "nwb/recovery.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace nwb {

enum class Mode { Nwb, NwbF };

struct NetworkShape {
  std::vector<Index> widths;
  Activation activation = Activation::celu();
  double quadratic = 0.0;  // potentials only
};

struct TrainConfig {
  Mode mode = Mode::Nwb;
  int k1 = 6;
  int k2 = 4;
  int k3 = 1000;
  Index batch_size = 100;
  double lr_f = 1e-3;
  double lr_g = 1e-3;
  double lr_h = 1e-3;
  double lr_decay_factor = 0.1;
  double lr_decay_period_epochs = 0.0;  // <= 0: constant learning rate
  int cycles_per_epoch = 100;           // an "epoch" for infinite samplers
  std::uint64_t seed = 0;
  NetworkShape potential;  // f and g
  NetworkShape generator;  // h
  int uvp_every = 0;       // 0: only after the last cycle (Gaussian problems)
  Index uvp_samples = 10000;
  std::vector<double> eval_weight;  // free-weight telemetry; uniform when empty
  double divergence_limit = 1e8;

  void validate() const {
    if (k1 < 1 || k2 < 1 || k3 < 1) throw std::invalid_argument("K1, K2, K3 must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size M must be >= 1");
    if (!(lr_f > 0.0) || !(lr_g > 0.0) || !(lr_h > 0.0)) throw std::invalid_argument("learning rates must be > 0");
    if (cycles_per_epoch < 1) throw std::invalid_argument("cycles_per_epoch must be >= 1");
    if (uvp_samples < 2) throw std::invalid_argument("uvp_samples must be >= 2");
  }
};

/// Defaults for ambient dimension d: potentials with 3 hidden CELU layers
/// of width max(16, 2d), a generator with one more PReLU layer.
inline TrainConfig default_train_config(Index d) {
  TrainConfig c;
  const Index w = std::max<Index>(16, 2 * d);
  c.potential.widths = {w, w, w};
  c.potential.activation = Activation::celu(1.0);
  c.generator.widths = {w, w, w, w};
  c.generator.activation = Activation::prelu(0.25);
  return c;
}

/// Learning rate after step decay: base * factor^floor(cycle / period).
inline double lr_schedule(double base, int cycle, const TrainConfig& cfg) {
  if (!(base > 0.0)) throw std::invalid_argument("lr_schedule: base must be > 0");
  if (cfg.lr_decay_period_epochs <= 0.0 || !std::isfinite(cfg.lr_decay_period_epochs)) return base;
  const double period_cycles = cfg.lr_decay_period_epochs * cfg.cycles_per_epoch;
  const double drops = std::floor(static_cast<double>(cycle) / period_cycles);
  return base * std::pow(cfg.lr_decay_factor, drops);
}

struct CycleRecord {
  int cycle = 0;
  ObjectiveValue objective;
  double lr_f = 0.0, lr_g = 0.0, lr_h = 0.0;
  std::optional<double> uvp;
  double wall_seconds = 0.0;
};

struct TrainReport {
  std::vector<CycleRecord> records;
};

/// One JSON line per cycle. Wall time is not written so that reports of
/// identically seeded runs compare byte for byte.
inline std::string record_json(const CycleRecord& r) {
  nlohmann::json j;
  j["cycle"] = r.cycle;
  j["total"] = r.objective.total;
  j["J"] = r.objective.j;
  j["R"] = r.objective.r;
  j["gen_term"] = r.objective.generator;
  j["lr"] = {{"f", r.lr_f}, {"g", r.lr_g}, {"h", r.lr_h}};
  if (r.uvp) j["uvp"] = *r.uvp;
  return j.dump();
}

inline void write_report(std::ostream& os, const TrainReport& report) {
  for (const auto& r : report.records) os << record_json(r) << "\n";
}

class DivergenceError : public NumericError {
 public:
  DivergenceError(int cycle, const std::string& what)
      : NumericError("training diverged at cycle " + std::to_string(cycle) + ": " + what), cycle_(cycle) {}
  int cycle() const { return cycle_; }

 private:
  int cycle_;
};

/// Optional instrumentation.
struct TrainHooks {
  std::function<void(Role, int cycle)> on_update;
  std::function<void(const CycleRecord&)> on_cycle;
};

template <class P>
P make_potential(const BarycenterProblem& problem, const TrainConfig& cfg, std::mt19937_64& rng) {
  if constexpr (std::is_same_v<P, PicnnParams>)
    return make_picnn(problem.dim(), problem.count(), cfg.potential.widths, cfg.potential.activation, rng,
                      cfg.potential.quadratic);
  else
    return make_ficnn(problem.dim(), cfg.potential.widths, cfg.potential.activation, rng, cfg.potential.quadratic);
}

/// Fresh networks for a problem, seeded from cfg.seed.
template <class P>
BarycenterModel<P> init_model(const BarycenterProblem& problem, const TrainConfig& cfg) {
  std::mt19937_64 rng(stream_seed(cfg.seed, streams::kInit, 0));
  BarycenterModel<P> model;
  for (Index i = 0; i < problem.count(); ++i) model.f.push_back(make_potential<P>(problem, cfg, rng));
  for (Index i = 0; i < problem.count(); ++i) model.g.push_back(make_potential<P>(problem, cfg, rng));
  const Index ctx = std::is_same_v<P, PicnnParams> ? problem.count() : 0;
  model.h = make_generator(problem.latent_dim, problem.dim(), cfg.generator.widths, cfg.generator.activation, rng, ctx);
  return model;
}

namespace detail {

struct Optimizers {
  std::vector<AdamState> f, g;
  AdamState h;
};

template <class P>
ObjectiveValue update(BarycenterModel<P>& model, Optimizers& opt, std::span<const double> weights,
                      const Batches& batches, const Tensor* context, double lambda, Role role, double lr, int cycle,
                      double limit) {
  Graph graph;
  ObjectiveValue value;
  try {
    ObjectiveGraph obj = build_objective(graph, weights, model, batches, lambda, role, context);
    value = obj.value();
    if (!std::isfinite(value.total) || std::abs(value.total) > limit)
      throw DivergenceError(cycle, "objective " + std::to_string(value.total));
    graph.backward(obj.total);
    const std::size_t n = model.f.size();
    if (role == Role::G)
      for (std::size_t i = 0; i < n; ++i)
        adam_step(opt.g[i], model.g[i].blocks, gradients(graph, obj.g_vars[i]), lr, Direction::Minimize);
    if (role == Role::F)
      for (std::size_t i = 0; i < n; ++i) {
        adam_step(opt.f[i], model.f[i].blocks, gradients(graph, obj.f_vars[i]), lr, Direction::Maximize);
        clip_nonneg(model.f[i].blocks);
      }
    if (role == Role::H) adam_step(opt.h, model.h.blocks, gradients(graph, obj.h_vars), lr, Direction::Minimize);
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericError& e) {
    throw DivergenceError(cycle, e.what());
  }
  return value;
}

}  // namespace detail

/// Alternating min-max-min training. Each outer cycle draws fresh batches
/// (and, in free-weight mode, a weight a from the uniform simplex
/// distribution) and then runs K2 times { K1 g-updates decreasing the
/// objective, one f-update increasing it followed by clipping f }, then
/// one h-update decreasing it. The same batches serve every update of the
/// cycle. Deterministic given cfg.seed.
template <class P>
TrainReport train(const BarycenterProblem& problem, const TrainConfig& cfg, BarycenterModel<P>& model,
                  const TrainHooks& hooks = {}) {
  constexpr bool free_weights = std::is_same_v<P, PicnnParams>;
  problem.validate();
  cfg.validate();
  if (free_weights != problem.free_weights)
    throw std::invalid_argument(free_weights ? "free-weight training needs a free-weight problem"
                                             : "fixed-weight training needs problem weights");
  const auto n = static_cast<std::size_t>(problem.count());
  if (model.f.size() != n || model.g.size() != n) throw std::invalid_argument("model has the wrong marginal count");

  detail::Optimizers opt;
  opt.f.resize(n);
  opt.g.resize(n);

  std::optional<Tensor> eval_weight;
  std::vector<double> telemetry_weights = problem.weights;
  if constexpr (free_weights) {
    telemetry_weights = cfg.eval_weight.empty() ? std::vector<double>(n, 1.0 / static_cast<double>(n)) : cfg.eval_weight;
    eval_weight = Tensor::row(telemetry_weights);
    check_simplex(*eval_weight);
  }
  std::optional<GaussianMoments> truth;
  if (all_gaussian(problem)) truth = oracle_barycenter(problem, telemetry_weights);

  TrainReport report;
  const auto t0 = std::chrono::steady_clock::now();
  for (int cycle = 0; cycle < cfg.k3; ++cycle) {
    const auto c = static_cast<std::uint64_t>(cycle);
    std::vector<double> weights = problem.weights;
    std::optional<Tensor> a;
    if constexpr (free_weights) {
      a = sample_simplex(problem.count(), stream_seed(cfg.seed, streams::kSimplex, c));
      weights.assign(a->data().begin(), a->data().end());
    }
    Batches batches;
    batches.z = sample_standard_normal(cfg.batch_size, problem.latent_dim, stream_seed(cfg.seed, streams::kLatent, c));
    for (std::size_t i = 0; i < n; ++i) {
      auto b = sample(problem.marginals[i], cfg.batch_size, stream_seed(cfg.seed, streams::marginal(static_cast<int>(i)), c),
                      static_cast<int>(i));
      if (b.size() < cfg.batch_size) throw std::runtime_error("marginal " + std::to_string(i) + " emitted too few samples");
      batches.y.push_back(std::move(b.points));
    }

    CycleRecord rec;
    rec.cycle = cycle;
    rec.lr_f = lr_schedule(cfg.lr_f, cycle, cfg);
    rec.lr_g = lr_schedule(cfg.lr_g, cycle, cfg);
    rec.lr_h = lr_schedule(cfg.lr_h, cycle, cfg);
    const Tensor* ctx = a ? &*a : nullptr;
    auto step = [&](Role role, double lr) {
      if (hooks.on_update) hooks.on_update(role, cycle);
      return detail::update(model, opt, weights, batches, ctx, problem.lambda, role, lr, cycle, cfg.divergence_limit);
    };

    for (int k2 = 0; k2 < cfg.k2; ++k2) {
      for (int k1 = 0; k1 < cfg.k1; ++k1) step(Role::G, rec.lr_g);
      step(Role::F, rec.lr_f);
    }
    rec.objective = step(Role::H, rec.lr_h);

    const bool last = cycle + 1 == cfg.k3;
    if (truth && (last || (cfg.uvp_every > 0 && (cycle + 1) % cfg.uvp_every == 0))) {
      const auto gen = sample_generator(model.h, cfg.uvp_samples, stream_seed(cfg.seed, streams::kEvalLatent, c),
                                        eval_weight ? &*eval_weight : nullptr);
      rec.uvp = uvp(empirical_moments(gen.points), *truth).value;
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hooks.on_cycle) hooks.on_cycle(rec);
    report.records.push_back(std::move(rec));
  }
  return report;
}

struct NwbRun {
  TrainReport report;
  NwbModel model;
};
struct NwbfRun {
  TrainReport report;
  NwbfModel model;
};

/// Fixed-weight barycenter training from freshly initialized networks.
inline NwbRun nwb_train(const BarycenterProblem& problem, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  problem.validate();
  NwbRun run{{}, init_model<FicnnParams>(problem, cfg)};
  run.report = train(problem, cfg, run.model, hooks);
  return run;
}

/// All-weights training: one conditioned model serves every weight vector.
inline NwbfRun nwbf_train(const BarycenterProblem& problem, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  problem.validate();
  NwbfRun run{{}, init_model<PicnnParams>(problem, cfg)};
  run.report = train(problem, cfg, run.model, hooks);
  return run;
}

}  // namespace nwb
