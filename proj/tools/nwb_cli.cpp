// nwb: command-line front end.
//
//   nwb train     --config run.toml --out DIR [--seed S]
//   nwb eval      --config run.toml --out DIR [--checkpoint FILE] [--weight a,b,..] [--seed S]
//   nwb export    --config run.toml --out DIR [--checkpoint FILE] [--weight a,b,..] [--sweep K] [--n N] [--seed S]
//   nwb oracle    --config moments.json [--weight a,b,..] [--out FILE]
//   nwb gradcheck [--seed S] [--seeds N] [--inject-fault]
//   nwb landscape [--seed S]
//
// Exit codes: 0 ok, 2 usage or configuration error, 3 numeric failure.

#include "nwb/checkpoint.hpp"
#include "nwb/config.hpp"
#include "nwb/gradcheck.hpp"
#include "nwb/landscape.hpp"
#include "nwb/recovery.hpp"
#include "nwb/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace nwb;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out;
  std::string checkpoint;
  std::vector<double> weight;
  std::optional<std::uint64_t> seed;
  int seeds = 100;
  int sweep = 0;
  Index n = 0;
  bool inject_fault = false;
  bool backward = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << text)) throw std::runtime_error("cannot write " + path.string());
}

RunConfig load_run_config(const Options& o) {
  if (o.config.empty()) throw UsageError("--config is required");
  RunConfig cfg = load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  return cfg;
}

std::string checkpoint_path(const Options& o) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  if (o.out.empty()) throw UsageError("--out (run directory) or --checkpoint is required");
  return (fs::path(o.out) / "checkpoints" / "model.ckpt").string();
}

Tensor weight_row(const Options& o, Index n) {
  if (static_cast<Index>(o.weight.size()) != n)
    throw UsageError("--weight needs " + std::to_string(n) + " comma-separated entries");
  Tensor a = Tensor::row(o.weight);
  try {
    check_simplex(a);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--weight: ") + e.what());
  }
  return a;
}

// train -------------------------------------------------------------------

template <class P>
int run_training(const RunConfig& cfg, const fs::path& dir) {
  const auto& problem = cfg.problem;
  BarycenterModel<P> model = init_model<P>(problem, cfg.train);
  std::ofstream report(dir / "report.jsonl", std::ios::binary);
  if (!report) throw std::runtime_error("cannot write " + (dir / "report.jsonl").string());
  TrainHooks hooks;
  const int k3 = cfg.train.k3;
  hooks.on_cycle = [&](const CycleRecord& r) {
    report << record_json(r) << "\n";
    if (r.uvp || (r.cycle + 1) % std::max(1, k3 / 20) == 0) {
      std::cerr << "cycle " << r.cycle + 1 << "/" << k3 << "  objective " << r.objective.total;
      if (r.uvp) std::cerr << "  uvp " << *r.uvp << "%";
      std::cerr << "  " << std::fixed << std::setprecision(1) << r.wall_seconds << "s\n" << std::defaultfloat;
    }
  };
  try {
    const TrainReport rep = train(problem, cfg.train, model, hooks);
    report.flush();
    save_checkpoint((dir / "checkpoints" / "model.ckpt").string(), model);
    nlohmann::json summary = {{"cycles", rep.records.size()}, {"final_objective", rep.records.back().objective.total}};
    if (rep.records.back().uvp) summary["uvp"] = *rep.records.back().uvp;
    if (all_gaussian(problem)) {
      std::optional<Tensor> a;
      if (problem.free_weights) {
        const auto n = static_cast<std::size_t>(problem.count());
        a = Tensor::row(cfg.eval.eval_weight.empty() ? std::vector<double>(n, 1.0 / static_cast<double>(n))
                                                     : cfg.eval.eval_weight);
      }
      const RunScore s = score_run(problem, model, cfg.eval.uvp_samples, cfg.eval.eval_seed, a ? &*a : nullptr);
      summary["uvp_generator"] = s.generator.value;
      summary["uvp_pushforward"] = s.pushforward.value;
      std::cout << "UVP generator " << s.generator.value << "%  pushforward " << s.pushforward.value << "%\n";
    }
    write_text(dir / "exports" / "summary.json", summary.dump(2) + "\n");
    std::cout << "trained " << rep.records.size() << " cycles; checkpoint " << (dir / "checkpoints" / "model.ckpt").string()
              << "\n";
    return kOk;
  } catch (const DivergenceError& e) {
    report.flush();
    save_checkpoint((dir / "checkpoints" / "diverged.ckpt").string(), model);
    std::cerr << "error: " << e.what() << "; parameters saved to checkpoints/diverged.ckpt\n";
    return kNumeric;
  }
}

int cmd_train(const Options& o) {
  const RunConfig cfg = load_run_config(o);
  if (o.out.empty()) throw UsageError("--out (run directory) is required");
  const fs::path dir(o.out);
  fs::create_directories(dir / "checkpoints");
  fs::create_directories(dir / "exports");
  write_text(dir / "config.toml", echo_config(cfg));
  return cfg.train.mode == Mode::NwbF ? run_training<PicnnParams>(cfg, dir) : run_training<FicnnParams>(cfg, dir);
}

// eval --------------------------------------------------------------------

template <class P>
nlohmann::json eval_model(const RunConfig& cfg, const BarycenterModel<P>& model, const Tensor* a,
                          std::uint64_t seed) {
  const RunScore s = score_run(cfg.problem, model, cfg.eval.uvp_samples, seed, a);
  std::cout << "route          UVP (%)\n";
  std::cout << "generator      " << s.generator.value << "\n";
  std::cout << "pushforward    " << s.pushforward.value << "  (weighted)\n";
  for (std::size_t i = 0; i < s.per_marginal.size(); ++i)
    std::cout << "  marginal " << i << "   " << s.per_marginal[i].value << "\n";
  nlohmann::json j = {{"samples", cfg.eval.uvp_samples},
                      {"uvp_generator", s.generator.value},
                      {"uvp_pushforward", s.pushforward.value},
                      {"truth", moments_to_json(s.truth)}};
  for (const auto& p : s.per_marginal) j["uvp_per_marginal"].push_back(p.value);
  if (a) j["weight"] = std::vector<double>(a->data().begin(), a->data().end());
  return j;
}

void check_model_matches(const RunConfig& cfg, const AnyModel& model) {
  const bool free = std::holds_alternative<NwbfModel>(model);
  if (free != cfg.problem.free_weights)
    throw CheckpointError(free ? "checkpoint holds a free-weight model but the config has fixed weights"
                               : "checkpoint holds a fixed-weight model but the config has free weights");
  const auto count = std::visit([](const auto& m) { return m.f.size(); }, model);
  const auto dim = std::visit([](const auto& m) { return m.h.output_dim; }, model);
  if (static_cast<Index>(count) != cfg.problem.count() || dim != cfg.problem.dim())
    throw CheckpointError("checkpoint does not match the configured problem");
}

std::optional<Tensor> eval_weight(const Options& o, const RunConfig& cfg) {
  if (!cfg.problem.free_weights) {
    if (!o.weight.empty()) throw UsageError("--weight applies to free-weight models only");
    return std::nullopt;
  }
  if (!o.weight.empty()) return weight_row(o, cfg.problem.count());
  const auto n = static_cast<std::size_t>(cfg.problem.count());
  return Tensor::row(cfg.eval.eval_weight.empty() ? std::vector<double>(n, 1.0 / static_cast<double>(n))
                                                  : cfg.eval.eval_weight);
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = load_run_config(o);
  if (!all_gaussian(cfg.problem)) throw UsageError("eval needs Gaussian marginals (the exact barycenter is unknown)");
  const AnyModel model = load_checkpoint(checkpoint_path(o));
  check_model_matches(cfg, model);
  const auto a = eval_weight(o, cfg);
  const std::uint64_t seed = o.seed.value_or(cfg.eval.eval_seed);
  const nlohmann::json j =
      std::visit([&](const auto& m) { return eval_model(cfg, m, a ? &*a : nullptr, seed); }, model);
  if (!o.out.empty()) {
    fs::create_directories(fs::path(o.out) / "exports");
    write_text(fs::path(o.out) / "exports" / "eval.json", j.dump(2) + "\n");
  }
  return kOk;
}

// export ------------------------------------------------------------------

std::string weight_tag(const Tensor& a) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  for (std::size_t i = 0; i < a.data().size(); ++i) os << (i ? "_" : "") << a.data()[i];
  return os.str();
}

int cmd_export(const Options& o) {
  const RunConfig cfg = load_run_config(o);
  if (o.out.empty()) throw UsageError("--out (run directory) is required");
  const AnyModel model = load_checkpoint(checkpoint_path(o));
  check_model_matches(cfg, model);
  const Index n = o.n > 0 ? o.n : cfg.eval.export_samples;
  const std::uint64_t seed = o.seed.value_or(cfg.eval.eval_seed);
  const fs::path dir = fs::path(o.out) / "exports";
  fs::create_directories(dir);

  if (const auto* m = std::get_if<NwbModel>(&model)) {
    if (!o.weight.empty() || o.sweep > 0) throw UsageError("--weight/--sweep apply to free-weight models only");
    write_csv((dir / "barycenter.csv").string(), sample_generator(m->h, n, seed));
    std::cout << "wrote " << (dir / "barycenter.csv").string() << "\n";
    if (o.backward)
      for (std::size_t i = 0; i < m->f.size(); ++i) {
        const auto path = dir / ("marginal_" + std::to_string(i) + ".csv");
        write_csv(path.string(), backward_to_marginal(m->f[i], m->h, n, seed));
        std::cout << "wrote " << path.string() << "\n";
      }
    return kOk;
  }

  const auto& m = std::get<NwbfModel>(model);
  std::vector<Tensor> weights;
  if (o.sweep > 0) {
    if (cfg.problem.count() != 2) throw UsageError("--sweep needs exactly two marginals");
    if (o.sweep < 2) throw UsageError("--sweep needs at least 2 points");
    for (int k = 0; k < o.sweep; ++k) {
      const double t = static_cast<double>(k) / (o.sweep - 1);
      weights.push_back(Tensor::row({t, 1.0 - t}));
    }
  } else {
    weights.push_back(*eval_weight(o, cfg));
  }
  for (const auto& a : weights) {
    const auto path = dir / ("barycenter_a" + weight_tag(a) + ".csv");
    write_csv(path.string(), sample_generator(m.h, n, seed, &a));
    std::cout << "wrote " << path.string() << "\n";
    if (o.backward)
      for (std::size_t i = 0; i < m.f.size(); ++i) {
        const auto p = dir / ("marginal_" + std::to_string(i) + "_a" + weight_tag(a) + ".csv");
        write_csv(p.string(), backward_to_marginal(m.f[i], m.h, n, seed, a));
      }
  }
  return kOk;
}

// oracle ------------------------------------------------------------------

int cmd_oracle(const Options& o) {
  if (o.config.empty()) throw UsageError("--config (moments JSON) is required");
  std::ifstream in(o.config);
  if (!in) throw UsageError("cannot read " + o.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(o.config + ": " + e.what());
  }
  if (!j.contains("marginals") || !j["marginals"].is_array())
    throw UsageError(o.config + ": expected {\"marginals\": [{\"mean\": .., \"cov\": ..}, ..], \"weights\": [..]}");
  std::vector<GaussianMoments> ms;
  try {
    for (const auto& m : j["marginals"]) ms.push_back(moments_from_json(m));
  } catch (const std::exception& e) {
    throw UsageError(o.config + ": " + e.what());
  }
  std::vector<double> weights = o.weight;
  if (weights.empty()) {
    if (j.contains("weights"))
      weights = j["weights"].get<std::vector<double>>();
    else
      weights.assign(ms.size(), 1.0 / static_cast<double>(ms.size()));
  }
  if (weights.size() != ms.size()) throw UsageError("need one weight per marginal");
  GaussianBarycenter b;
  try {
    b = gaussian_barycenter(ms, weights);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const std::string text = moments_to_json(b.moments).dump(2) + "\n";
  if (o.out.empty())
    std::cout << text;
  else
    write_text(o.out, text);
  std::cerr << "iterations " << b.iterations << "  residual " << b.residual << "\n";
  return kOk;
}

// gradcheck / landscape -----------------------------------------------------

int cmd_gradcheck(const Options& o) {
  if (o.inject_fault) testing_hooks::celu_derivative_fault = 1e-3;
  const GradCheckReport r = run_gradcheck(o.seed.value_or(0), o.seeds);
  testing_hooks::celu_derivative_fault = 0.0;
  print_report(std::cout, r);
  return r.passed() ? kOk : kNumeric;
}

int cmd_landscape(const Options& o) {
  const LandscapeSuiteResult r = run_landscape_suite(o.seed.value_or(0));
  std::cout << "instances          " << r.instances << "\n"
            << "optimum error      " << r.optimum_error << "\n"
            << "descent error      " << r.descent_error << "  (< 1e-6)\n"
            << "gamma deviation    " << r.gamma_deviation << "  (< 1e-8)\n"
            << "beta deviation     " << r.beta_deviation << "  (< 1e-8)\n"
            << "value deviation    " << r.value_deviation << "\n"
            << (r.passed() ? "landscape checks passed\n" : "landscape checks FAILED\n");
  return r.passed() ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Wasserstein barycenters: training, oracle and evaluation"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* c) {
    c->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { o.seed = s; }, "seed override");
  };
  auto add_weight = [&](CLI::App* c) {
    c->add_option("--weight", o.weight, "weight vector a (comma separated)")->delimiter(',');
  };

  auto* train = app.add_subcommand("train", "train a model; writes config echo, checkpoints/, report.jsonl, exports/");
  train->add_option("--config", o.config, "run config (TOML)")->required();
  train->add_option("--out", o.out, "run directory")->required();
  add_seed(train);

  auto* eval = app.add_subcommand("eval", "UVP of both recovery routes against the exact Gaussian barycenter");
  eval->add_option("--config", o.config, "run config (TOML)")->required();
  eval->add_option("--out", o.out, "run directory (reads checkpoints/model.ckpt, writes exports/eval.json)");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  add_weight(eval);
  add_seed(eval);

  auto* exp = app.add_subcommand("export", "write barycenter samples as CSV");
  exp->add_option("--config", o.config, "run config (TOML)")->required();
  exp->add_option("--out", o.out, "run directory")->required();
  exp->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  exp->add_option("--n", o.n, "number of samples (default eval.export_samples)");
  exp->add_option("--sweep", o.sweep, "free-weight models with two marginals: K files for a = (t, 1-t)");
  exp->add_flag("--backward", o.backward, "also write samples mapped back to each marginal");
  add_weight(exp);
  add_seed(exp);

  auto* oracle = app.add_subcommand("oracle", "exact barycenter of Gaussian marginals");
  oracle->add_option("--config", o.config, "moments JSON: {marginals: [{mean, cov}], weights}")->required();
  oracle->add_option("--out", o.out, "output moments JSON (default stdout)");
  add_weight(oracle);

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  add_seed(grad);
  grad->add_option("--seeds", o.seeds, "number of random seeds")->check(CLI::PositiveNumber);
  grad->add_flag("--inject-fault", o.inject_fault, "corrupt the CELU derivative (the suite must then fail)");

  auto* land = app.add_subcommand("landscape", "quadratic landscape checks");
  add_seed(land);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*exp) return cmd_export(o);
    if (*oracle) return cmd_oracle(o);
    if (*grad) return cmd_gradcheck(o);
    if (*land) return cmd_landscape(o);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kUsage;
  } catch (const DatasetError& e) {
    std::cerr << "dataset error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}
