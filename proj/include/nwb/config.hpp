#pragma once

#include "nwb/training.hpp"

#define TOML_ENABLE_FORMATTERS 1
#include <tomlplusplus/toml.hpp>

#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace nwb {

// Run configuration file (TOML). Every key is optional unless noted.
//
//   [problem]
//   weights = [0.5, 0.5] | "free"    required
//   latent_dim = 2                   default: ambient dimension
//   lambda = 0.1
//   [[problem.marginal]]             one table per marginal, or:
//   kind = "gaussian"   mean = [..]  cov = [[..], ..]
//   kind = "mixture"    weights = [..]  means = [[..]]  covs = [[[..]]]
//   kind = "line"       p0 = [..]  p1 = [..]
//   kind = "ellipse"    center = [x, y]  axes = [a, b]  angle = 0.0
//   kind = "file"       path = "points.csv"  (relative to the config file)
//   [problem.random_gaussians]       count, dim, max_condition, seed, mean_scale
//
//   [network]   potential_widths, potential_activation ("celu" | "softplus"),
//               celu_alpha, potential_quadratic, generator_widths,
//               generator_activation ("prelu" | "celu" | "softplus"), prelu_slope
//   [training]  mode ("nwb" | "nwbf"), k1, k2, k3, batch_size, lr_f, lr_g,
//               lr_h, lr_decay_factor, lr_decay_period_epochs,
//               cycles_per_epoch, seed, divergence_limit
//   [eval]      uvp_every, uvp_samples, eval_weight, eval_seed, export_samples
//
// A "cycle" counts as 1/cycles_per_epoch of an epoch for the schedule.

class ConfigError : public Error {
 public:
  using Error::Error;
};

struct RandomGaussians {
  int count = 0;
  Index dim = 0;
  double max_condition = 10.0;
  double mean_scale = 0.0;
  std::uint64_t seed = 0;
};

struct EvalConfig {
  Index uvp_samples = 10000;
  int uvp_every = 0;
  std::vector<double> eval_weight;
  std::uint64_t eval_seed = 0x5eed;
  Index export_samples = 10000;
};

struct RunConfig {
  BarycenterProblem problem;
  TrainConfig train;
  EvalConfig eval;
};

namespace detail {

class TableReader {
 public:
  TableReader(const toml::table& t, std::string path) : t_(t), path_(std::move(path)) {}

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return t_.contains(key); }
  const toml::node* node(const std::string& key) {
    used_.insert(key);
    return t_.get(key);
  }

  double number(const std::string& key, double fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    return as_number(*n, field(key));
  }
  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->value_exact<std::int64_t>()) return *v;
    throw ConfigError(field(key) + ": expected an integer");
  }
  std::string string(const std::string& key, const std::string& fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (auto v = n->value_exact<std::string>()) return *v;
    throw ConfigError(field(key) + ": expected a string");
  }
  std::vector<double> numbers(const std::string& key) {
    const toml::node* n = node(key);
    if (!n) throw ConfigError(field(key) + ": missing");
    return as_numbers(*n, field(key));
  }
  std::vector<std::vector<double>> matrix(const std::string& key) {
    const toml::node* n = node(key);
    if (!n || !n->is_array()) throw ConfigError(field(key) + ": expected an array of arrays");
    std::vector<std::vector<double>> out;
    std::size_t i = 0;
    for (const auto& row : *n->as_array()) out.push_back(as_numbers(row, field(key) + "[" + std::to_string(i++) + "]"));
    return out;
  }
  std::vector<Index> widths(const std::string& key, std::vector<Index> fallback) {
    const toml::node* n = node(key);
    if (!n) return fallback;
    if (!n->is_array()) throw ConfigError(field(key) + ": expected an array of integers");
    std::vector<Index> out;
    for (const auto& x : *n->as_array()) {
      auto v = x.value_exact<std::int64_t>();
      if (!v || *v < 1) throw ConfigError(field(key) + ": widths must be positive integers");
      out.push_back(static_cast<Index>(*v));
    }
    return out;
  }

  void finish() const {
    for (const auto& [k, v] : t_)
      if (!used_.count(std::string(k.str()))) throw ConfigError(field(std::string(k.str())) + ": unknown key");
  }

  static double as_number(const toml::node& n, const std::string& f) {
    if (auto v = n.value_exact<double>()) return *v;
    if (auto v = n.value_exact<std::int64_t>()) return static_cast<double>(*v);
    throw ConfigError(f + ": expected a number");
  }
  static std::vector<double> as_numbers(const toml::node& n, const std::string& f) {
    if (!n.is_array()) throw ConfigError(f + ": expected an array of numbers");
    std::vector<double> out;
    std::size_t i = 0;
    for (const auto& x : *n.as_array()) out.push_back(as_number(x, f + "[" + std::to_string(i++) + "]"));
    return out;
  }

 private:
  const toml::table& t_;
  std::string path_;
  std::set<std::string> used_;
};

inline const toml::table& subtable(const toml::table& root, const std::string& key) {
  static const toml::table empty;
  const toml::node* n = root.get(key);
  if (!n) return empty;
  if (!n->is_table()) throw ConfigError(key + ": expected a table");
  return *n->as_table();
}

inline Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())); }

inline DenseMatrix to_matrix(const std::vector<std::vector<double>>& rows, const std::string& f) {
  const auto n = static_cast<Index>(rows.size());
  DenseMatrix m(n, n);
  for (Index i = 0; i < n; ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != n)
      throw ConfigError(f + ": must be square");
    for (Index k = 0; k < n; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  return m;
}

inline GaussianMoments gaussian_from(TableReader& r, const std::string& mean_key, const std::string& cov_key) {
  GaussianMoments g;
  g.mean = to_vector(r.numbers(mean_key));
  g.cov = to_matrix(r.matrix(cov_key), r.field(cov_key));
  if (g.cov.rows() != g.mean.size())
    throw ConfigError(r.field(cov_key) + ": dimension differs from " + r.field(mean_key));
  return g;
}

inline MarginalSpec parse_marginal(const toml::table& t, const std::string& path, const std::filesystem::path& base) {
  TableReader r(t, path);
  const std::string kind = r.string("kind", "");
  MarginalSpec spec;
  if (kind == "gaussian") {
    spec = GaussianSpec{gaussian_from(r, "mean", "cov")};
  } else if (kind == "mixture") {
    MixtureSpec m;
    m.weights = r.numbers("weights");
    const toml::node* means = r.node("means");
    const toml::node* covs = r.node("covs");
    if (!means || !means->is_array() || !covs || !covs->is_array())
      throw ConfigError(path + ": mixture needs 'means' and 'covs' arrays");
    if (means->as_array()->size() != covs->as_array()->size())
      throw ConfigError(path + ": 'means' and 'covs' differ in length");
    for (std::size_t i = 0; i < means->as_array()->size(); ++i) {
      const std::string f = path + ".means[" + std::to_string(i) + "]";
      GaussianMoments g;
      g.mean = to_vector(TableReader::as_numbers(*means->as_array()->get(i), f));
      const toml::node& c = *covs->as_array()->get(i);
      if (!c.is_array()) throw ConfigError(path + ".covs[" + std::to_string(i) + "]: expected a matrix");
      std::vector<std::vector<double>> rows;
      for (const auto& row : *c.as_array()) rows.push_back(TableReader::as_numbers(row, path + ".covs"));
      g.cov = to_matrix(rows, path + ".covs[" + std::to_string(i) + "]");
      m.components.push_back(std::move(g));
    }
    spec = std::move(m);
  } else if (kind == "line") {
    spec = UniformLineSpec{to_vector(r.numbers("p0")), to_vector(r.numbers("p1"))};
  } else if (kind == "ellipse") {
    UniformEllipseSpec e;
    e.center = to_vector(r.numbers("center"));
    const auto axes = r.numbers("axes");
    if (axes.size() != 2) throw ConfigError(r.field("axes") + ": expected [a, b]");
    e.axis_a = axes[0];
    e.axis_b = axes[1];
    e.angle = r.number("angle", 0.0);
    spec = e;
  } else if (kind == "file") {
    const std::string rel = r.string("path", "");
    if (rel.empty()) throw ConfigError(r.field("path") + ": missing");
    std::filesystem::path p(rel);
    if (p.is_relative()) p = base / p;
    try {
      spec = load_file_marginal(p.string());
    } catch (const std::exception& e) {
      throw ConfigError(r.field("path") + ": " + e.what());
    }
  } else {
    throw ConfigError(r.field("kind") + ": expected one of gaussian, mixture, line, ellipse, file (got '" + kind + "')");
  }
  r.finish();
  try {
    validate(spec);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return spec;
}

inline Activation activation_named(const std::string& name, double celu_alpha, double prelu_slope,
                                   const std::string& f) {
  try {
    if (name == "celu") return Activation::celu(celu_alpha);
    if (name == "prelu") return Activation::prelu(prelu_slope);
    if (name == "softplus") return Activation::softplus();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(f + ": " + e.what());
  }
  throw ConfigError(f + ": unknown activation '" + name + "'");
}

}  // namespace detail

/// Parses and fully validates a run configuration. `base` resolves
/// relative dataset paths.
inline RunConfig parse_config(const toml::table& root, const std::filesystem::path& base = ".") {
  detail::TableReader top(root, "");
  for (const char* k : {"problem", "network", "training", "eval"}) top.node(k);
  top.finish();

  RunConfig cfg;
  auto& problem = cfg.problem;

  // problem
  const toml::table& pt = detail::subtable(root, "problem");
  detail::TableReader pr(pt, "problem");
  if (const toml::node* m = pr.node("marginal")) {
    if (!m->is_array_of_tables()) throw ConfigError("problem.marginal: expected [[problem.marginal]] tables");
    std::size_t i = 0;
    for (const auto& t : *m->as_array()) {
      problem.marginals.push_back(
          detail::parse_marginal(*t.as_table(), "problem.marginal[" + std::to_string(i) + "]", base));
      ++i;
    }
  }
  if (pt.contains("random_gaussians")) {
    const toml::node* rn = pr.node("random_gaussians");
    if (!rn->is_table()) throw ConfigError("problem.random_gaussians: expected a table");
    detail::TableReader rr(*rn->as_table(), "problem.random_gaussians");
    RandomGaussians rg;
    rg.count = static_cast<int>(rr.integer("count", 0));
    rg.dim = static_cast<Index>(rr.integer("dim", 0));
    rg.max_condition = rr.number("max_condition", 10.0);
    rg.mean_scale = rr.number("mean_scale", 0.0);
    rg.seed = static_cast<std::uint64_t>(rr.integer("seed", 0));
    rr.finish();
    if (rg.count < 1 || rg.dim < 1) throw ConfigError("problem.random_gaussians: count and dim must be >= 1");
    if (!(rg.max_condition > 1.0)) throw ConfigError("problem.random_gaussians.max_condition: must be > 1");
    std::mt19937_64 rng(rg.seed);
    std::normal_distribution<double> nd;
    for (int i = 0; i < rg.count; ++i) {
      GaussianMoments g;
      g.mean = Vector::Zero(rg.dim);
      if (rg.mean_scale > 0.0)
        for (Index k = 0; k < rg.dim; ++k) g.mean(k) = rg.mean_scale * nd(rng);
      g.cov = random_spd(rg.dim, rg.max_condition, rng);
      problem.marginals.push_back(GaussianSpec{std::move(g)});
    }
  }
  if (problem.marginals.empty()) throw ConfigError("problem: no marginals (add [[problem.marginal]] tables)");
  const Index d = problem.dim();
  for (std::size_t i = 0; i < problem.marginals.size(); ++i)
    if (dimension(problem.marginals[i]) != d)
      throw ConfigError("problem.marginal[" + std::to_string(i) + "]: dimension " +
                        std::to_string(dimension(problem.marginals[i])) + " differs from " + std::to_string(d));
  {
    const toml::node* w = pr.node("weights");
    if (!w) throw ConfigError("problem.weights: missing (a list or \"free\")");
    if (auto s = w->value_exact<std::string>()) {
      if (*s != "free") throw ConfigError("problem.weights: expected a list of numbers or \"free\"");
      problem.free_weights = true;
    } else {
      problem.weights = detail::TableReader::as_numbers(*w, "problem.weights");
      if (problem.weights.size() != problem.marginals.size())
        throw ConfigError("problem.weights: " + std::to_string(problem.weights.size()) + " weights for " +
                          std::to_string(problem.marginals.size()) + " marginals");
      try {
        check_simplex(Tensor::row(problem.weights));
      } catch (const std::exception& e) {
        throw ConfigError(std::string("problem.weights: ") + e.what());
      }
    }
  }
  problem.latent_dim = static_cast<Index>(pr.integer("latent_dim", d));
  problem.lambda = pr.number("lambda", 0.1);
  pr.finish();
  if (problem.latent_dim < 1) throw ConfigError("problem.latent_dim: must be >= 1");
  if (problem.lambda < 0.0) throw ConfigError("problem.lambda: must be >= 0");

  // network
  TrainConfig& tc = cfg.train;
  tc = default_train_config(d);
  detail::TableReader nr(detail::subtable(root, "network"), "network");
  const double celu_alpha = nr.number("celu_alpha", 1.0);
  const double prelu_slope = nr.number("prelu_slope", 0.25);
  tc.potential.widths = nr.widths("potential_widths", tc.potential.widths);
  tc.potential.activation = detail::activation_named(nr.string("potential_activation", "celu"), celu_alpha,
                                                     prelu_slope, "network.potential_activation");
  if (!tc.potential.activation.convex_nondecreasing())
    throw ConfigError("network.potential_activation: must be convex and non-decreasing (celu or softplus)");
  tc.potential.quadratic = nr.number("potential_quadratic", 0.0);
  if (tc.potential.quadratic < 0.0) throw ConfigError("network.potential_quadratic: must be >= 0");
  tc.generator.widths = nr.widths("generator_widths", tc.generator.widths);
  tc.generator.activation = detail::activation_named(nr.string("generator_activation", "prelu"), celu_alpha,
                                                     prelu_slope, "network.generator_activation");
  nr.finish();

  // training
  detail::TableReader tr(detail::subtable(root, "training"), "training");
  const std::string mode = tr.string("mode", problem.free_weights ? "nwbf" : "nwb");
  if (mode == "nwb")
    tc.mode = Mode::Nwb;
  else if (mode == "nwbf")
    tc.mode = Mode::NwbF;
  else
    throw ConfigError("training.mode: expected \"nwb\" or \"nwbf\"");
  if ((tc.mode == Mode::NwbF) != problem.free_weights)
    throw ConfigError(tc.mode == Mode::NwbF ? "training.mode: nwbf needs problem.weights = \"free\""
                                            : "training.mode: nwb needs a weight list in problem.weights");
  auto positive_int = [&](const char* key, int fallback) {
    const auto v = tr.integer(key, fallback);
    if (v < 1 || v > std::numeric_limits<int>::max()) throw ConfigError(tr.field(key) + ": must be >= 1");
    return static_cast<int>(v);
  };
  auto positive = [&](const char* key, double fallback) {
    const double v = tr.number(key, fallback);
    if (!(v > 0.0)) throw ConfigError(tr.field(key) + ": must be > 0");
    return v;
  };
  tc.k1 = positive_int("k1", tc.k1);
  tc.k2 = positive_int("k2", tc.k2);
  tc.k3 = positive_int("k3", tc.k3);
  tc.batch_size = positive_int("batch_size", static_cast<int>(tc.batch_size));
  tc.lr_f = positive("lr_f", tc.lr_f);
  tc.lr_g = positive("lr_g", tc.lr_g);
  tc.lr_h = positive("lr_h", tc.lr_h);
  tc.lr_decay_factor = positive("lr_decay_factor", tc.lr_decay_factor);
  tc.lr_decay_period_epochs = tr.number("lr_decay_period_epochs", tc.lr_decay_period_epochs);
  tc.cycles_per_epoch = positive_int("cycles_per_epoch", tc.cycles_per_epoch);
  tc.seed = static_cast<std::uint64_t>(tr.integer("seed", 0));
  tc.divergence_limit = positive("divergence_limit", tc.divergence_limit);
  tr.finish();

  // eval
  detail::TableReader er(detail::subtable(root, "eval"), "eval");
  EvalConfig& ev = cfg.eval;
  ev.uvp_every = static_cast<int>(er.integer("uvp_every", 0));
  if (ev.uvp_every < 0) throw ConfigError("eval.uvp_every: must be >= 0");
  ev.uvp_samples = static_cast<Index>(er.integer("uvp_samples", ev.uvp_samples));
  if (ev.uvp_samples < 2) throw ConfigError("eval.uvp_samples: must be >= 2");
  if (er.has("eval_weight")) {
    ev.eval_weight = er.numbers("eval_weight");
    if (ev.eval_weight.size() != problem.marginals.size())
      throw ConfigError("eval.eval_weight: expected " + std::to_string(problem.marginals.size()) + " entries");
    try {
      check_simplex(Tensor::row(ev.eval_weight));
    } catch (const std::exception& e) {
      throw ConfigError(std::string("eval.eval_weight: ") + e.what());
    }
  }
  ev.eval_seed = static_cast<std::uint64_t>(er.integer("eval_seed", static_cast<std::int64_t>(ev.eval_seed)));
  ev.export_samples = static_cast<Index>(er.integer("export_samples", ev.export_samples));
  if (ev.export_samples < 1) throw ConfigError("eval.export_samples: must be >= 1");
  er.finish();
  tc.uvp_every = ev.uvp_every;
  tc.uvp_samples = ev.uvp_samples;
  tc.eval_weight = ev.eval_weight;

  try {
    problem.validate();
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline RunConfig parse_config_string(const std::string& text, const std::filesystem::path& base = ".") {
  try {
    return parse_config(toml::parse(text), base);
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << "config parse error at line " << e.source().begin.line << ": " << e.description();
    throw ConfigError(os.str());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_string(ss.str(), std::filesystem::path(path).parent_path());
}

namespace detail {

inline toml::array to_toml(const Vector& v) {
  toml::array a;
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}
inline toml::array to_toml(const std::vector<double>& v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}
inline toml::array to_toml(const DenseMatrix& m) {
  toml::array a;
  for (Index i = 0; i < m.rows(); ++i) a.push_back(to_toml(Vector(m.row(i).transpose())));
  return a;
}
inline toml::array widths_toml(const std::vector<Index>& w) {
  toml::array a;
  for (Index x : w) a.push_back(static_cast<std::int64_t>(x));
  return a;
}

inline toml::table marginal_toml(const MarginalSpec& spec) {
  struct {
    toml::table operator()(const GaussianSpec& s) const {
      return toml::table{{"kind", "gaussian"}, {"mean", to_toml(s.moments.mean)}, {"cov", to_toml(s.moments.cov)}};
    }
    toml::table operator()(const MixtureSpec& s) const {
      toml::array means, covs;
      for (const auto& c : s.components) {
        means.push_back(to_toml(c.mean));
        covs.push_back(to_toml(c.cov));
      }
      return toml::table{{"kind", "mixture"}, {"weights", to_toml(s.weights)}, {"means", means}, {"covs", covs}};
    }
    toml::table operator()(const UniformLineSpec& s) const {
      return toml::table{{"kind", "line"}, {"p0", to_toml(s.p0)}, {"p1", to_toml(s.p1)}};
    }
    toml::table operator()(const UniformEllipseSpec& s) const {
      return toml::table{{"kind", "ellipse"},
                         {"center", to_toml(s.center)},
                         {"axes", to_toml(std::vector<double>{s.axis_a, s.axis_b})},
                         {"angle", s.angle}};
    }
    toml::table operator()(const FileBackedSpec& s) const {
      return toml::table{{"kind", "file"}, {"path", std::filesystem::absolute(s.path).string()}};
    }
  } v;
  return std::visit(v, spec);
}

}  // namespace detail

/// The effective configuration, defaults filled in and random marginals
/// written out explicitly. Parsing it yields the same run.
inline std::string echo_config(const RunConfig& cfg) {
  const auto& p = cfg.problem;
  const auto& t = cfg.train;
  toml::array marginals;
  for (const auto& m : p.marginals) marginals.push_back(detail::marginal_toml(m));
  toml::table problem{{"latent_dim", static_cast<std::int64_t>(p.latent_dim)}, {"lambda", p.lambda}};
  if (p.free_weights)
    problem.insert("weights", "free");
  else
    problem.insert("weights", detail::to_toml(p.weights));
  problem.insert("marginal", marginals);

  double celu_alpha = 1.0, prelu_slope = 0.25;
  for (const auto* a : {&t.potential.activation, &t.generator.activation}) {
    if (a->kind == Activation::Kind::Celu) celu_alpha = a->param;
    if (a->kind == Activation::Kind::PRelu) prelu_slope = a->param;
  }
  toml::table network{{"potential_widths", detail::widths_toml(t.potential.widths)},
                      {"potential_activation", t.potential.activation.name()},
                      {"potential_quadratic", t.potential.quadratic},
                      {"generator_widths", detail::widths_toml(t.generator.widths)},
                      {"generator_activation", t.generator.activation.name()},
                      {"celu_alpha", celu_alpha},
                      {"prelu_slope", prelu_slope}};
  toml::table training{{"mode", t.mode == Mode::NwbF ? "nwbf" : "nwb"},
                       {"k1", t.k1},
                       {"k2", t.k2},
                       {"k3", t.k3},
                       {"batch_size", static_cast<std::int64_t>(t.batch_size)},
                       {"lr_f", t.lr_f},
                       {"lr_g", t.lr_g},
                       {"lr_h", t.lr_h},
                       {"lr_decay_factor", t.lr_decay_factor},
                       {"lr_decay_period_epochs", t.lr_decay_period_epochs},
                       {"cycles_per_epoch", t.cycles_per_epoch},
                       {"seed", static_cast<std::int64_t>(t.seed)},
                       {"divergence_limit", t.divergence_limit}};
  toml::table eval{{"uvp_every", cfg.eval.uvp_every},
                   {"uvp_samples", static_cast<std::int64_t>(cfg.eval.uvp_samples)},
                   {"eval_seed", static_cast<std::int64_t>(cfg.eval.eval_seed)},
                   {"export_samples", static_cast<std::int64_t>(cfg.eval.export_samples)}};
  if (!cfg.eval.eval_weight.empty()) eval.insert("eval_weight", detail::to_toml(cfg.eval.eval_weight));
  toml::table root{{"problem", problem}, {"network", network}, {"training", training}, {"eval", eval}};
  std::ostringstream os;
  os << root << "\n";
  return os.str();
}

}  // namespace nwb
