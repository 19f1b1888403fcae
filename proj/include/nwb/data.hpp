#pragma once

#include "nwb/gaussian.hpp"
#include "nwb/tensor.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace nwb {

/// A point cloud, one point per row, with provenance.
struct SampleBatch {
  Tensor points;
  int marginal_id = -1;
  std::uint64_t seed = 0;

  Index size() const { return points.rows(); }
  Index dim() const { return points.cols(); }
};

// ---------------------------------------------------------------------------
// Seeds

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Independent stream seed for (base seed, stream id, counter). Streams
/// are named by the caller, e.g. one per marginal, counters per cycle.
inline std::uint64_t stream_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t counter) {
  return mix64(mix64(mix64(base) ^ stream) + counter);
}

namespace streams {
inline constexpr std::uint64_t kLatent = 0x1000;
inline constexpr std::uint64_t kSimplex = 0x2000;
inline constexpr std::uint64_t kInit = 0x3000;
inline constexpr std::uint64_t kEval = 0x4000;
inline constexpr std::uint64_t kEvalLatent = 0x5000;
inline std::uint64_t marginal(int i) { return static_cast<std::uint64_t>(i); }
}  // namespace streams

// ---------------------------------------------------------------------------
// Marginal families

struct GaussianSpec {
  GaussianMoments moments;
};
struct MixtureSpec {
  std::vector<double> weights;
  std::vector<GaussianMoments> components;
};
struct UniformLineSpec {
  Vector p0, p1;
};
struct UniformEllipseSpec {
  Vector center;  // 2-d
  double axis_a = 1.0, axis_b = 1.0;
  double angle = 0.0;  // radians
};
struct FileBackedSpec {
  std::string path;
  std::shared_ptr<const Tensor> points;  // loaded once, sampled with replacement
};

using MarginalSpec = std::variant<GaussianSpec, MixtureSpec, UniformLineSpec, UniformEllipseSpec, FileBackedSpec>;

inline Index dimension(const MarginalSpec& spec) {
  struct {
    Index operator()(const GaussianSpec& s) const { return s.moments.dim(); }
    Index operator()(const MixtureSpec& s) const { return s.components.empty() ? 0 : s.components[0].dim(); }
    Index operator()(const UniformLineSpec& s) const { return s.p0.size(); }
    Index operator()(const UniformEllipseSpec&) const { return 2; }
    Index operator()(const FileBackedSpec& s) const { return s.points ? s.points->cols() : 0; }
  } v;
  return std::visit(v, spec);
}

inline const char* kind_name(const MarginalSpec& spec) {
  static constexpr const char* names[] = {"gaussian", "mixture", "line", "ellipse", "file"};
  return names[spec.index()];
}

namespace detail {
inline void validate_gaussian(const GaussianMoments& m, const char* what) {
  if (m.dim() < 1 || m.cov.rows() != m.dim() || m.cov.cols() != m.dim())
    throw std::invalid_argument(std::string(what) + ": mean/covariance shapes disagree");
  check_symmetric(m.cov, what);
}
}  // namespace detail

inline void validate(const MarginalSpec& spec) {
  struct {
    void operator()(const GaussianSpec& s) const { detail::validate_gaussian(s.moments, "gaussian marginal"); }
    void operator()(const MixtureSpec& s) const {
      if (s.components.empty() || s.components.size() != s.weights.size())
        throw std::invalid_argument("mixture: need one weight per component");
      double total = 0.0;
      for (double w : s.weights) {
        if (w < 0.0) throw std::invalid_argument("mixture: negative weight");
        total += w;
      }
      if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("mixture: weights do not sum to 1");
      for (const auto& c : s.components) {
        detail::validate_gaussian(c, "mixture component");
        if (c.dim() != s.components[0].dim()) throw std::invalid_argument("mixture: component dimensions differ");
      }
    }
    void operator()(const UniformLineSpec& s) const {
      if (s.p0.size() < 1 || s.p0.size() != s.p1.size()) throw std::invalid_argument("line: endpoint dimensions");
      if ((s.p0 - s.p1).norm() == 0.0) throw std::invalid_argument("line: endpoints coincide");
    }
    void operator()(const UniformEllipseSpec& s) const {
      if (s.center.size() != 2) throw std::invalid_argument("ellipse: center must be 2-d");
      if (!(s.axis_a > 0.0) || !(s.axis_b > 0.0)) throw std::invalid_argument("ellipse: axes must be > 0");
    }
    void operator()(const FileBackedSpec& s) const {
      if (!s.points || s.points->rows() < 1) throw std::invalid_argument("file marginal '" + s.path + "' is empty");
    }
  } v;
  std::visit(v, spec);
}

/// Factor L with L L^T = cov: Cholesky, or a clamped eigendecomposition
/// when cov is not numerically positive definite.
inline DenseMatrix covariance_factor(const DenseMatrix& cov) {
  Eigen::LLT<DenseMatrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(0.5 * (cov + cov.transpose()));
  Vector ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

namespace detail {
inline void fill_gaussian(Matrix& out, Index row, const Vector& mean, const DenseMatrix& factor,
                          std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector z(mean.size());
  for (Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
  out.row(row) = (mean + factor * z).transpose();
}
}  // namespace detail

/// n i.i.d. draws from spec, deterministic per seed.
inline SampleBatch sample(const MarginalSpec& spec, Index n, std::uint64_t seed, int marginal_id = -1) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  validate(spec);
  const Index d = dimension(spec);
  std::mt19937_64 rng(seed);
  Matrix out(n, d);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (const auto* g = std::get_if<GaussianSpec>(&spec)) {
    const DenseMatrix factor = covariance_factor(g->moments.cov);
    for (Index j = 0; j < n; ++j) detail::fill_gaussian(out, j, g->moments.mean, factor, rng);
  } else if (const auto* mix = std::get_if<MixtureSpec>(&spec)) {
    std::vector<DenseMatrix> factors;
    for (const auto& c : mix->components) factors.push_back(covariance_factor(c.cov));
    std::discrete_distribution<std::size_t> pick(mix->weights.begin(), mix->weights.end());
    for (Index j = 0; j < n; ++j) {
      const std::size_t k = pick(rng);
      detail::fill_gaussian(out, j, mix->components[k].mean, factors[k], rng);
    }
  } else if (const auto* line = std::get_if<UniformLineSpec>(&spec)) {
    for (Index j = 0; j < n; ++j) {
      const double t = unit(rng);
      out.row(j) = ((1.0 - t) * line->p0 + t * line->p1).transpose();
    }
  } else if (const auto* el = std::get_if<UniformEllipseSpec>(&spec)) {
    const double c = std::cos(el->angle), s = std::sin(el->angle);
    for (Index j = 0; j < n; ++j) {
      const double th = 2.0 * std::numbers::pi * unit(rng);
      const double x = el->axis_a * std::cos(th), y = el->axis_b * std::sin(th);
      out(j, 0) = el->center(0) + c * x - s * y;
      out(j, 1) = el->center(1) + s * x + c * y;
    }
  } else {
    const auto& file = std::get<FileBackedSpec>(spec);
    std::uniform_int_distribution<Index> pick(0, file.points->rows() - 1);
    for (Index j = 0; j < n; ++j) out.row(j) = file.points->mat().row(pick(rng));
  }
  return {Tensor(std::move(out)), marginal_id, seed};
}

/// n draws from N(0, I_dim).
inline Tensor sample_standard_normal(Index n, Index dim, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_standard_normal: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Tensor t(n, dim);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

/// Uniform draw from the probability simplex (flat Dirichlet), via
/// normalized standard exponentials. Returned as a 1 x N row.
inline Tensor sample_simplex(Index n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_simplex: N must be >= 1");
  if (n == 1) return Tensor::scalar(1.0);
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  Tensor a(1, n);
  double total = 0.0;
  for (double& v : a.data()) total += (v = expo(rng));
  a.mat() /= total;
  return a;
}

/// Random symmetric positive definite matrix with eigenvalues uniform in
/// [1, max_condition) and a Haar-random eigenbasis.
inline DenseMatrix random_spd(Index d, double max_condition, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  DenseMatrix g(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index k = 0; k < d; ++k) g(i, k) = normal(rng);
  Eigen::HouseholderQR<DenseMatrix> qr(g);
  DenseMatrix q = qr.householderQ();
  const DenseMatrix r = qr.matrixQR();
  for (Index k = 0; k < d; ++k)
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  std::uniform_real_distribution<double> eig(1.0, max_condition);
  Vector ev(d);
  for (Index k = 0; k < d; ++k) ev(k) = eig(rng);
  DenseMatrix out = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (out + out.transpose());
}

// ---------------------------------------------------------------------------
// CSV point files: header "x0,x1,...", one point per row, 17 significant digits.

class DatasetError : public Error {
 public:
  using Error::Error;
};

inline void write_csv(const std::string& path, const Tensor& points) {
  std::ofstream os(path);
  if (!os) throw DatasetError("cannot open '" + path + "' for writing");
  for (Index k = 0; k < points.cols(); ++k) os << (k ? "," : "") << "x" << k;
  os << "\n";
  char buf[32];
  for (Index j = 0; j < points.rows(); ++j) {
    for (Index k = 0; k < points.cols(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", points(j, k));
      os << (k ? "," : "") << buf;
    }
    os << "\n";
  }
  if (!os) throw DatasetError("write to '" + path + "' failed");
}

inline Tensor read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DatasetError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line.empty()) throw DatasetError(path + ": empty file");
  Index d = 0;
  {
    std::stringstream header(line);
    std::string field;
    while (std::getline(header, field, ','))
      if (field != "x" + std::to_string(d++)) throw DatasetError(path + ":1: malformed header '" + line + "'");
  }
  std::vector<double> values;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    Index count = 0;
    while (std::getline(ss, field, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        throw DatasetError(path + ":" + std::to_string(lineno) + ": cannot parse '" + field + "'");
      }
      if (used != field.size() || !std::isfinite(v))
        throw DatasetError(path + ":" + std::to_string(lineno) + ": bad value '" + field + "'");
      values.push_back(v);
      ++count;
    }
    if (count != d)
      throw DatasetError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(d) + " values, got " +
                         std::to_string(count));
  }
  const Index n = static_cast<Index>(values.size()) / d;
  if (n == 0) throw DatasetError(path + ": no data rows");
  Matrix m(n, d);
  std::copy(values.begin(), values.end(), m.data());
  return Tensor(std::move(m));
}

inline void write_csv(const std::string& path, const SampleBatch& batch) { write_csv(path, batch.points); }

inline FileBackedSpec load_file_marginal(const std::string& path) {
  return {path, std::make_shared<const Tensor>(read_csv(path))};
}

}  // namespace nwb
