#pragma once

#include "nwb/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nwb {

/// Quadratic restriction of the barycenter problem: h(z) = z + alpha,
/// f_i(x) = 1/2 |x|^2 + beta_i^T x, g_i(y) = 1/2 |y|^2 + gamma_i^T y.
/// Only the marginal means m_i and the weights a enter.
struct QuadraticLandscape {
  std::vector<Vector> means;
  std::vector<double> weights;

  Index dim() const { return means.empty() ? 0 : means.front().size(); }

  void validate() const {
    if (means.empty()) throw std::invalid_argument("landscape: no marginals");
    if (weights.size() != means.size()) throw std::invalid_argument("landscape: weight count differs from mean count");
    for (const auto& m : means)
      if (m.size() != dim()) throw ShapeError("landscape: mean dimensions differ");
  }
};

namespace detail {
inline void check_vec(const QuadraticLandscape& ls, const Vector& v, const char* what) {
  if (v.size() != ls.dim())
    throw ShapeError(std::string(what) + ": dimension " + std::to_string(v.size()) + ", expected " +
                     std::to_string(ls.dim()));
}
}  // namespace detail

/// sum_i a_i [ 1/2 |gamma_i|^2 + beta_i^T (gamma_i + m_i - alpha) ],
/// minimized over alpha, maximized over beta, minimized over gamma.
inline double three_level_objective(const QuadraticLandscape& ls, const Vector& alpha, std::span<const Vector> beta,
                                    std::span<const Vector> gamma) {
  ls.validate();
  detail::check_vec(ls, alpha, "three_level_objective");
  if (beta.size() != ls.means.size() || gamma.size() != ls.means.size())
    throw std::invalid_argument("three_level_objective: need one beta and one gamma per marginal");
  double v = 0.0;
  for (std::size_t i = 0; i < ls.means.size(); ++i) {
    detail::check_vec(ls, beta[i], "three_level_objective");
    detail::check_vec(ls, gamma[i], "three_level_objective");
    v += ls.weights[i] * (0.5 * gamma[i].squaredNorm() + beta[i].dot(gamma[i] + ls.means[i] - alpha));
  }
  return v;
}

/// The problem after eliminating gamma_i = -beta_i:
/// sum_i a_i [ -1/2 |beta_i|^2 + beta_i^T (m_i - alpha) ].
inline double two_level_objective(const QuadraticLandscape& ls, const Vector& alpha, std::span<const Vector> beta) {
  ls.validate();
  detail::check_vec(ls, alpha, "two_level_objective");
  if (beta.size() != ls.means.size()) throw std::invalid_argument("two_level_objective: need one beta per marginal");
  double v = 0.0;
  for (std::size_t i = 0; i < ls.means.size(); ++i) {
    detail::check_vec(ls, beta[i], "two_level_objective");
    v += ls.weights[i] * (-0.5 * beta[i].squaredNorm() + beta[i].dot(ls.means[i] - alpha));
  }
  return v;
}

/// After also eliminating beta_i = m_i - alpha:
///   1/2 |alpha|^2 - alpha^T sum_i a_i m_i + 1/2 sum_i a_i |m_i|^2
/// which equals sum_i a_i 1/2 |m_i - alpha|^2.
inline double reduced_objective(const QuadraticLandscape& ls, const Vector& alpha) {
  ls.validate();
  detail::check_vec(ls, alpha, "reduced_objective");
  Vector mbar = Vector::Zero(ls.dim());
  double spread = 0.0;
  for (std::size_t i = 0; i < ls.means.size(); ++i) {
    mbar += ls.weights[i] * ls.means[i];
    spread += ls.weights[i] * ls.means[i].squaredNorm();
  }
  return 0.5 * alpha.squaredNorm() - alpha.dot(mbar) + 0.5 * spread;
}

inline Vector reduced_gradient(const QuadraticLandscape& ls, const Vector& alpha) {
  ls.validate();
  detail::check_vec(ls, alpha, "reduced_gradient");
  Vector g = alpha;
  for (std::size_t i = 0; i < ls.means.size(); ++i) g -= ls.weights[i] * ls.means[i];
  return g;
}

/// alpha* = sum_i a_i m_i: the generator learns the weighted mean.
inline Vector closed_form_optimum(const QuadraticLandscape& ls) {
  ls.validate();
  Vector a = Vector::Zero(ls.dim());
  for (std::size_t i = 0; i < ls.means.size(); ++i) a += ls.weights[i] * ls.means[i];
  return a;
}

struct DescentResult {
  Vector alpha;
  int iterations = 0;
  double grad_norm = 0.0;
};

inline DescentResult gradient_descent(const QuadraticLandscape& ls, Vector alpha, double step = 0.5,
                                      double tol = 1e-12, int max_iter = 10000) {
  DescentResult r;
  for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
    const Vector g = reduced_gradient(ls, alpha);
    r.grad_norm = g.norm();
    if (r.grad_norm < tol) break;
    alpha -= step * g;
  }
  r.alpha = std::move(alpha);
  return r;
}

namespace detail {

// Stationary point of a smooth scalar function by Newton steps on
// central-difference derivatives.
inline double newton_stationary(const std::function<double(double)>& fn, double x, double h = 1e-3) {
  for (int it = 0; it < 60; ++it) {
    const double fp = fn(x + h), f0 = fn(x), fm = fn(x - h);
    const double d1 = (fp - fm) / (2 * h);
    const double d2 = (fp - 2 * f0 + fm) / (h * h);
    if (d2 == 0.0) break;
    const double step = d1 / d2;
    x -= step;
    if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
  }
  return x;
}

// Optimizes every coordinate of every vector in `vars` in turn, sweeping
// until nothing moves.
inline void coordinate_newton(std::vector<Vector>& vars, const std::function<double()>& fn) {
  for (int sweep = 0; sweep < 20; ++sweep) {
    double moved = 0.0;
    for (auto& v : vars)
      for (Index k = 0; k < v.size(); ++k) {
        const double before = v(k);
        v(k) = newton_stationary(
            [&](double x) {
              v(k) = x;
              return fn();
            },
            before);
        moved = std::max(moved, std::abs(v(k) - before));
      }
    if (moved < 1e-13) break;
  }
}

}  // namespace detail

struct EliminationReport {
  double gamma_deviation = 0.0;  // max |gamma_numeric - (-beta)|
  double beta_deviation = 0.0;   // max |beta_numeric - (m - alpha)|
  double value_deviation = 0.0;  // |three-level at the optimum - reduced|
};

/// Checks both eliminations numerically at a given alpha and beta: the
/// inner minimum over gamma of the three-level objective against
/// gamma_i = -beta_i, then the maximum over beta of the two-level
/// objective against beta_i = m_i - alpha. Marginals with zero weight are
/// skipped (the objective does not depend on their variables).
inline EliminationReport staged_elimination_check(const QuadraticLandscape& ls, const Vector& alpha,
                                                  std::span<const Vector> beta) {
  ls.validate();
  const std::size_t n = ls.means.size();
  EliminationReport rep;

  std::vector<Vector> b(beta.begin(), beta.end());
  std::vector<Vector> gamma(n, Vector::Zero(ls.dim()));
  detail::coordinate_newton(gamma, [&] { return three_level_objective(ls, alpha, b, gamma); });
  for (std::size_t i = 0; i < n; ++i)
    if (ls.weights[i] != 0.0) rep.gamma_deviation = std::max(rep.gamma_deviation, (gamma[i] + b[i]).cwiseAbs().maxCoeff());

  std::vector<Vector> bstar(n, Vector::Zero(ls.dim()));
  detail::coordinate_newton(bstar, [&] { return two_level_objective(ls, alpha, bstar); });
  for (std::size_t i = 0; i < n; ++i)
    if (ls.weights[i] != 0.0)
      rep.beta_deviation = std::max(rep.beta_deviation, (bstar[i] - (ls.means[i] - alpha)).cwiseAbs().maxCoeff());

  std::vector<Vector> exact_b, exact_g;
  for (std::size_t i = 0; i < n; ++i) {
    exact_b.push_back(ls.means[i] - alpha);
    exact_g.push_back(-exact_b.back());
  }
  rep.value_deviation = std::abs(three_level_objective(ls, alpha, exact_b, exact_g) - reduced_objective(ls, alpha));
  return rep;
}

/// Random instance: N means with entries in [-scale, scale] and a uniform
/// simplex weight.
inline QuadraticLandscape random_landscape(Index d, std::size_t n, std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::exponential_distribution<double> e(1.0);
  QuadraticLandscape ls;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Vector m(d);
    for (Index k = 0; k < d; ++k) m(k) = u(rng);
    ls.means.push_back(m);
    ls.weights.push_back(e(rng));
    total += ls.weights.back();
  }
  for (auto& w : ls.weights) w /= total;
  return ls;
}

struct LandscapeSuiteResult {
  double optimum_error = 0.0;  // |closed form - sum a_i m_i|, exact arithmetic expected
  double descent_error = 0.0;  // max |alpha_descent - alpha*|
  double gamma_deviation = 0.0;
  double beta_deviation = 0.0;
  double value_deviation = 0.0;
  int instances = 0;

  bool passed() const {
    return optimum_error == 0.0 && descent_error < 1e-6 && gamma_deviation < 1e-8 && beta_deviation < 1e-8 &&
           value_deviation < 1e-10;
  }
};

/// Runs the landscape checks on `instances` random problems.
inline LandscapeSuiteResult run_landscape_suite(std::uint64_t seed, int instances = 100) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> dim(1, 5);
  std::uniform_int_distribution<int> count(1, 5);
  std::normal_distribution<double> nd;
  LandscapeSuiteResult r;
  for (int t = 0; t < instances; ++t) {
    const auto ls = random_landscape(dim(rng), static_cast<std::size_t>(count(rng)), rng);
    const Index d = ls.dim();
    Vector expect = Vector::Zero(d);
    for (std::size_t i = 0; i < ls.means.size(); ++i) expect += ls.weights[i] * ls.means[i];
    const Vector opt = closed_form_optimum(ls);
    r.optimum_error = std::max(r.optimum_error, (opt - expect).cwiseAbs().maxCoeff());

    Vector start(d);
    for (Index k = 0; k < d; ++k) start(k) = 3.0 * nd(rng);
    r.descent_error = std::max(r.descent_error, (gradient_descent(ls, start).alpha - opt).cwiseAbs().maxCoeff());

    Vector alpha(d);
    for (Index k = 0; k < d; ++k) alpha(k) = nd(rng);
    std::vector<Vector> beta;
    for (std::size_t i = 0; i < ls.means.size(); ++i) {
      Vector b(d);
      for (Index k = 0; k < d; ++k) b(k) = nd(rng);
      beta.push_back(b);
    }
    const auto e = staged_elimination_check(ls, alpha, beta);
    r.gamma_deviation = std::max(r.gamma_deviation, e.gamma_deviation);
    r.beta_deviation = std::max(r.beta_deviation, e.beta_deviation);
    r.value_deviation = std::max(r.value_deviation, e.value_deviation);
    ++r.instances;
  }
  return r;
}

}  // namespace nwb
