#pragma once

#include "nwb/tensor.hpp"

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include <cmath>
#include <iostream>
#include <span>
#include <string>
#include <vector>

namespace nwb {

using DenseMatrix = Eigen::MatrixXd;

/// Mean and covariance of a distribution on R^d.
struct GaussianMoments {
  Vector mean;
  DenseMatrix cov;

  Index dim() const { return mean.size(); }
};

struct UvpScore {
  double value = 0.0;  // percent
  std::size_t samples = 0;
  double bw2sq = 0.0;
};

struct GaussianBarycenter {
  GaussianMoments moments;
  int iterations = 0;
  double residual = 0.0;
};

namespace detail {

inline void check_symmetric(const DenseMatrix& a, const char* what) {
  if (a.rows() != a.cols()) throw ShapeError(std::string(what) + ": matrix is not square");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw std::invalid_argument(std::string(what) + ": matrix is not symmetric");
}

template <class F>
DenseMatrix spectral_map(const DenseMatrix& a, F&& fn, const char* what) {
  check_symmetric(a, what);
  const DenseMatrix sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(sym);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigendecomposition failed");
  Vector ev = es.eigenvalues();
  if (ev.size() > 0 && ev.minCoeff() < -1e-8)
    std::clog << "warning: " << what << ": clamping negative eigenvalue " << ev.minCoeff() << " to 0\n";
  for (Index i = 0; i < ev.size(); ++i) ev(i) = fn(std::max(ev(i), 0.0));
  const DenseMatrix& q = es.eigenvectors();
  DenseMatrix out = q * ev.asDiagonal() * q.transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace detail

/// Symmetric PSD square root by eigendecomposition; negative eigenvalues
/// are clamped to zero.
inline DenseMatrix sym_psd_sqrt(const DenseMatrix& a) {
  return detail::spectral_map(a, [](double x) { return std::sqrt(x); }, "sym_psd_sqrt");
}

inline DenseMatrix sym_pd_inv_sqrt(const DenseMatrix& a) {
  return detail::spectral_map(
      a,
      [](double x) {
        if (x <= 0.0) throw NumericError("sym_pd_inv_sqrt: matrix is singular");
        return 1.0 / std::sqrt(x);
      },
      "sym_pd_inv_sqrt");
}

/// Squared Bures-Wasserstein distance with the 1/2 convention:
/// 1/2 |m_p - m_q|^2 + 1/2 tr S_p + 1/2 tr S_q - tr (S_p^1/2 S_q S_p^1/2)^1/2.
inline double bw2_squared(const GaussianMoments& p, const GaussianMoments& q) {
  if (p.dim() != q.dim() || p.cov.rows() != q.cov.rows())
    throw ShapeError("bw2_squared: dimensions differ (" + std::to_string(p.dim()) + " vs " +
                     std::to_string(q.dim()) + ")");
  const DenseMatrix root_p = sym_psd_sqrt(p.cov);
  const DenseMatrix cross = sym_psd_sqrt(root_p * q.cov * root_p);
  const double value = 0.5 * (p.mean - q.mean).squaredNorm() + 0.5 * p.cov.trace() + 0.5 * q.cov.trace() -
                       cross.trace();
  return std::max(value, 0.0);
}

/// || S - sum_i a_i (S^1/2 S_i S^1/2)^1/2 ||_F
inline double barycenter_residual(const DenseMatrix& cov, std::span<const GaussianMoments> marginals,
                                  std::span<const double> weights) {
  const DenseMatrix root = sym_psd_sqrt(cov);
  DenseMatrix acc = DenseMatrix::Zero(cov.rows(), cov.cols());
  for (std::size_t i = 0; i < marginals.size(); ++i)
    if (weights[i] != 0.0) acc += weights[i] * sym_psd_sqrt(root * marginals[i].cov * root);
  return (cov - acc).norm();
}

/// Exact W2 barycenter of Gaussians. Mean is the weighted mean; the
/// covariance is found by the fixed-point iteration
///   S_{k+1} = S_k^-1/2 (sum_i a_i (S_k^1/2 S_i S_k^1/2)^1/2)^2 S_k^-1/2
/// from S_0 = sum_i a_i S_i, stopping at relative change < 1e-12.
inline GaussianBarycenter gaussian_barycenter(std::span<const GaussianMoments> marginals,
                                              std::span<const double> weights, int max_iter = 1000) {
  if (marginals.empty()) throw std::invalid_argument("gaussian_barycenter: no marginals");
  if (weights.size() != marginals.size())
    throw std::invalid_argument("gaussian_barycenter: weight count differs from marginal count");
  double total = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw std::invalid_argument("gaussian_barycenter: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("gaussian_barycenter: weights do not sum to 1");

  const Index d = marginals.front().dim();
  GaussianBarycenter out;
  out.moments.mean = Vector::Zero(d);
  DenseMatrix cov = DenseMatrix::Zero(d, d);
  for (std::size_t i = 0; i < marginals.size(); ++i) {
    const auto& m = marginals[i];
    if (m.dim() != d || m.cov.rows() != d || m.cov.cols() != d)
      throw ShapeError("gaussian_barycenter: marginal " + std::to_string(i) + " has mismatched dimension");
    detail::check_symmetric(m.cov, "gaussian_barycenter");
    Eigen::SelfAdjointEigenSolver<DenseMatrix> es(m.cov, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() <= 1e-12)
      throw NumericError("gaussian_barycenter: covariance of marginal " + std::to_string(i) + " is singular");
    out.moments.mean += weights[i] * m.mean;
    cov += weights[i] * m.cov;
  }

  for (int it = 1; it <= max_iter; ++it) {
    const DenseMatrix root = sym_psd_sqrt(cov);
    const DenseMatrix inv_root = sym_pd_inv_sqrt(cov);
    DenseMatrix t = DenseMatrix::Zero(d, d);
    for (std::size_t i = 0; i < marginals.size(); ++i)
      if (weights[i] != 0.0) t += weights[i] * sym_psd_sqrt(root * marginals[i].cov * root);
    DenseMatrix next = inv_root * t * t * inv_root;
    next = 0.5 * (next + next.transpose());
    const double change = (next - cov).norm() / cov.norm();
    cov = std::move(next);
    out.iterations = it;
    if (change < 1e-12) {
      out.moments.cov = cov;
      out.residual = barycenter_residual(cov, marginals, weights);
      return out;
    }
  }
  throw NumericError("gaussian_barycenter: no convergence in " + std::to_string(max_iter) +
                     " iterations, residual " + std::to_string(barycenter_residual(cov, marginals, weights)));
}

/// Sample mean and unbiased (n-1) covariance of the rows of `points`.
inline GaussianMoments empirical_moments(const Tensor& points) {
  const Index n = points.rows();
  if (n < 2) throw std::invalid_argument("empirical_moments: need at least 2 points");
  GaussianMoments m;
  m.mean = points.mat().colwise().mean().transpose();
  const DenseMatrix centered = points.mat().rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / static_cast<double>(n - 1);
  m.cov = 0.5 * (m.cov + m.cov.transpose());
  return m;
}

/// BW2^2-UVP = 100 * BW2^2(estimate, truth) / (1/2 tr S_truth), in percent.
inline UvpScore uvp(const GaussianMoments& estimate, const GaussianMoments& truth, std::size_t samples = 0) {
  const double var = truth.cov.trace();
  if (!(var > 0.0)) throw std::invalid_argument("uvp: reference distribution has zero variance");
  UvpScore s;
  s.bw2sq = bw2_squared(estimate, truth);
  s.value = 100.0 * s.bw2sq / (0.5 * var);
  s.samples = samples;
  return s;
}

// JSON form: {"mean": [...], "cov": [[...], ...]}

inline nlohmann::json moments_to_json(const GaussianMoments& m) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.cov.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cov.cols()));
    for (Index k = 0; k < m.cov.cols(); ++k) r[static_cast<std::size_t>(k)] = m.cov(i, k);
    rows.push_back(r);
  }
  j["cov"] = rows;
  return j;
}

inline GaussianMoments moments_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("mean") || !j.contains("cov"))
    throw std::invalid_argument("moments JSON needs 'mean' and 'cov'");
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto cov = j.at("cov").get<std::vector<std::vector<double>>>();
  const auto d = static_cast<Index>(mean.size());
  if (d == 0 || static_cast<Index>(cov.size()) != d)
    throw std::invalid_argument("moments JSON: cov must be " + std::to_string(d) + "x" + std::to_string(d));
  GaussianMoments m;
  m.mean = Eigen::Map<const Vector>(mean.data(), d);
  m.cov.resize(d, d);
  for (Index i = 0; i < d; ++i) {
    if (static_cast<Index>(cov[static_cast<std::size_t>(i)].size()) != d)
      throw std::invalid_argument("moments JSON: ragged covariance row");
    for (Index k = 0; k < d; ++k) m.cov(i, k) = cov[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  detail::check_symmetric(m.cov, "moments JSON");
  return m;
}

}  // namespace nwb
