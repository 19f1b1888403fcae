#include "nwb/data.hpp"
#include "nwb/gaussian.hpp"

#include <gtest/gtest.h>

#include <random>

namespace nwb {
namespace {

GaussianMoments gaussian(std::vector<double> mean, DenseMatrix cov) {
  return {Eigen::Map<const Vector>(mean.data(), static_cast<Index>(mean.size())), std::move(cov)};
}

DenseMatrix mat2(double a, double b, double c, double d) {
  DenseMatrix m(2, 2);
  m << a, b, c, d;
  return m;
}

// Closed form for 2x2 SPD matrices: sqrt(A) = (A + s I) / sqrt(tr A + 2 s), s = sqrt(det A).
DenseMatrix sqrt2x2(const DenseMatrix& a) {
  const double s = std::sqrt(a.determinant());
  return (a + s * DenseMatrix::Identity(2, 2)) / std::sqrt(a.trace() + 2 * s);
}

TEST(SymSqrt, Examples) {
  EXPECT_LT((sym_psd_sqrt(DenseMatrix::Identity(3, 3)) - DenseMatrix::Identity(3, 3)).norm(), 1e-15);
  EXPECT_LT((sym_psd_sqrt(mat2(4, 0, 0, 9)) - mat2(2, 0, 0, 3)).norm(), 1e-14);
}

TEST(SymSqrt, ReconstructsRandomSpd) {
  std::mt19937_64 rng(1);
  for (Index d : {1, 2, 5, 16, 32}) {
    const DenseMatrix a = random_spd(d, 50.0, rng);
    const DenseMatrix s = sym_psd_sqrt(a);
    EXPECT_LT((s * s - a).norm() / a.norm(), 1e-9) << "d=" << d;
    EXPECT_LT((s - s.transpose()).norm(), 1e-14);
    EXPECT_LT((sym_psd_sqrt(s * s) - s).norm(), 1e-8);
  }
}

TEST(SymSqrt, MatchesTwoByTwoClosedForm) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const DenseMatrix a = random_spd(2, 20.0, rng);
    EXPECT_LT((sym_psd_sqrt(a) - sqrt2x2(a)).norm(), 1e-12);
  }
}

TEST(SymSqrt, RejectsAsymmetric) { EXPECT_THROW(sym_psd_sqrt(mat2(1, 0.1, 0, 1)), std::invalid_argument); }

TEST(Bw2, Examples) {
  const auto p = gaussian({0, 0}, DenseMatrix::Identity(2, 2));
  EXPECT_NEAR(bw2_squared(p, p), 0.0, 1e-15);
  EXPECT_NEAR(bw2_squared(p, gaussian({2, 0}, DenseMatrix::Identity(2, 2))), 2.0, 1e-14);
  DenseMatrix four(1, 1), one(1, 1);
  four << 4;
  one << 1;
  EXPECT_NEAR(bw2_squared(gaussian({0}, four), gaussian({0}, one)), 0.5, 1e-14);
  EXPECT_THROW(bw2_squared(p, gaussian({0}, one)), ShapeError);
}

TEST(Bw2, Symmetric) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 10; ++t) {
    const auto p = gaussian({0.5, -1, 2}, random_spd(3, 10, rng));
    const auto q = gaussian({1, 0, 0}, random_spd(3, 10, rng));
    EXPECT_NEAR(bw2_squared(p, q), bw2_squared(q, p), 1e-10);
  }
}

TEST(Barycenter, OneDimensional) {
  DenseMatrix v1(1, 1), v9(1, 1);
  v1 << 1;
  v9 << 9;
  const std::vector<GaussianMoments> ms = {gaussian({0}, v1), gaussian({4}, v9)};
  const std::vector<double> a = {0.5, 0.5};
  const auto b = gaussian_barycenter(ms, a);
  EXPECT_NEAR(b.moments.cov(0, 0), 4.0, 1e-10);
  EXPECT_NEAR(b.moments.mean(0), 2.0, 1e-15);
}

TEST(Barycenter, IdenticalMarginals) {
  std::mt19937_64 rng(4);
  const auto g = gaussian({1, 2, 3}, random_spd(3, 5, rng));
  const std::vector<GaussianMoments> ms = {g, g, g};
  const std::vector<double> a = {0.2, 0.3, 0.5};
  const auto b = gaussian_barycenter(ms, a);
  EXPECT_LT((b.moments.cov - g.cov).norm(), 1e-10);
  EXPECT_LT((b.moments.mean - g.mean).norm(), 1e-14);
}

TEST(Barycenter, VertexWeightReturnsMarginal) {
  std::mt19937_64 rng(5);
  const std::vector<GaussianMoments> ms = {gaussian({1, 0}, random_spd(2, 5, rng)),
                                           gaussian({0, 1}, random_spd(2, 5, rng))};
  const std::vector<double> a = {0.0, 1.0};
  const auto b = gaussian_barycenter(ms, a);
  EXPECT_LT((b.moments.cov - ms[1].cov).norm(), 1e-10);
  EXPECT_LT((b.moments.mean - ms[1].mean).norm(), 1e-15);
}

TEST(Barycenter, ThreeCovarianceInstance) {
  const std::vector<GaussianMoments> ms = {gaussian({0, 0}, mat2(0.5, 0, 0, 2)), gaussian({0, 0}, mat2(2, 1, 1, 1)),
                                           gaussian({0, 0}, mat2(2, -1, -1, 1))};
  const std::vector<double> a = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  const auto b = gaussian_barycenter(ms, a);
  const DenseMatrix& s = b.moments.cov;
  const DenseMatrix root = sqrt2x2(s);
  DenseMatrix acc = DenseMatrix::Zero(2, 2);
  for (const auto& m : ms) acc += sqrt2x2(root * m.cov * root) / 3.0;
  EXPECT_LT((s - acc).norm(), 1e-8);
  EXPECT_LT(b.residual, 1e-8);
}

TEST(Barycenter, Errors) {
  const std::vector<GaussianMoments> singular = {gaussian({0, 0}, mat2(1, 0, 0, 0)),
                                                 gaussian({0, 0}, DenseMatrix::Identity(2, 2))};
  const std::vector<double> a = {0.5, 0.5};
  EXPECT_THROW(gaussian_barycenter(singular, a), NumericError);
  const std::vector<double> bad = {0.5, 0.6};
  EXPECT_THROW(gaussian_barycenter(singular, bad), std::invalid_argument);
}

TEST(EmpiricalMoments, Examples) {
  const auto m = empirical_moments(Tensor::from_rows({{0, 0}, {2, 0}}));
  EXPECT_DOUBLE_EQ(m.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(m.mean(1), 0.0);
  EXPECT_LT((m.cov - mat2(2, 0, 0, 0)).norm(), 1e-15);
  const auto dup = empirical_moments(Tensor::from_rows({{0, 0}, {2, 0}, {0, 0}, {2, 0}}));
  EXPECT_EQ(dup.mean, m.mean);
  EXPECT_THROW(empirical_moments(Tensor::from_rows({{1, 1}})), std::invalid_argument);
}

TEST(EmpiricalMoments, StandardNormalSample) {
  const auto m = empirical_moments(sample_standard_normal(100000, 2, 7));
  EXPECT_LT((m.cov - DenseMatrix::Identity(2, 2)).norm(), 0.02);
}

TEST(Uvp, Examples) {
  const auto truth = gaussian({0, 0}, DenseMatrix::Identity(2, 2));
  EXPECT_EQ(uvp(truth, truth).value, 0.0);
  const auto s = uvp(gaussian({0.1, 0}, DenseMatrix::Identity(2, 2)), truth);
  EXPECT_NEAR(s.bw2sq, 0.005, 1e-15);
  EXPECT_NEAR(s.value, 0.5, 1e-12);
  EXPECT_THROW(uvp(truth, gaussian({0, 0}, DenseMatrix::Zero(2, 2))), std::invalid_argument);
}

TEST(Uvp, SampledTruthIsClose) {
  std::mt19937_64 rng(8);
  const auto truth = gaussian({1, -1}, random_spd(2, 5, rng));
  const auto est = empirical_moments(sample(GaussianSpec{truth}, 10000, 9).points);
  EXPECT_LT(uvp(est, truth, 10000).value, 0.5);
}

TEST(MomentsJson, RoundTrip) {
  std::mt19937_64 rng(10);
  const auto g = gaussian({0.1, 1e-17, 3}, random_spd(3, 4, rng));
  const auto back = moments_from_json(nlohmann::json::parse(moments_to_json(g).dump()));
  EXPECT_EQ(back.mean, g.mean);
  EXPECT_EQ(back.cov, g.cov);
  EXPECT_THROW(moments_from_json(nlohmann::json::parse(R"({"mean":[0,0],"cov":[[1,0]]})")), std::invalid_argument);
}

}  // namespace
}  // namespace nwb
