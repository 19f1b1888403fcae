#include "nwb/objectives.hpp"
#include "support/finite_diff.hpp"

#include <gtest/gtest.h>

namespace nwb {
namespace {

// h == 0: one linear layer with zero weights and bias.
GeneratorParams zero_generator(Index latent, Index out) {
  std::mt19937_64 rng(0);
  GeneratorParams h = make_generator(latent, out, {}, Activation::prelu(), rng);
  for (auto& b : h.blocks) b.value.mat().setZero();
  return h;
}

FicnnParams zero_potential(Index d) { return make_quadratic_ficnn(Tensor(d, 1, 0.0), 0.0); }
FicnnParams half_norm(Index d) { return make_quadratic_ficnn(Tensor(d, 1, 0.0), 1.0); }

NwbModel random_model(Index d, std::size_t n, std::mt19937_64& rng) {
  NwbModel m;
  for (std::size_t i = 0; i < n; ++i) {
    m.f.push_back(make_ficnn(d, {5, 4}, Activation::celu(), rng));
    m.g.push_back(make_ficnn(d, {5, 4}, Activation::celu(), rng));
  }
  m.h = make_generator(d, d, {6}, Activation::prelu(), rng);
  return m;
}

Batches random_batches(Index d, std::size_t n, Index m, std::mt19937_64& rng) {
  Batches b;
  for (std::size_t i = 0; i < n; ++i) b.y.push_back(test::random_tensor(m, d, rng));
  b.z = test::random_tensor(m, d, rng);
  return b;
}

TEST(JTerm, ClosedFormExample) {
  // g = 1/2|y|^2, f(x) = x_1, h == 0, Y = (2, 0): 2 - 4 - 0.
  const FicnnParams f = make_quadratic_ficnn(Tensor::column({1, 0}), 0.0);
  const double j = j_term(f, half_norm(2), zero_generator(2, 2), Tensor::row({2, 0}), Tensor::row({0.3, -1}));
  EXPECT_DOUBLE_EQ(j, -2.0);
}

TEST(JTerm, ZeroTransportPotential) {
  std::mt19937_64 rng(1);
  const FicnnParams g = make_ficnn(2, {6, 6}, Activation::celu(), rng);
  const Tensor y = test::random_tensor(4, 2, rng);
  double expect = 0.0;
  for (Index r = 0; r < y.rows(); ++r) {
    const std::vector<double> row = {y(r, 0), y(r, 1)};
    const auto grad = ficnn_input_grad(g, row);
    expect -= (row[0] * grad[0] + row[1] * grad[1]) / 4.0;
  }
  const double j = j_term(zero_potential(2), g, zero_generator(2, 2), y, test::random_tensor(4, 2, rng));
  EXPECT_NEAR(j, expect, 1e-12);
  EXPECT_THROW(j_term(zero_potential(2), g, zero_generator(2, 2), Tensor(0, 2), Tensor(0, 2)), std::invalid_argument);
}

TEST(JTerm, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  NwbModel m = random_model(2, 1, rng);
  const Tensor y = test::random_tensor(3, 2, rng), z = test::random_tensor(3, 2, rng);
  const std::size_t nf = m.f[0].blocks.size(), ng = m.g[0].blocks.size();
  std::vector<Tensor> params;
  for (const auto* blocks : {&m.f[0].blocks, &m.g[0].blocks, &m.h.blocks})
    for (const auto& b : *blocks) params.push_back(b.value);
  const test::Builder build = [&](Graph& gr, const std::vector<Var>& v) {
    std::span<const Var> all(v);
    Var generated = generator_forward(m.h, all.subspan(nf + ng), gr.constant(z));
    return j_term(m.f[0], all.subspan(0, nf), m.g[0], all.subspan(nf, ng), generated, gr.constant(y));
  };
  EXPECT_LT(test::gradient_check(build, params), 1e-4);
}

TEST(NwbObjective, SingleMarginalTotal) {
  NwbModel m{{zero_potential(2)}, {half_norm(2)}, zero_generator(2, 2)};
  const Tensor y = Tensor::from_rows({{1, 2}, {0, -1}, {3, 0}});
  BarycenterProblem p;
  p.weights = {1.0};
  const auto v = nwb_objective(p, m, Batches{{y}, Tensor(3, 2, 0.7)});
  EXPECT_NEAR(v.total, -(5.0 + 1.0 + 9.0) / 3.0, 1e-14);
  EXPECT_EQ(v.generator, 0.0);
  EXPECT_EQ(v.r[0], 0.0);
}

TEST(NwbObjective, LinearInWeights) {
  std::mt19937_64 rng(3);
  const NwbModel m = random_model(2, 2, rng);
  const Batches b = random_batches(2, 2, 5, rng);
  BarycenterProblem p;
  auto at = [&](double t) {
    p.weights = {t, 1.0 - t};
    return nwb_objective(p, m, b);
  };
  const auto v0 = at(0.0), v1 = at(1.0), vh = at(0.5), v3 = at(0.3);
  EXPECT_NEAR(vh.total, 0.5 * v0.total + 0.5 * v1.total, 1e-12);
  EXPECT_NEAR(v3.total, 0.3 * v1.total + 0.7 * v0.total, 1e-12);
  const double per1 = vh.j[0] + vh.r[0], per2 = vh.j[1] + vh.r[1];
  EXPECT_NEAR(vh.total, 0.5 * per1 + 0.5 * per2 + vh.generator, 1e-12);
}

TEST(NwbObjective, ZeroWeightMarginalDropsOut) {
  std::mt19937_64 rng(4);
  NwbModel m = random_model(2, 2, rng);
  const Batches b = random_batches(2, 2, 4, rng);
  BarycenterProblem p;
  p.weights = {1.0, 0.0};
  const double before = nwb_objective(p, m, b).total;
  for (auto& blk : m.f[1].blocks) blk.value.mat().array() += 3.0;
  for (auto& blk : m.g[1].blocks) blk.value.mat().array() -= 1.0;
  EXPECT_EQ(nwb_objective(p, m, b).total, before);
}

TEST(NwbObjective, ConstantShiftOfTransportPotential) {
  std::mt19937_64 rng(5);
  NwbModel m = random_model(3, 2, rng);
  const Batches b = random_batches(3, 2, 6, rng);
  BarycenterProblem p;
  p.weights = {0.4, 0.6};
  const double before = nwb_objective(p, m, b).total;
  for (auto& f : m.f) f.blocks.back().value.mat().array() += 2.5;
  EXPECT_NEAR(nwb_objective(p, m, b).total, before, 1e-12);
}

TEST(NwbObjective, BatchSizeMismatch) {
  std::mt19937_64 rng(6);
  const NwbModel m = random_model(2, 2, rng);
  Batches b = random_batches(2, 2, 4, rng);
  b.y[1] = test::random_tensor(3, 2, rng);
  BarycenterProblem p;
  p.weights = {0.5, 0.5};
  EXPECT_THROW(nwb_objective(p, m, b), std::invalid_argument);
}

TEST(NwbObjective, AllNetworkGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const NwbModel m = random_model(2, 2, rng);
  const Batches b = random_batches(2, 2, 3, rng);
  const std::vector<double> weights = {0.3, 0.7};
  std::vector<Tensor> params;
  for (const auto* blocks : {&m.f[0].blocks, &m.f[1].blocks, &m.g[0].blocks, &m.g[1].blocks, &m.h.blocks})
    for (const auto& blk : *blocks) params.push_back(blk.value);
  const test::Builder build = [&](Graph& gr, const std::vector<Var>& v) {
    ObjectiveGraph obj;
    auto it = v.begin();
    auto take = [&](std::size_t k) {
      std::vector<Var> out(it, it + static_cast<std::ptrdiff_t>(k));
      it += static_cast<std::ptrdiff_t>(k);
      return out;
    };
    for (const auto& f : m.f) obj.f_vars.push_back(take(f.blocks.size()));
    for (const auto& g : m.g) obj.g_vars.push_back(take(g.blocks.size()));
    obj.h_vars = take(m.h.blocks.size());
    record_objective(gr, weights, m, b, 0.1, obj);
    return obj.total;
  };
  EXPECT_LT(test::gradient_check(build, params), 1e-4);
}

NwbfModel random_free_model(Index d, Index n, std::mt19937_64& rng) {
  NwbfModel m;
  for (Index i = 0; i < n; ++i) {
    m.f.push_back(make_picnn(d, n, {5, 4}, Activation::celu(), rng));
    m.g.push_back(make_picnn(d, n, {5, 4}, Activation::celu(), rng));
  }
  m.h = make_generator(d, d, {6}, Activation::prelu(), rng, n);
  return m;
}

TEST(NwbfObjective, SingleMarginalMatchesFixedWeightEvaluation) {
  std::mt19937_64 rng(8);
  const NwbfModel m = random_free_model(2, 1, rng);
  const Batches b = random_batches(2, 1, 4, rng);
  BarycenterProblem p;
  p.free_weights = true;
  p.marginals.push_back(GaussianSpec{{Vector::Zero(2), DenseMatrix::Identity(2, 2)}});
  const Tensor one = Tensor::scalar(1.0);
  const auto v = nwbf_objective(p, m, b, one);
  EXPECT_NEAR(v.total, v.j[0] + v.r[0] + v.generator, 1e-12);
  EXPECT_THROW(nwbf_objective(p, m, b, Tensor::scalar(0.9)), std::invalid_argument);
}

TEST(NwbfObjective, VertexWeightKeepsOnlyOneMarginal) {
  std::mt19937_64 rng(9);
  const NwbfModel m = random_free_model(2, 2, rng);
  const Batches b = random_batches(2, 2, 4, rng);
  BarycenterProblem p;
  p.free_weights = true;
  for (int i = 0; i < 2; ++i) p.marginals.push_back(GaussianSpec{{Vector::Zero(2), DenseMatrix::Identity(2, 2)}});
  const auto v = nwbf_objective(p, m, b, Tensor::row({1.0, 0.0}));
  EXPECT_NEAR(v.total, v.j[0] + v.r[0] + v.generator, 1e-12);
}

TEST(NwbfObjective, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(10);
  const NwbfModel m = random_free_model(2, 2, rng);
  const Batches b = random_batches(2, 2, 3, rng);
  const Tensor a = sample_simplex(2, 11);
  std::vector<Tensor> params;
  for (const auto* blocks : {&m.f[0].blocks, &m.f[1].blocks, &m.g[0].blocks, &m.g[1].blocks, &m.h.blocks})
    for (const auto& blk : *blocks) params.push_back(blk.value);
  const test::Builder build = [&](Graph& gr, const std::vector<Var>& v) {
    ObjectiveGraph obj;
    auto it = v.begin();
    auto take = [&](std::size_t k) {
      std::vector<Var> out(it, it + static_cast<std::ptrdiff_t>(k));
      it += static_cast<std::ptrdiff_t>(k);
      return out;
    };
    for (const auto& f : m.f) obj.f_vars.push_back(take(f.blocks.size()));
    for (const auto& g : m.g) obj.g_vars.push_back(take(g.blocks.size()));
    obj.h_vars = take(m.h.blocks.size());
    record_objective(gr, a.data(), m, b, 0.1, obj, &a);
    return obj.total;
  };
  EXPECT_LT(test::gradient_check(build, params), 1e-4);
}

}  // namespace
}  // namespace nwb
