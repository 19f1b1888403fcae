#include "nwb/graph.hpp"
#include "support/finite_diff.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

namespace nwb {
namespace {

using test::gradient_check;
using test::random_tensor;

TEST(Graph, MatmulSelectsColumn) {
  Graph g;
  Var a = g.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  Var e = g.constant(Tensor::column({1, 0}));
  EXPECT_EQ(matmul(a, e).value(), Tensor::column({1, 3}));
}

TEST(Graph, SquaredNormAndCelu) {
  Graph g;
  EXPECT_DOUBLE_EQ(squared_norm(g.constant(Tensor::row({3, 4}))).value().item(), 25.0);
  Var x = g.constant(Tensor::row({2, 0}));
  EXPECT_EQ(activate(x, Activation::celu(1.0)).value(), Tensor::row({2, 0}));
}

TEST(Graph, ShapeMismatchNamesBothShapes) {
  Graph g;
  Var a = g.constant(Tensor(2, 3));
  Var b = g.constant(Tensor(2, 3));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos);
  }
  EXPECT_THROW(a + g.constant(Tensor(3, 2)), ShapeError);
  EXPECT_NO_THROW(a + g.constant(Tensor::scalar(1.0)));
}

TEST(Graph, NonFiniteIsHardError) {
  Graph g;
  EXPECT_THROW(g.constant(Tensor::scalar(std::numeric_limits<double>::quiet_NaN())), NumericError);
  Var big = g.constant(Tensor::scalar(1e300));
  EXPECT_THROW(big * big, NumericError);
}

TEST(Graph, BackwardInnerProduct) {
  Graph g;
  Var w = g.constant(Tensor::column({1, 2}));
  Var x = g.parameter(Tensor::column({3, 4}));
  g.backward(matmul(transpose(w), x));
  EXPECT_EQ(g.grad(x), Tensor::column({1, 2}));
}

TEST(Graph, ConstantRootGivesZeroGradients) {
  Graph g;
  Var p = g.parameter(Tensor::row({1, 2, 3}));
  Var c = g.constant(Tensor::row({4, 5, 6}));
  g.backward(squared_norm(c));
  EXPECT_EQ(g.grad(p), Tensor(1, 3, 0.0));
}

TEST(Graph, UnreachableParameterGetsZeroOfSameShape) {
  Graph g;
  Var p = g.parameter(Tensor(2, 5, 1.0));
  Var q = g.parameter(Tensor::row({1, 2}));
  g.backward(squared_norm(q));
  EXPECT_EQ(g.grad(p).shape(), (std::array<Index, 2>{2, 5}));
  EXPECT_EQ(g.grad(p).mat().squaredNorm(), 0.0);
}

TEST(Graph, BackwardRejectsNonScalarRoot) {
  Graph g;
  Var p = g.parameter(Tensor(2, 2, 1.0));
  EXPECT_THROW(g.backward(p), ShapeError);
  EXPECT_THROW(g.grad(p), Error);
}

TEST(Graph, SquaredNormOfProductMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const test::Builder build = [](Graph&, const std::vector<Var>& v) { return squared_norm(matmul(v[0], v[1])); };
  const double err = gradient_check(build, {random_tensor(4, 3, rng), random_tensor(3, 1, rng)});
  EXPECT_LT(err, 1e-6);
}

TEST(Activation, DerivativesMatchFiniteDifferences) {
  const double h = 1e-6;
  for (Activation act : {Activation::celu(1.0), Activation::celu(0.5), Activation::softplus()}) {
    for (double x : {-3.0, -0.7, -1e-3, 0.4, 2.5}) {
      const double d1 = (act.value(x + h) - act.value(x - h)) / (2 * h);
      const double d2 = (act.derivative(x + h) - act.derivative(x - h)) / (2 * h);
      EXPECT_NEAR(act.derivative(x), d1, 1e-7) << act.name() << " at " << x;
      EXPECT_NEAR(act.second_derivative(x), d2, 1e-6) << act.name() << " at " << x;
    }
  }
  // Right derivative at the CELU kink.
  EXPECT_EQ(Activation::celu().derivative(0.0), 1.0);
  EXPECT_EQ(Activation::celu().second_derivative(0.0), 0.0);
  EXPECT_DOUBLE_EQ(Activation::prelu(0.1).value(-2.0), -0.2);
}

TEST(InputGrad, LinearFunction) {
  Graph g;
  Var a = g.parameter(Tensor::column({2, -1, 0.5}));
  Var y = g.constant(Tensor::row({0.3, 0.1, -4}));
  Var grad = input_grad(sum(matmul(y, a)), y);
  EXPECT_EQ(grad.value(), Tensor::row({2, -1, 0.5}));
  Var c = g.constant(Tensor::row({1, 2, 3}));
  g.backward(inner(c, grad));
  EXPECT_EQ(g.grad(a), Tensor::column({1, 2, 3}));
}

TEST(InputGrad, HalfSquaredNormIsIdentity) {
  Graph g;
  Var y = g.constant(Tensor::from_rows({{1, -2}, {0.5, 3}}));
  Var grad = input_grad(scale(squared_norm(y), 0.5), y);
  EXPECT_EQ(grad.value(), y.value());
}

TEST(InputGrad, RejectsPreluOnPath) {
  Graph g;
  Var w = g.parameter(Tensor::from_rows({{1, 0}, {0, 1}}));
  Var y = g.constant(Tensor::row({1, -1}));
  Var out = sum(activate(matmul(y, w), Activation::prelu(0.2)));
  EXPECT_THROW(input_grad(out, y), Error);
  EXPECT_THROW(input_grad(g.constant(Tensor(1, 2)), y), ShapeError);
}

// g(y) = sum_j celu(celu(y W1 + 1 b1) W2 + 1 b2) w3 : a 2-layer CELU net.
Var small_net(Graph& g, Var y, const std::vector<Var>& p, std::size_t o) {
  Var ones = g.constant(Tensor(y.rows(), 1, 1.0));
  Var h1 = activate(matmul(y, p[o]) + matmul(ones, p[o + 1]), Activation::celu());
  Var h2 = activate(matmul(h1, p[o + 2]) + matmul(ones, p[o + 3]), Activation::celu());
  return matmul(h2, p[o + 4]);
}

std::vector<Tensor> small_net_params(Index d, Index w, std::mt19937_64& rng) {
  return {random_tensor(d, w, rng), random_tensor(1, w, rng), random_tensor(w, w, rng), random_tensor(1, w, rng),
          random_tensor(w, 1, rng)};
}

TEST(InputGrad, RandomCeluNetMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const auto theta_g = small_net_params(2, 5, rng);
  const Tensor y0 = random_tensor(3, 2, rng);

  // input gradient vs differences of g in y
  Graph g;
  std::vector<Var> gv;
  for (const auto& t : theta_g) gv.push_back(g.constant(t));
  Var y = g.constant(y0);
  const Tensor analytic = input_grad(sum(small_net(g, y, gv, 0)), y).value();
  const test::Builder as_fn_of_y = [&](Graph& gg, const std::vector<Var>& v) {
    std::vector<Var> cv;
    for (const auto& t : theta_g) cv.push_back(gg.constant(t));
    return sum(small_net(gg, v[0], cv, 0));
  };
  const auto numeric = test::numeric_gradients(as_fn_of_y, {y0});
  EXPECT_LT(test::relative_error({analytic}, numeric), 1e-5);

  // d/d(theta_g) of sum f(grad g(y))
  auto theta = theta_g;
  for (auto& t : small_net_params(2, 4, rng)) theta.push_back(t);
  const test::Builder composite = [&](Graph& gg, const std::vector<Var>& v) {
    Var yy = gg.constant(y0);
    Var grad = input_grad(sum(small_net(gg, yy, v, 0)), yy);
    return sum(small_net(gg, grad, v, 5));
  };
  EXPECT_LT(gradient_check(composite, theta), 1e-4);
}

// Random op chains over the whole vocabulary.
test::Builder random_chain(std::mt19937_64& rng, std::vector<Tensor>& params) {
  std::uniform_int_distribution<Index> dim(1, 8);
  std::uniform_int_distribution<int> depth_dist(1, 5);
  std::uniform_int_distribution<int> op_dist(0, 7);
  const Index r0 = dim(rng), c0 = dim(rng);
  params.push_back(random_tensor(r0, c0, rng));
  struct Step {
    int op;
    int param;
  };
  std::vector<Step> steps;
  Index r = r0, c = c0;
  const int depth = depth_dist(rng);
  for (int s = 0; s < depth; ++s) {
    const int op = op_dist(rng);
    int pi = -1;
    switch (op) {
      case 0: {  // matmul
        const Index k = dim(rng);
        params.push_back(random_tensor(c, k, rng, 0.7));
        pi = static_cast<int>(params.size()) - 1;
        c = k;
        break;
      }
      case 1:  // add same shape
      case 2:  // hadamard
        params.push_back(random_tensor(r, c, rng));
        pi = static_cast<int>(params.size()) - 1;
        break;
      case 3:  // add broadcast scalar
        params.push_back(random_tensor(1, 1, rng));
        pi = static_cast<int>(params.size()) - 1;
        break;
      case 6:  // transpose
        std::swap(r, c);
        break;
      default: break;  // celu, softplus, scale
    }
    steps.push_back({op, pi});
  }
  const int reduce = std::uniform_int_distribution<int>(0, 3)(rng);
  int reduce_param = -1;
  if (reduce == 3) {
    params.push_back(random_tensor(r, c, rng));
    reduce_param = static_cast<int>(params.size()) - 1;
  }
  return [steps, reduce, reduce_param](Graph&, const std::vector<Var>& v) {
    Var x = v[0];
    for (const auto& s : steps) {
      switch (s.op) {
        case 0: x = matmul(x, v[static_cast<std::size_t>(s.param)]); break;
        case 1: x = x + v[static_cast<std::size_t>(s.param)]; break;
        case 2: x = x * v[static_cast<std::size_t>(s.param)]; break;
        case 3: x = v[static_cast<std::size_t>(s.param)] + x; break;
        case 4: x = activate(x, Activation::celu(0.8)); break;
        case 5: x = activate(x, Activation::softplus()); break;
        case 6: x = transpose(x); break;
        default: x = scale(x, -1.3); break;
      }
    }
    switch (reduce) {
      case 0: return sum(x);
      case 1: return mean(x);
      case 2: return squared_norm(x);
      default: return inner(x, v[static_cast<std::size_t>(reduce_param)]);
    }
  };
}

TEST(GraphProperty, RandomCompositionsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> params;
    auto build = random_chain(rng, params);
    EXPECT_LT(gradient_check(build, params), 1e-4) << "seed " << seed;
  }
}

TEST(GraphProperty, GradientsAreBitIdenticalAcrossRuns) {
  std::mt19937_64 rng(3);
  std::vector<Tensor> params;
  auto build = random_chain(rng, params);
  const auto a = test::analytic_gradients(build, params);
  const auto b = test::analytic_gradients(build, params);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

}  // namespace
}  // namespace nwb
