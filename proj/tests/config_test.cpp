#include "nwb/config.hpp"

#include <gtest/gtest.h>

namespace nwb {
namespace {

const char* kBase = R"(
[problem]
weights = [0.25, 0.75]

[[problem.marginal]]
kind = "gaussian"
mean = [0.0, 1.0]
cov = [[1.0, 0.0], [0.0, 2.0]]

[[problem.marginal]]
kind = "line"
p0 = [0.0, 0.0]
p1 = [1.0, 1.0]
)";

std::string message_of(const std::string& text) {
  try {
    parse_config_string(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsFilled) {
  const RunConfig c = parse_config_string(kBase);
  EXPECT_EQ(c.problem.count(), 2);
  EXPECT_EQ(c.problem.latent_dim, 2);
  EXPECT_EQ(c.problem.lambda, 0.1);
  EXPECT_EQ(c.train.k1, 6);
  EXPECT_EQ(c.train.k2, 4);
  EXPECT_EQ(c.train.batch_size, 100);
  EXPECT_EQ(c.train.mode, Mode::Nwb);
  EXPECT_EQ(c.eval.uvp_samples, 10000);
}

TEST(Config, UnknownKeyIsAnError) {
  const std::string msg = message_of(std::string(kBase) + "\n[training]\nk4 = 3\n");
  EXPECT_NE(msg.find("training.k4"), std::string::npos) << msg;
  EXPECT_NE(message_of(std::string(kBase) + "\n[extras]\n").find("extras"), std::string::npos);
}

TEST(Config, FieldLevelDiagnostics) {
  EXPECT_NE(message_of(std::string(kBase) + "\n[training]\nk1 = 0\n").find("training.k1"), std::string::npos);
  EXPECT_NE(message_of(std::string(kBase) + "\n[training]\nlr_f = \"fast\"\n").find("training.lr_f"),
            std::string::npos);
  EXPECT_FALSE(message_of("[problem]\nweights = [1.0]\n").empty());
}

TEST(Config, FreeWeightsSelectFreeMode) {
  std::string text = kBase;
  text.replace(text.find("[0.25, 0.75]"), 12, "\"free\"");
  const RunConfig c = parse_config_string(text);
  EXPECT_TRUE(c.problem.free_weights);
  EXPECT_EQ(c.train.mode, Mode::NwbF);
}

TEST(Config, RandomGaussiansAreReproducible) {
  const std::string text =
      "[problem]\nweights = [0.5, 0.5]\n[problem.random_gaussians]\ncount = 2\ndim = 4\nmax_condition = 5.0\n"
      "seed = 3\n";
  const RunConfig a = parse_config_string(text), b = parse_config_string(text);
  ASSERT_EQ(a.problem.count(), 2);
  EXPECT_EQ(std::get<GaussianSpec>(a.problem.marginals[1]).moments.cov,
            std::get<GaussianSpec>(b.problem.marginals[1]).moments.cov);
}

TEST(Config, EchoRoundTrip) {
  const std::string text =
      std::string(kBase) + "\n[training]\nk3 = 7\nlr_decay_period_epochs = 3.5\nseed = 11\n[network]\n"
                           "potential_widths = [5, 6]\n";
  const RunConfig c = parse_config_string(text);
  const std::string echo = echo_config(c);
  EXPECT_EQ(echo_config(parse_config_string(echo)), echo);
  const RunConfig back = parse_config_string(echo);
  EXPECT_EQ(back.train.k3, 7);
  EXPECT_EQ(back.train.seed, 11u);
  EXPECT_EQ(back.train.potential.widths, (std::vector<Index>{5, 6}));
}

}  // namespace
}  // namespace nwb
