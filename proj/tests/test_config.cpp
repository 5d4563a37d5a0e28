#include <gtest/gtest.h>

#include <cstdio>
#include <map>
#include <set>

#include "kdream/config.hpp"
#include "kdream/error.hpp"
#include "kdream/rng.hpp"

using namespace kdream;
using config::RunConfig;

namespace {

const std::map<std::string, std::vector<std::string>> kChoices{
    {"diffusion.optimizer", {"sgd", "adam"}},
    {"crn.optimizer", {"sgd", "adam"}},
    {"crn.attention", {"sparse", "dense"}},
    {"guidance.domain", {"span", "convex"}},
    {"eval.sa_scale", {"normalized", "raw"}},
    {"guidance.relation", {"drug_protein", "binds", "x y"}},
    {"crn.beta_min", {"auto", "0.25"}},
    {"crn.beta_max", {"auto", "7.5"}},
    {"guidance.lambda_e", {"auto", "0.125"}},
    {"eval.qed_min", {"off", "0.5"}},
    {"eval.sa_min", {"off", "0.44"}},
    {"eval.max_similarity", {"off", "0.4"}},
};

bool integer_key(const std::string& key) {
  RunConfig probe;
  try {
    probe.set(key, "0.375");
    return false;
  } catch (const Error&) {
    return true;
  }
}

}  // namespace

TEST(Config, DefaultsFollowModuleDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.kge.dim, 512u);
  EXPECT_EQ(c.kge.epochs, 100u);
  EXPECT_EQ(c.kge.learning_rate, 1e-3);
  EXPECT_EQ(c.guidance.relation, "drug_protein");
  EXPECT_EQ(c.lambda_e(), c.guidance.lambda_x);
  EXPECT_EQ(c.eval.qed_min, 0.5);
  EXPECT_EQ(c.eval.sa_min, 0.44);
  EXPECT_EQ(c.eval.max_similarity, 0.4);
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.crn_schedule(), c.diffusion.schedule);
}

TEST(Config, ParsesSectionsCommentsAndGlobalKeys) {
  const auto c = config::parse(
      "# run\nseed = 42\n\n[kge]\ndim = 64   \n  epochs=7\n[crn]\nbeta_max = 0.05\n[guidance]\nlambda_x = 0.5\r\n");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.kge.dim, 64u);
  EXPECT_EQ(c.kge.epochs, 7u);
  EXPECT_EQ(c.lambda_e(), 0.5);
  EXPECT_EQ(c.crn.beta_max, 0.05);
  EXPECT_EQ(c.crn_schedule().beta_max, 0.05);
  EXPECT_EQ(c.crn_schedule().beta_min, c.diffusion.schedule.beta_min);
  EXPECT_EQ(c.crn_train(4, 1).schedule.beta_max, 0.05);
  EXPECT_EQ(c.kge_train().seed, 42u);
}

TEST(Config, ErrorsCarryLineNumbers) {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      config::parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(line_of("[kge]\ndim = 4\nwidth = 3\n"), 3u);
  EXPECT_EQ(line_of("seed = 1\n[model]\n"), 2u);
  EXPECT_EQ(line_of("[kge\n"), 1u);
  EXPECT_EQ(line_of("[kge]\n\ndim\n"), 3u);
  EXPECT_EQ(line_of("[kge]\ndim = -3\n"), 2u);
  EXPECT_EQ(line_of("[kge]\nlearning_rate = 1e-3x\n"), 2u);
  EXPECT_EQ(line_of("[diffusion]\noptimizer = rmsprop\n"), 2u);
  EXPECT_EQ(line_of("[eval]\nqed_min = nan\n"), 2u);
  RunConfig c;
  EXPECT_THROW(c.set("kge.depth", "3"), Error);
  EXPECT_THROW(c.get("nope"), Error);
  EXPECT_THROW(config::load("/nonexistent/kdream.cfg"), Error);
}

TEST(Config, ValidationRejectsInconsistentValues) {
  auto invalid = [](const std::string& key, const std::string& value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.validate(), Error) << key << " = " << value;
  };
  invalid("kg.train", "0.5");
  invalid("kge.dim", "0");
  invalid("diffusion.steps", "5");
  invalid("diffusion.ema_decay", "1");
  invalid("crn.beta_max", "0.01");
  invalid("guidance.lambda_x", "-1");
  invalid("guidance.sigma_y2", "0");
  invalid("eval.top_fraction", "0");
}

TEST(Config, WriteThenParseRoundTripsEveryKey) {
  auto rng = derive_stream(1, "test.config");
  std::uniform_int_distribution<int> small(1, 5000);
  for (int trial = 0; trial < 50; ++trial) {
    RunConfig c;
    for (const auto& key : RunConfig::keys()) {
      if (uniform01(rng) < 0.3) continue;
      if (const auto it = kChoices.find(key); it != kChoices.end()) {
        c.set(key, it->second[std::size_t(uniform01(rng) * double(it->second.size()))]);
      } else if (integer_key(key)) {
        c.set(key, std::to_string(small(rng)));
      } else {
        // Awkward doubles: subnormal-adjacent, many digits, negative zero.
        const double pick[] = {uniform01(rng) * 1e-300, uniform01(rng), -0.0, 1.0 / 3.0, 12345.678901234567};
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", pick[small(rng) % 5]);
        c.set(key, buf);
      }
    }
    const auto text = config::write(c);
    const auto back = config::parse(text);
    for (const auto& key : RunConfig::keys()) EXPECT_EQ(back.get(key), c.get(key)) << key;
    EXPECT_EQ(config::write(back), text);
  }
  // Typed fields survive, not only their text.
  RunConfig c;
  c.set("diffusion.beta_max", "0.1");
  c.set("guidance.relation", "targets");
  const auto back = config::parse(config::write(c));
  EXPECT_EQ(back.diffusion.schedule.beta_max, 0.1);
  EXPECT_EQ(back.guidance.relation, "targets");
  EXPECT_FALSE(back.crn.beta_min);
}

TEST(Config, EveryKeyIsListedOnce) {
  const auto& keys = RunConfig::keys();
  EXPECT_EQ(keys.front(), "seed");
  std::set<std::string> unique(keys.begin(), keys.end());
  EXPECT_EQ(unique.size(), keys.size());
  for (const char* k : {"crn.beta_min", "crn.beta_max", "guidance.domain", "kge.negatives", "eval.sa_scale"})
    EXPECT_TRUE(unique.count(k)) << k;
}
