#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "kdream/diffusion.hpp"
#include "kdream/gradcheck.hpp"
#include "oracles.hpp"

using namespace kdream;
using ad::Tensor;
using diffusion::GraphState;
using diffusion::NoiseSchedule;

namespace {

GraphState one_hot_pair(double e01) {
  GraphState g{Tensor(2, diffusion::kChannels), Tensor(2, 2), 0.0};
  g.X(0, 0) = g.X(1, 0) = 1.0;
  g.E(0, 1) = g.E(1, 0) = e01;
  return g;
}

bool symmetric_zero_diagonal(const Tensor& e) {
  for (std::size_t i = 0; i < e.rows(); ++i) {
    if (e(i, i) != 0.0) return false;
    for (std::size_t j = 0; j < e.cols(); ++j)
      if (e(i, j) != e(j, i)) return false;
  }
  return true;
}

diffusion::ScoreNetwork small_network(std::uint64_t seed) {
  diffusion::ScoreNetConfig cfg;
  cfg.max_nodes = 4;
  cfg.hidden = 8;
  cfg.layers = 2;
  cfg.time_features = 4;
  return diffusion::ScoreNetwork(cfg, {}, seed);
}

}  // namespace

TEST(Schedule, AlphaSigmaClosedForm) {
  NoiseSchedule s{0.1, 20.0, 200, 1e-3};
  EXPECT_NEAR(s.alpha(1.0), std::exp(-0.5 * 10.05), 1e-15);
  EXPECT_NEAR(s.alpha(1.0), 6.57e-3, 1e-5);
  for (double t : {0.01, 0.3, 0.7, 1.0}) {
    EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t), 1.0, 1e-14);
    EXPECT_NEAR(s.beta_integral(t), 0.1 * t + 0.5 * 19.9 * t * t, 1e-14);
  }
  EXPECT_EQ(s.alpha(0.0), 1.0);
  EXPECT_THROW((NoiseSchedule{0.0, 1.0, 200, 1e-3}).validate(), Error);
  EXPECT_THROW((NoiseSchedule{2.0, 1.0, 200, 1e-3}).validate(), Error);
  EXPECT_THROW((NoiseSchedule{0.1, 1.0, 9, 1e-3}).validate(), Error);
}

TEST(ForwardPerturb, MarginalMomentsAtTimeOne) {
  NoiseSchedule s{0.1, 20.0, 200, 1e-3};
  const auto g0 = one_hot_pair(1.0 / 3.0);
  auto rng = derive_stream(1, "test.moments");
  const std::size_t draws = 10000;
  const std::size_t nx = g0.X.size();
  std::vector<double> sum(nx + 1, 0.0), sq(nx + 1, 0.0);
  for (std::size_t d = 0; d < draws; ++d) {
    auto gt = diffusion::forward_perturb(g0, 1.0, s, rng);
    ASSERT_TRUE(symmetric_zero_diagonal(gt.E));
    for (std::size_t i = 0; i < nx; ++i) {
      sum[i] += gt.X[i];
      sq[i] += gt.X[i] * gt.X[i];
    }
    sum[nx] += gt.E(0, 1);
    sq[nx] += gt.E(0, 1) * gt.E(0, 1);
  }
  for (std::size_t i = 0; i <= nx; ++i) {
    const double mean = sum[i] / draws, var = sq[i] / draws - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.05) << "entry " << i;
    EXPECT_NEAR(var, 1.0, 0.1) << "entry " << i;
  }
}

TEST(ForwardPerturb, ApproachesDataAsTimeShrinks) {
  NoiseSchedule s;
  const auto g0 = one_hot_pair(2.0 / 3.0);
  auto rng = derive_stream(2, "test.limit");
  const auto xi = diffusion::sample_noise(2, diffusion::kChannels, rng);
  double prev = 1e9;
  for (double t : {1e-1, 1e-2, 1e-4, 1e-6, 1e-8}) {
    const auto gt = diffusion::perturb_with(g0, t, s, xi);
    double d = 0;
    for (std::size_t i = 0; i < g0.X.size(); ++i) d += std::pow(gt.X[i] - g0.X[i], 2);
    for (std::size_t i = 0; i < 4; ++i) d += std::pow(gt.E[i] - g0.E[i], 2);
    EXPECT_LT(std::sqrt(d), prev);
    prev = std::sqrt(d);
  }
  EXPECT_LT(prev, 1e-3);
  EXPECT_THROW(diffusion::forward_perturb(g0, 0.0, s, rng), Error);
  EXPECT_THROW(diffusion::forward_perturb(g0, 1.5, s, rng), Error);
}

TEST(Dsm, ZeroNetworkLossEqualsNoiseEnergyAtEveryTime) {
  const auto net = oracle::zero_network(3);
  const auto g0 = diffusion::encode(mol::parse_smiles("CO"), 3);
  auto rng = derive_stream(3, "test.dsm");
  for (int k = 0; k < 5; ++k) {
    const auto xi = diffusion::sample_noise(3, diffusion::kChannels, rng);
    double energy = 0;
    for (double v : xi.X.values()) energy += v * v;
    for (double v : xi.E.values()) energy += v * v;
    for (double t : {0.01, 0.5, 1.0}) EXPECT_NEAR(diffusion::dsm_example_loss(net, g0, t, xi), energy, 1e-12);
  }
  // Its expectation is the data dimensionality: N·M node entries plus N(N−1) off-diagonal bond entries.
  std::vector<GraphState> batch(4000, g0);
  const double mean = diffusion::dsm_loss(net, batch, rng);
  const double dims = 3.0 * diffusion::kChannels + 3.0 * 2.0;
  EXPECT_NEAR(mean, dims, 0.05 * dims);
  EXPECT_THROW(diffusion::dsm_loss(net, {}, rng), Error);
}

TEST(Dsm, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) EXPECT_LT(gradcheck::dsm(seed).result.max_rel_error, 1e-4);
}

TEST(ScoreNetwork, EdgeHeadIsSymmetricWithZeroDiagonal) {
  const auto net = small_network(4);
  auto rng = derive_stream(4, "test.heads");
  const auto g0 = diffusion::encode(mol::parse_smiles("CC=O"), 4);
  for (double t : {0.05, 0.5, 1.0}) {
    const auto gt = diffusion::forward_perturb(g0, t, net.schedule(), rng);
    const auto sc = net.score(gt);
    EXPECT_TRUE(symmetric_zero_diagonal(sc.E));
    EXPECT_TRUE(sc.X.all_finite());
    EXPECT_EQ(sc.X.rows(), 4u);
  }
}

TEST(Quantize, Examples) {
  auto g = one_hot_pair(0.34);
  auto m = diffusion::quantize(g);
  ASSERT_EQ(m.atom_count(), 2u);
  EXPECT_EQ(m.bond_order(0, 1), 1);
  g = one_hot_pair(0.5);
  EXPECT_EQ(diffusion::quantize(g).bond_order(0, 1), 1);
  g = one_hot_pair(0.5 + 1e-12);
  EXPECT_EQ(diffusion::quantize(g).bond_order(0, 1), 2);
  g = one_hot_pair(7.0);
  EXPECT_EQ(diffusion::quantize(g).bond_order(0, 1), 3);
  g = one_hot_pair(1.0 / 6.0);
  EXPECT_EQ(diffusion::quantize(g).atom_count(), 1u);
}

TEST(Quantize, ChannelTiesPaddingAndLargestComponent) {
  GraphState g{Tensor(4, diffusion::kChannels), Tensor(4, 4), 0.0};
  g.X(0, 2) = g.X(0, 1) = 0.7;                   // tie between N and O → N
  g.X(1, 0) = 0.9;                               // C
  g.X(2, diffusion::kNoAtomChannel) = 1.0;       // dropped
  g.X(3, 3) = 0.8;                               // F, isolated
  g.E(0, 1) = g.E(1, 0) = 1.0 / 3.0;
  g.E(1, 2) = g.E(2, 1) = 1.0;                   // bond to a dropped node vanishes
  const auto m = diffusion::quantize(g);
  ASSERT_EQ(m.atom_count(), 2u);
  EXPECT_EQ(m.atom(0).element, mol::Element::N);
  EXPECT_EQ(m.atom(1).element, mol::Element::C);
}

TEST(Quantize, EncodeRoundTripOnCorpus) {
  std::size_t checked = 0;
  for (const auto& s : oracle::data_lines("smiles200.smi")) {
    const auto m = mol::parse_smiles(s);
    const auto g = diffusion::encode(m, m.atom_count() + 2);
    const auto back = diffusion::quantize(g);
    EXPECT_EQ(back.atoms(), m.atoms()) << s;
    EXPECT_EQ(back.bonds().size(), m.bonds().size()) << s;
    EXPECT_TRUE(oracle::isomorphic(back, m)) << s;
    EXPECT_EQ(diffusion::encode(back, m.atom_count() + 2), g) << s;
    ++checked;
  }
  EXPECT_EQ(checked, 200u);
}

TEST(Encode, RejectsOversizeAndCharged) {
  try {
    diffusion::encode(mol::parse_smiles("CCCC"), 3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(mol::write_smiles(mol::parse_smiles("CCCC"))), std::string::npos);
  }
  EXPECT_THROW(diffusion::encode(mol::parse_smiles("C[O-]"), 4), Error);
}

TEST(TrainScore, OversizeMoleculeIsNamed) {
  diffusion::ScoreTrainConfig cfg;
  cfg.net.max_nodes = 2;
  cfg.iterations = 1;
  try {
    diffusion::train_score({mol::parse_smiles("CC"), mol::parse_smiles("CCO")}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(mol::write_smiles(mol::parse_smiles("CCO"))), std::string::npos) << e.what();
  }
}

TEST(TrainScore, LossDecreasesAndRunIsDeterministic) {
  diffusion::ScoreTrainConfig cfg;
  cfg.net.max_nodes = 3;
  cfg.net.hidden = 16;
  cfg.net.layers = 1;
  cfg.iterations = 300;
  cfg.batch_size = 8;
  cfg.log_every = 50;
  cfg.seed = 9;
  const std::vector<mol::MolecularGraph> data{mol::parse_smiles("CCO"), mol::parse_smiles("C=C"),
                                              mol::parse_smiles("CC")};
  diffusion::TrainLog log;
  const auto a = diffusion::train_score(data, cfg, &log);
  ASSERT_EQ(log.window_loss.size(), 6u);
  EXPECT_LT(log.window_loss.back(), log.window_loss.front());
  cfg.jobs = 3;
  EXPECT_TRUE(a == diffusion::train_score(data, cfg));
}

TEST(Sampler, DeterministicSymmetricAndUnaffectedByNoOpCorrection) {
  const auto net = small_network(5);
  diffusion::SamplerConfig cfg;
  cfg.steps = 30;
  struct Nothing : diffusion::ScoreCorrection {
    void apply(const GraphState&, diffusion::ScoreNetwork::Score&) const override {}
  } nothing;
  std::vector<GraphState> plain, corrected;
  auto rng1 = derive_stream(6, "test.sampler"), rng2 = derive_stream(6, "test.sampler");
  const auto a = diffusion::reverse_sample(net, 4, cfg, rng1, nullptr, [&](std::size_t, const GraphState& g) {
    plain.push_back(g);
    EXPECT_TRUE(symmetric_zero_diagonal(g.E));
  });
  const auto b = diffusion::reverse_sample(net, 4, cfg, rng2, &nothing,
                                           [&](std::size_t, const GraphState& g) { corrected.push_back(g); });
  EXPECT_EQ(plain.size(), 30u);
  EXPECT_EQ(plain, corrected);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(symmetric_zero_diagonal(a.E));
  EXPECT_NEAR(a.t, net.schedule().eps, 1e-15);
  auto rng3 = derive_stream(7, "test.sampler");
  EXPECT_FALSE(diffusion::reverse_sample(net, 4, cfg, rng3) == a);
}

TEST(Sampler, RejectsTooFewSteps) {
  const auto net = small_network(1);
  diffusion::SamplerConfig cfg;
  cfg.steps = 9;
  auto rng = derive_stream(1, "x");
  EXPECT_THROW(diffusion::reverse_sample(net, 2, cfg, rng), Error);
}

TEST(Sampler, OodWidensThePrior) {
  const auto net = oracle::zero_network(3);
  diffusion::SamplerConfig cfg;
  cfg.steps = 10;
  cfg.corrector_steps = 0;
  double narrow = 0, wide = 0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    for (double ood : {0.0, 1.0}) {
      cfg.ood = ood;
      auto rng = derive_stream(i, "test.ood");
      double first = 0;
      diffusion::reverse_sample(net, 3, cfg, rng, nullptr, [&](std::size_t step, const GraphState& g) {
        if (step == 0)
          for (double v : g.X.values()) first += v * v;
      });
      (ood == 0.0 ? narrow : wide) += first;
    }
  }
  EXPECT_GT(wide, 3.0 * narrow);
}

TEST(Sampler, ExactScoreRecoversFourOutcomeDistribution) {
  // Two-atom universe with exact mixture score: isolates the sampler from training error.
  const std::vector<std::pair<std::string, double>> outcomes{{"CC", 0.4}, {"C=C", 0.3}, {"C#C", 0.1}, {"CO", 0.2}};
  NoiseSchedule sched;
  const auto net = oracle::zero_network(2, sched);
  std::vector<GraphState> points;
  std::vector<double> weights;
  std::map<std::string, double> p, q;
  for (const auto& [s, w] : outcomes) {
    const auto m = mol::parse_smiles(s);
    points.push_back(diffusion::encode(m, 2));
    weights.push_back(w);
    p[mol::write_smiles(m)] = w;
  }
  const oracle::MixtureScore exact(points, weights, sched);
  diffusion::SamplerConfig cfg;
  const std::size_t n = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = derive_stream(11, "test.exact", i);
    const auto g = diffusion::reverse_sample(net, 2, cfg, rng, &exact);
    q[mol::write_smiles(diffusion::quantize(g))] += 1.0 / n;
  }
  EXPECT_LT(oracle::total_variation(p, q), 0.15);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto net = small_network(8);
  const auto bytes = diffusion::serialize(net);
  EXPECT_EQ(bytes.substr(0, 4), "KDSN");
  const auto back = diffusion::deserialize(bytes);
  EXPECT_TRUE(back == net);
  EXPECT_EQ(back.schedule().beta_max, net.schedule().beta_max);
  EXPECT_EQ(diffusion::serialize(back), bytes);
  for (std::size_t cut : {std::size_t{2}, bytes.size() / 3, bytes.size() - 1})
    EXPECT_THROW(diffusion::deserialize(std::string_view(bytes).substr(0, cut)), Error);
  auto wrong = bytes;
  wrong[1] = 'X';
  EXPECT_THROW(diffusion::deserialize(wrong), Error);
  const auto path = std::filesystem::temp_directory_path() / "kdream_score.ckpt";
  diffusion::save(net, path.string());
  EXPECT_TRUE(diffusion::load(path.string()) == net);
  std::filesystem::remove(path);
}
