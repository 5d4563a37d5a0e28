#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "kdream/crn.hpp"
#include "kdream/gradcheck.hpp"
#include "oracles.hpp"

using namespace kdream;
using ad::Tensor;
using diffusion::GraphState;

namespace {

GraphState random_state(std::size_t n, std::uint64_t seed, double e_lo = 0.0) {
  auto rng = derive_stream(seed, "test.crn.state");
  std::normal_distribution<double> z;
  GraphState g{Tensor(n, diffusion::kChannels), Tensor(n, n), 0.3};
  for (auto& v : g.X.values()) v = z(rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = z(rng) * 0.5;
      if (e_lo > 0) v = e_lo + uniform01(rng);
      g.E(i, j) = g.E(j, i) = v;
    }
  return g;
}

crn::CrnConfig small_config(crn::Attention a = crn::Attention::kSparse) {
  crn::CrnConfig c;
  c.layers = 2;
  c.hidden = 6;
  c.out_dim = 3;
  c.max_nodes = 6;
  c.attention = a;
  return c;
}

// Straight-line forward pass with explicit loops, independent of the tape.
std::vector<double> reference_forward(const crn::CrnParams& p, const GraphState& g) {
  const auto& c = p.config;
  const std::size_t n = g.nodes(), m = c.channels, h = c.hidden;
  std::vector<std::vector<double>> H(n, std::vector<double>(h, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < h; ++k) {
      double acc = 0;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t q = 0; q < m; ++q) acc += g.E(i, j) * g.X(j, q) * p.tensors[0](q, k);
      H[i][k] = std::tanh(acc);
    }
  for (std::size_t l = 0; l < c.layers; ++l) {
    const Tensor& W = p.tensors[1 + 2 * l];
    const Tensor& a = p.tensors[2 + 2 * l];
    std::vector<std::vector<double>> WH(n, std::vector<double>(h, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < h; ++k)
        for (std::size_t q = 0; q < h; ++q) WH[i][k] += H[i][q] * W(q, k);
    std::vector<std::vector<double>> next(n, std::vector<double>(h, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logit(n, -INFINITY);
      for (std::size_t j = 0; j < n; ++j) {
        const bool keep = c.attention == crn::Attention::kDense || i == j || g.E(i, j) > c.tau;
        if (!keep) continue;
        double s = 0;
        for (std::size_t k = 0; k < h; ++k) s += a[k] * WH[i][k] + a[h + k] * WH[j][k];
        logit[j] = s > 0 ? s : 0.2 * s;
      }
      const double top = *std::max_element(logit.begin(), logit.end());
      double z = 0;
      for (double v : logit) z += std::isinf(v) ? 0.0 : std::exp(v - top);
      for (std::size_t j = 0; j < n; ++j) {
        if (std::isinf(logit[j])) continue;
        const double w = std::exp(logit[j] - top) / z;
        for (std::size_t k = 0; k < h; ++k) next[i][k] += w * WH[j][k];
      }
    }
    H = next;
  }
  const Tensor& R = p.tensors[1 + 2 * c.layers];
  const Tensor& b = p.tensors[2 + 2 * c.layers];
  std::vector<double> y(c.out_dim);
  for (std::size_t d = 0; d < c.out_dim; ++d) {
    y[d] = b[d];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < h; ++k) y[d] += H[i][k] * R(k, d);
  }
  return y;
}

GraphState permute(const GraphState& g, const std::vector<std::size_t>& perm) {
  GraphState out = g;
  for (std::size_t i = 0; i < g.nodes(); ++i) {
    for (std::size_t c = 0; c < g.X.cols(); ++c) out.X(perm[i], c) = g.X(i, c);
    for (std::size_t j = 0; j < g.nodes(); ++j) out.E(perm[i], perm[j]) = g.E(i, j);
  }
  return out;
}

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(CrnForward, MatchesStraightLineImplementation) {
  for (auto mode : {crn::Attention::kSparse, crn::Attention::kDense})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = crn::CrnParams::init(small_config(mode), seed);
      const auto g = random_state(6, seed + 10);
      const auto got = crn::crn_forward(p, g), want = reference_forward(p, g);
      for (std::size_t d = 0; d < got.size(); ++d) EXPECT_NEAR(got[d], want[d], 1e-10);
    }
}

TEST(CrnForward, PermutationInvariant) {
  for (auto mode : {crn::Attention::kSparse, crn::Attention::kDense})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto p = crn::CrnParams::init(small_config(mode), seed);
      const auto g = random_state(6, seed);
      std::vector<std::size_t> perm(6);
      std::iota(perm.begin(), perm.end(), 0);
      auto rng = derive_stream(seed, "test.perm");
      std::shuffle(perm.begin(), perm.end(), rng);
      const auto a = crn::crn_forward(p, g), b = crn::crn_forward(p, permute(g, perm));
      for (std::size_t d = 0; d < a.size(); ++d) EXPECT_NEAR(a[d], b[d], 1e-12);
    }
}

TEST(CrnForward, SingleNodeZeroEdgesGivesBias) {
  // tanh(0) = 0 on the lone row, so the readout reduces to its bias.
  auto cfg = small_config();
  cfg.hidden = 3;
  cfg.layers = 1;
  auto p = crn::CrnParams::init(cfg, 0);
  p.tensors[1] = Tensor::identity(3);
  p.tensors.back() = Tensor::row({0.5, -1.0, 2.0});
  GraphState g{Tensor(1, diffusion::kChannels), Tensor(1, 1), 0.0};
  g.X(0, 0) = 1.0;
  EXPECT_EQ(crn::crn_forward(p, g), (std::vector<double>{0.5, -1.0, 2.0}));
}

TEST(CrnForward, DimensionMismatchIsAnError) {
  const auto p = crn::CrnParams::init(small_config(), 0);
  GraphState g{Tensor(3, 4), Tensor(3, 3), 0.0};
  EXPECT_THROW(crn::crn_forward(p, g), DimensionError);
  g = random_state(3, 1);
  EXPECT_THROW(crn::input_gradient(p, g, {1.0, 2.0}), DimensionError);
}

TEST(CrnGradients, ParametersMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) EXPECT_LT(gradcheck::crn_params(seed).result.max_rel_error, 1e-4);
}

TEST(InputGradient, MatchesFiniteDifferencesOnEveryCoordinate) {
  for (auto mode : {crn::Attention::kSparse, crn::Attention::kDense})
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto cfg = small_config(mode);
      const auto p = crn::CrnParams::init(cfg, seed);
      // Bond entries well above tau so perturbations never change the attention support.
      const auto g = random_state(4, seed + 20, 0.2);
      const std::vector<double> y{0.3, -0.2, 1.0};
      const auto grad = crn::input_gradient(p, g, y);
      auto loss = [&](const GraphState& s) {
        const auto out = crn::crn_forward(p, s);
        double v = 0;
        for (std::size_t d = 0; d < y.size(); ++d) v += (y[d] - out[d]) * (y[d] - out[d]);
        return v;
      };
      const double h = 1e-5;
      double worst = 0;
      auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); };
      for (std::size_t i = 0; i < g.X.size(); ++i) {
        auto up = g, dn = g;
        up.X[i] += h;
        dn.X[i] -= h;
        worst = std::max(worst, rel(grad.X[i], (loss(up) - loss(dn)) / (2 * h)));
      }
      // A symmetric perturbation of (i, j) and (j, i) sees twice the symmetrized gradient.
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) {
          auto up = g, dn = g;
          up.E(i, j) += h;
          up.E(j, i) += h;
          dn.E(i, j) -= h;
          dn.E(j, i) -= h;
          worst = std::max(worst, rel(2 * grad.E(i, j), (loss(up) - loss(dn)) / (2 * h)));
        }
      EXPECT_LT(worst, 1e-4) << "seed " << seed;
      EXPECT_NEAR(grad.value, loss(g), 1e-12);
      for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(grad.E(i, i), 0.0);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(grad.E(i, j), grad.E(j, i));
      }
    }
  EXPECT_LT(gradcheck::guidance_input(1).result.max_rel_error, 1e-4);
}

TEST(InputGradient, ZeroAtExactTarget) {
  const auto p = crn::CrnParams::init(small_config(), 3);
  const auto g = random_state(5, 3);
  const auto grad = crn::input_gradient(p, g, crn::crn_forward(p, g));
  EXPECT_EQ(grad.value, 0.0);
  for (double v : grad.X.values()) EXPECT_EQ(v, 0.0);
  for (double v : grad.E.values()) EXPECT_EQ(v, 0.0);
}

TEST(TrainCrn, MemorizesSingleMolecule) {
  crn::CrnTrainConfig cfg;
  cfg.crn = small_config();
  cfg.crn.max_nodes = 4;
  cfg.epochs = 600;
  cfg.batch_size = 1;
  cfg.learning_rate = 1e-2;
  const std::vector<double> y{0.5, -0.25, 1.0};
  crn::TrainLog log;
  const auto p = crn::train_crn({{mol::parse_smiles("CC=O"), y}}, cfg, &log);
  EXPECT_EQ(log.epoch_loss.size(), 600u);
  const auto g0 = diffusion::encode(mol::parse_smiles("CC=O"), 4);
  auto rng = derive_stream(1, "test.memo");
  double total = 0;
  for (int k = 0; k < 20; ++k)
    total += crn::crn_example_loss(p, diffusion::forward_perturb(g0, 0.01, cfg.schedule, rng), y);
  EXPECT_LT(total / 20, 1e-3);
}

TEST(TrainCrn, RejectsMismatchedTargets) {
  crn::CrnTrainConfig cfg;
  cfg.crn = small_config();
  EXPECT_THROW(crn::train_crn({{mol::parse_smiles("CC"), {1.0, 2.0}}}, cfg), DimensionError);
  EXPECT_THROW(crn::train_crn({}, cfg), Error);
}

class TrainedToyCrn : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_.crn = small_config();
    cfg_.crn.max_nodes = 5;
    cfg_.crn.hidden = 16;
    cfg_.crn.out_dim = 4;
    // A gentle schedule: under the sampler's default the noise swamps these small graphs.
    cfg_.schedule.beta_min = 0.01;
    cfg_.schedule.beta_max = 1.0;
    cfg_.epochs = 2000;
    cfg_.batch_size = 4;
    cfg_.learning_rate = 3e-3;
    cfg_.seed = 5;
    const std::vector<std::string> smiles{"C1CCCC1", "OCCO", "CC(C)(C)C", "C=CC=C"};
    for (std::size_t k = 0; k < smiles.size(); ++k) {
      std::vector<double> y(4, 0.0);
      y[k] = 2.0;
      pairs_.push_back({mol::parse_smiles(smiles[k]), y});
    }
    params_ = new crn::CrnParams(crn::train_crn(pairs_, cfg_));
  }
  static void TearDownTestSuite() { delete params_; }

  static crn::CrnTrainConfig cfg_;
  static std::vector<crn::TrainingPair> pairs_;
  static crn::CrnParams* params_;
};

crn::CrnTrainConfig TrainedToyCrn::cfg_;
std::vector<crn::TrainingPair> TrainedToyCrn::pairs_;
crn::CrnParams* TrainedToyCrn::params_ = nullptr;

TEST_F(TrainedToyCrn, LowNoiseProbesLandNearTheirOwnTarget) {
  // Two molecules, distant targets: nearest-target classification of t < 0.2 probes.
  std::size_t correct = 0, total = 0;
  auto rng = derive_stream(2, "test.probe");
  for (std::size_t k : {std::size_t{0}, std::size_t{1}}) {
    const auto g0 = diffusion::encode(pairs_[k].first, cfg_.crn.max_nodes);
    for (int i = 0; i < 200; ++i) {
      const double t = cfg_.schedule.eps + (0.2 - cfg_.schedule.eps) * uniform01(rng);
      const auto out = crn::crn_forward(*params_, diffusion::forward_perturb(g0, t, cfg_.schedule, rng));
      correct += distance(out, pairs_[k].second) < distance(out, pairs_[1 - k].second);
      ++total;
    }
  }
  EXPECT_GE(double(correct) / double(total), 0.95);
}

TEST_F(TrainedToyCrn, NoisyInputsMapNearTheCleanOutput) {
  std::vector<double> inter;
  for (std::size_t a = 0; a < pairs_.size(); ++a)
    for (std::size_t b = a + 1; b < pairs_.size(); ++b) inter.push_back(distance(pairs_[a].second, pairs_[b].second));
  std::nth_element(inter.begin(), inter.begin() + inter.size() / 2, inter.end());
  const double median = inter[inter.size() / 2];
  auto rng = derive_stream(3, "test.robust");
  double drift = 0;
  std::size_t n = 0;
  for (const auto& [m, y] : pairs_) {
    const auto g0 = diffusion::encode(m, cfg_.crn.max_nodes);
    const auto clean = crn::crn_forward(*params_, g0);
    for (int i = 0; i < 100; ++i) {
      const double t = cfg_.schedule.eps + (0.3 - cfg_.schedule.eps) * uniform01(rng);
      drift += distance(crn::crn_forward(*params_, diffusion::forward_perturb(g0, t, cfg_.schedule, rng)), clean);
      ++n;
    }
  }
  EXPECT_LT(drift / double(n), median);
}

TEST(TrainCrn, DeterministicAcrossJobs) {
  crn::CrnTrainConfig cfg;
  cfg.crn = small_config();
  cfg.crn.max_nodes = 4;
  cfg.epochs = 20;
  cfg.batch_size = 3;
  cfg.seed = 4;
  const std::vector<crn::TrainingPair> pairs{{mol::parse_smiles("CC"), {1, 0, 0}},
                                             {mol::parse_smiles("CO"), {0, 1, 0}},
                                             {mol::parse_smiles("C=O"), {0, 0, 1}},
                                             {mol::parse_smiles("CCC"), {1, 1, 0}}};
  const auto a = crn::train_crn(pairs, cfg);
  cfg.jobs = 4;
  EXPECT_TRUE(a == crn::train_crn(pairs, cfg));
}

TEST(CrnCheckpoint, RoundTripAndCorruption) {
  const auto p = crn::CrnParams::init(small_config(crn::Attention::kDense), 6);
  const auto bytes = crn::serialize(p);
  EXPECT_EQ(bytes.substr(0, 4), "KDCR");
  EXPECT_TRUE(crn::deserialize(bytes) == p);
  EXPECT_EQ(crn::serialize(crn::deserialize(bytes)), bytes);
  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(crn::deserialize(std::string_view(bytes).substr(0, cut)), Error);
  EXPECT_THROW(crn::deserialize(bytes + "x"), Error);
  const auto path = std::filesystem::temp_directory_path() / "kdream_crn.ckpt";
  crn::save(p, path.string());
  EXPECT_TRUE(crn::load(path.string()) == p);
  std::filesystem::remove(path);
}

TEST(AttentionMask, SparseKeepsSelfAndStrongBonds) {
  auto cfg = small_config();
  Tensor e(3, 3);
  e(0, 1) = e(1, 0) = 0.06;
  e(1, 2) = e(2, 1) = 0.05;
  const auto m = crn::attention_mask(cfg, e);
  EXPECT_EQ(m, Tensor(3, 3, std::vector<double>{1, 1, 0, 1, 1, 0, 0, 0, 1}));
  cfg.attention = crn::Attention::kDense;
  EXPECT_EQ(crn::attention_mask(cfg, e), Tensor(3, 3, 1.0));
}
