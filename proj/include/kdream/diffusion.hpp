#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdream/autodiff.hpp"
#include "kdream/molgraph.hpp"
#include "kdream/optim.hpp"
#include "kdream/rng.hpp"

namespace kdream::diffusion {

/// Element channels plus a trailing "no atom" padding channel.
inline constexpr std::size_t kChannels = mol::kElementCount + 1;
inline constexpr std::size_t kNoAtomChannel = mol::kElementCount;

/// Continuous graph: X is N×M relaxed one-hot atoms, E is N×N bond order / 3.
/// E is kept symmetric with a zero diagonal.
struct GraphState {
  ad::Tensor X;
  ad::Tensor E;
  double t = 0.0;

  std::size_t nodes() const { return X.rows(); }
  friend bool operator==(const GraphState&, const GraphState&) = default;
};

/// Molecule at t=0, padded with "no atom" rows up to n_max. Charged atoms cannot be
/// represented and are rejected.
GraphState encode(const mol::MolecularGraph& m, std::size_t n_max);

/// Argmax atom channel per node (ties to the lowest channel; "no atom" drops the node),
/// bond order round(3·clamp(E,0,1)) with halves rounded down, then the largest component.
mol::MolecularGraph quantize(const GraphState& g);

/// Variance-preserving SDE with linear β(t).
struct NoiseSchedule {
  double beta_min = 0.1;
  double beta_max = 10.0;
  std::size_t steps = 200;
  /// Smallest diffusion time used in training and sampling.
  double eps = 1e-3;

  void validate() const;
  double beta(double t) const { return beta_min + t * (beta_max - beta_min); }
  double beta_integral(double t) const { return beta_min * t + 0.5 * (beta_max - beta_min) * t * t; }
  /// Signal scale α(t) = exp(−½∫₀ᵗβ).
  double alpha(double t) const;
  /// Noise scale σ(t) = √(1 − α(t)²).
  double sigma(double t) const;

  friend bool operator==(const NoiseSchedule&, const NoiseSchedule&) = default;
};

struct Noise {
  ad::Tensor X;
  ad::Tensor E;
};

/// Standard normal X noise and symmetric, zero-diagonal E noise.
Noise sample_noise(std::size_t nodes, std::size_t channels, Rng& rng);
ad::Tensor symmetric_normal(std::size_t n, Rng& rng);

/// G_t = α(t)·G_0 + σ(t)·ξ for the given noise.
GraphState perturb_with(const GraphState& g0, double t, const NoiseSchedule& s, const Noise& xi);
/// Closed-form VP marginal sample; t must lie in (0, 1].
GraphState forward_perturb(const GraphState& g0, double t, const NoiseSchedule& s, Rng& rng);

struct ScoreNetConfig {
  std::size_t layers = 3;
  std::size_t hidden = 64;
  std::size_t time_features = 16;
  std::size_t max_nodes = 16;
  std::size_t channels = kChannels;

  friend bool operator==(const ScoreNetConfig&, const ScoreNetConfig&) = default;
};

/// Sinusoidal time features, 1×count.
ad::Tensor time_features(double t, std::size_t count);

/// Message-passing network predicting the noise ε̂ for X and E; the score is −ε̂/σ(t).
class ScoreNetwork {
 public:
  ScoreNetwork() = default;
  ScoreNetwork(ScoreNetConfig cfg, NoiseSchedule schedule, std::uint64_t seed);

  const ScoreNetConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  std::vector<ad::Tensor>& params() { return params_; }
  const std::vector<ad::Tensor>& params() const { return params_; }
  static std::vector<std::string> param_names(const ScoreNetConfig& cfg);

  struct Heads {
    ad::Var eps_x;  // N×M
    ad::Var eps_e;  // N×N, symmetric, zero diagonal
  };
  /// Builds the forward pass on `tape`; `param_vars` are the parameter nodes in params() order.
  Heads forward(ad::Tape& tape, const std::vector<ad::Var>& param_vars, ad::Var X, ad::Var E, double t) const;

  struct Score {
    ad::Tensor X;
    ad::Tensor E;
  };
  /// Score estimate s_θ(G_t, t) at g.t.
  Score score(const GraphState& g) const;

  friend bool operator==(const ScoreNetwork&, const ScoreNetwork&) = default;

 private:
  ScoreNetConfig cfg_;
  NoiseSchedule schedule_;
  std::vector<ad::Tensor> params_;
};

/// Weighted denoising score matching for one example with fixed t and noise, λ(t)=σ(t)²:
/// ‖σ(t)·s_θ(G_t,t) + ξ‖². Parameter gradients are written to `grads` when non-null.
double dsm_example_loss(const ScoreNetwork& net, const GraphState& g0, double t, const Noise& xi,
                        std::vector<ad::Tensor>* grads = nullptr);

/// Batch mean of dsm_example_loss with t ~ U(eps, 1) and fresh noise from rng.
double dsm_loss(const ScoreNetwork& net, std::span<const GraphState> batch, Rng& rng,
                std::vector<ad::Tensor>* grads = nullptr);

struct ScoreTrainConfig {
  ScoreNetConfig net;
  NoiseSchedule schedule;
  std::size_t iterations = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  optim::Kind optimizer = optim::Kind::kAdam;
  /// 0 disables the parameter average.
  double ema_decay = 0.999;
  std::size_t log_every = 100;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct TrainLog {
  /// Mean loss per logging window.
  std::vector<double> window_loss;
};

ScoreNetwork train_score(const std::vector<mol::MolecularGraph>& dataset, const ScoreTrainConfig& cfg,
                         TrainLog* log = nullptr);

/// Additive adjustment of the score during sampling (knowledge guidance plugs in here).
class ScoreCorrection {
 public:
  virtual ~ScoreCorrection() = default;
  virtual void apply(const GraphState& g, ScoreNetwork::Score& score) const = 0;
};

struct SamplerConfig {
  std::size_t steps = 200;
  double snr = 0.16;
  std::size_t corrector_steps = 1;
  /// Scales the prior standard deviation at t=1 by (1 + ood).
  double ood = 0.0;
};

using StepObserver = std::function<void(std::size_t step, const GraphState&)>;

/// Predictor–corrector sampler for the reverse SDE from t=1 to eps: Langevin corrector
/// then Euler–Maruyama predictor per step, E symmetrized after every update. Returns the
/// noise-free mean of the last predictor step.
GraphState reverse_sample(const ScoreNetwork& net, std::size_t n_atoms, const SamplerConfig& cfg, Rng& rng,
                          const ScoreCorrection* correction = nullptr, const StepObserver& observer = {});

std::string serialize(const ScoreNetwork& net);
ScoreNetwork deserialize(std::string_view bytes);
void save(const ScoreNetwork& net, const std::string& path);
ScoreNetwork load(const std::string& path);

}  // namespace kdream::diffusion
