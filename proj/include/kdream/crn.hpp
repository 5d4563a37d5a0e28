#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kdream/autodiff.hpp"
#include "kdream/diffusion.hpp"
#include "kdream/molgraph.hpp"
#include "kdream/optim.hpp"

namespace kdream::crn {

enum class Attention : std::uint8_t { kSparse, kDense };
Attention parse_attention(const std::string& s);
std::string to_string(Attention a);

/// Activation ids stored in checkpoints.
enum class Activation : std::uint8_t { kIdentity = 0, kTanh = 1, kLeakyRelu02 = 2 };

struct CrnConfig {
  std::size_t layers = 3;
  std::size_t hidden = 64;
  std::size_t out_dim = 64;
  std::size_t channels = diffusion::kChannels;
  std::size_t max_nodes = 16;
  /// Sparse attention keeps j with E_ij > tau, plus i itself.
  double tau = 0.05;
  Attention attention = Attention::kSparse;

  void validate() const;
  friend bool operator==(const CrnConfig&, const CrnConfig&) = default;
};

/// Tensors in order: W0 (M×h), then per layer W (h×h) and a (2h×1), then readout R (h×d), b (1×d).
struct CrnParams {
  CrnConfig config;
  std::vector<ad::Tensor> tensors;

  static CrnParams init(const CrnConfig& cfg, std::uint64_t seed);
  static std::vector<std::string> names(const CrnConfig& cfg);
  friend bool operator==(const CrnParams&, const CrnParams&) = default;
};

/// Attention support for E: E_ij > tau or i = j (all ones in dense mode).
ad::Tensor attention_mask(const CrnConfig& cfg, const ad::Tensor& E);

/// Builds ŷ (1×d) on `tape` from parameter nodes in CrnParams::tensors order.
ad::Var crn_forward(const CrnConfig& cfg, const std::vector<ad::Var>& params, ad::Var X, ad::Var E);

/// ŷ = P_φ(g) as a length-d vector.
std::vector<double> crn_forward(const CrnParams& p, const diffusion::GraphState& g);

struct InputGradient {
  ad::Tensor X;
  /// Symmetric with a zero diagonal.
  ad::Tensor E;
  /// ‖y − P_φ(g)‖² at g.
  double value = 0;
};

/// Gradient of ‖y − P_φ(g)‖² with respect to X and E.
InputGradient input_gradient(const CrnParams& p, const diffusion::GraphState& g, const std::vector<double>& y);

/// ‖P_φ(G_t) − y‖² with parameter gradients in `grads` when non-null.
double crn_example_loss(const CrnParams& p, const diffusion::GraphState& gt, const std::vector<double>& y,
                        std::vector<ad::Tensor>* grads = nullptr);

struct CrnTrainConfig {
  CrnConfig crn;
  diffusion::NoiseSchedule schedule;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  optim::Kind optimizer = optim::Kind::kAdam;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct TrainLog {
  std::vector<double> epoch_loss;
};

using TrainingPair = std::pair<mol::MolecularGraph, std::vector<double>>;

/// Each example: t ~ U(eps, 1), G_t from the forward marginal of the clean molecule, target y.
CrnParams train_crn(const std::vector<TrainingPair>& pairs, const CrnTrainConfig& cfg, TrainLog* log = nullptr);

std::string serialize(const CrnParams& p);
CrnParams deserialize(std::string_view bytes);
void save(const CrnParams& p, const std::string& path);
CrnParams load(const std::string& path);

}  // namespace kdream::crn
