#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdream/crn.hpp"
#include "kdream/diffusion.hpp"
#include "kdream/eval.hpp"
#include "kdream/guidance.hpp"
#include "kdream/kg.hpp"
#include "kdream/kge.hpp"

namespace kdream::config {

struct KgSection {
  kg::SplitRatios ratios;
};

struct KgeSection {
  std::size_t dim = 512;
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double margin = 1.0;
  std::size_t negatives = 1;
};

struct DiffusionSection {
  diffusion::ScoreNetConfig net;
  diffusion::NoiseSchedule schedule;
  std::size_t iterations = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  optim::Kind optimizer = optim::Kind::kAdam;
  double ema_decay = 0.999;
  double snr = 0.16;
  std::size_t corrector_steps = 1;
  double ood = 0.0;
};

struct CrnSection {
  std::size_t layers = 3;
  std::size_t hidden = 64;
  double tau = 0.05;
  crn::Attention attention = crn::Attention::kSparse;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  optim::Kind optimizer = optim::Kind::kAdam;
  /// Training noise range; each follows the diffusion schedule when unset.
  std::optional<double> beta_min;
  std::optional<double> beta_max;
};

struct GuidanceSection {
  double lambda_x = 0.0;
  /// Follows lambda_x when unset.
  std::optional<double> lambda_e;
  double sigma_y2 = 1.0;
  guidance::DomainMode domain = guidance::DomainMode::kSpan;
  std::string relation = "drug_protein";
  std::size_t count = 100;
  std::size_t n_atoms = 0;
};

struct EvalSection {
  std::optional<double> qed_min = 0.5;
  std::optional<double> sa_min = 0.44;
  eval::SaScale sa_scale = eval::SaScale::kNormalized;
  std::optional<double> max_similarity = 0.4;
  double top_fraction = 0.05;
  double adapter_timeout = 600;
};

struct RunConfig {
  std::uint64_t seed = 0;
  KgSection kg;
  KgeSection kge;
  DiffusionSection diffusion;
  CrnSection crn;
  GuidanceSection guidance;
  EvalSection eval;

  /// Sets `section.key` (or `seed`) from text; unknown keys and malformed values throw.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();
  void validate() const;

  kge::KgeTrainConfig kge_train() const;
  diffusion::ScoreTrainConfig score_train(unsigned jobs) const;
  diffusion::SamplerConfig sampler() const;
  crn::CrnTrainConfig crn_train(std::size_t out_dim, unsigned jobs) const;
  eval::FilterConfig filters() const;
  double lambda_e() const { return guidance.lambda_e.value_or(guidance.lambda_x); }
  diffusion::NoiseSchedule crn_schedule() const;
};

/// `[section]` headers with `key = value` lines; `#` comments. Keys before any header are global.
RunConfig parse(std::string_view text);
RunConfig load(const std::string& path);
std::string write(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace kdream::config
