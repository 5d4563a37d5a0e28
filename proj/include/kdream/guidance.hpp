#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kdream/crn.hpp"
#include "kdream/diffusion.hpp"
#include "kdream/kg.hpp"
#include "kdream/kge.hpp"

namespace kdream::guidance {

/// Gaussian guidance around y: adds λ·∇log N(y; P_φ(G), σ_y²I) to the score.
struct GuidanceSpec {
  std::vector<double> y;
  double lambda_x = 0.0;
  double lambda_e = 0.0;
  double sigma_y2 = 1.0;

  void validate(std::size_t crn_dim) const;
};

enum class DomainMode { kSpan, kConvex };
DomainMode parse_domain_mode(const std::string& s);
std::string to_string(DomainMode m);

/// Known-drug embeddings, one row per drug (k×d).
struct DrugDomain {
  std::vector<std::vector<double>> basis;
  DomainMode mode = DomainMode::kSpan;
};

/// Basis from every entity tagged as a drug in `kg`, looked up by name in `table`.
DrugDomain drug_domain(const kg::KnowledgeGraph& kg, const kge::EmbeddingTable& table, DomainMode mode);

struct TargetPair {
  std::vector<double> relation;  // r_i
  std::vector<double> entity;    // t_i
};

struct Resolution {
  std::vector<double> y;
  /// y = Σ_k c_k B_k.
  std::vector<double> coefficients;
  /// Σ_i ‖y + r_i − t_i‖².
  double objective = 0;
  /// Projected-gradient iterations (convex mode only).
  std::size_t iterations = 0;
};

inline constexpr std::size_t kConvexMaxIterations = 500;
inline constexpr double kConvexTolerance = 1e-10;

/// argmin over the domain of Σ_i ‖d + r_i − t_i‖². Span mode solves (m·B Bᵀ)c = B Σ(t_i − r_i) with the
/// minimum-norm solution; convex mode runs projected gradient on the simplex.
Resolution resolve_target_multi(const DrugDomain& domain, const std::vector<TargetPair>& targets);

/// (1−α)y1 + αy2 for α in [0, 1].
std::vector<double> interpolate(const std::vector<double>& y1, const std::vector<double>& y2, double alpha);

/// Score correction −λ/(2σ_y²)·∇‖y − P_φ(G)‖², applied to X and E separately.
class KnowledgeGuidance : public diffusion::ScoreCorrection {
 public:
  KnowledgeGuidance(const crn::CrnParams& crn, GuidanceSpec spec);
  void apply(const diffusion::GraphState& g, diffusion::ScoreNetwork::Score& score) const override;
  const GuidanceSpec& spec() const { return spec_; }

 private:
  const crn::CrnParams& crn_;
  GuidanceSpec spec_;
};

diffusion::ScoreNetwork::Score guided_score(const diffusion::ScoreNetwork& net, const crn::CrnParams& crn,
                                            const GuidanceSpec& spec, const diffusion::GraphState& g);

struct GenerateConfig {
  diffusion::SamplerConfig sampler;
  /// Nodes per chain; 0 means the score network's max_nodes.
  std::size_t n_atoms = 0;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  unsigned jobs = 1;
};

struct GenerationRecord {
  std::size_t chain = 0;
  /// Seed of the chain's RNG stream.
  std::uint64_t seed = 0;
  double lambda_x = 0;
  double lambda_e = 0;
  std::string smiles;
  bool valid = false;
  std::size_t n_atoms = 0;
  /// ‖y − P_φ(G_0)‖ at the final continuous state; absent without guidance.
  std::optional<double> distance;
  /// Non-empty when the chain failed.
  std::string error;
  mol::MolecularGraph molecule;
};

/// Stream seed of chain i; chains are independent of scheduling and of each other.
std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain);

/// `count` independent chains. With `crn` and `spec` both set the score is guided; chain failures
/// are recorded in the record instead of aborting the run.
std::vector<GenerationRecord> generate(const diffusion::ScoreNetwork& net, const crn::CrnParams* crn,
                                       const GuidanceSpec* spec, const GenerateConfig& cfg);

/// `smiles⟶valid⟶n_atoms⟶seed` with a header line.
std::string generation_tsv(const std::vector<GenerationRecord>& records);

/// Target spec file: `target⟶entity⟶relation` lines (resolved jointly), or one
/// `interp⟶y1-source⟶y2-source⟶α` line. A source is `entity@relation` (single-target
/// resolution) or a bare entity name (its embedding).
struct TargetRequest {
  std::vector<std::pair<std::string, std::string>> targets;  // (entity, relation)
  struct Interp {
    std::string y1, y2;
    double alpha = 0.5;
  };
  std::optional<Interp> interp;
};

TargetRequest parse_target_spec(std::string_view text);

/// Resolves a request against a trained embedding table and drug domain.
std::vector<double> resolve_request(const TargetRequest& req, const kge::EmbeddingTable& table,
                                    const DrugDomain& domain);

}  // namespace kdream::guidance
