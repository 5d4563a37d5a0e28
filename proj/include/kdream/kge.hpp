#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "kdream/kg.hpp"
#include "kdream/rng.hpp"

namespace kdream::kge {

/// Entity and relation vectors, row-major, stored as f32 to match the on-disk format.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> entity_names, std::vector<std::string> relation_names, std::size_t dim);

  std::size_t dim() const { return dim_; }
  std::size_t entity_count() const { return entity_names_.size(); }
  std::size_t relation_count() const { return relation_names_.size(); }
  const std::vector<std::string>& entity_names() const { return entity_names_; }
  const std::vector<std::string>& relation_names() const { return relation_names_; }

  std::span<float> entity(std::size_t e) { return {entity_vecs_.data() + e * dim_, dim_}; }
  std::span<const float> entity(std::size_t e) const { return {entity_vecs_.data() + e * dim_, dim_}; }
  std::span<float> relation(std::size_t r) { return {relation_vecs_.data() + r * dim_, dim_}; }
  std::span<const float> relation(std::size_t r) const { return {relation_vecs_.data() + r * dim_, dim_}; }

  std::vector<double> entity_vector(std::size_t e) const;
  std::vector<double> relation_vector(std::size_t r) const;
  std::size_t entity_index(const std::string& name) const;
  std::size_t relation_index(const std::string& name) const;

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::vector<float> entity_vecs_;
  std::vector<float> relation_vecs_;
};

struct KgeTrainConfig {
  std::size_t dim = 512;
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double margin = 1.0;
  std::size_t negatives_per_positive = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// ‖e_s + e_r − e_o‖₂, lower is better.
double transe_score(const EmbeddingTable& table, const kg::Triple& t);

/// Membership index over a triple set.
class TripleIndex {
 public:
  explicit TripleIndex(const std::vector<kg::Triple>& triples) : set_(triples.begin(), triples.end()) {}
  bool contains(const kg::Triple& t) const { return set_.count(t) != 0; }

 private:
  std::unordered_set<kg::Triple, kg::TripleHash> set_;
};

struct NegativeStats {
  std::size_t drawn = 0;
  std::size_t resampled = 0;
  /// Negatives accepted unfiltered because the retry cap was reached.
  std::size_t cap_warnings = 0;
};

inline constexpr std::size_t kNegativeRetryCap = 100;

/// sLCWA corruption: per negative, a coin picks head or tail and the slot is replaced by
/// a uniformly drawn different entity. Candidates found in `known` are redrawn up to
/// kNegativeRetryCap times.
std::vector<kg::Triple> sample_negatives_slcwa(const TripleIndex& known, std::size_t entity_count,
                                               const kg::Triple& t, std::size_t k, Rng& rng,
                                               NegativeStats* stats = nullptr);

/// Double-precision working copy used by the trainer and the gradient checks.
struct TranseParams {
  std::size_t dim = 0;
  std::vector<double> entities;   // |E|×d
  std::vector<double> relations;  // |R|×d

  std::span<double> entity(std::size_t e) { return {entities.data() + e * dim, dim}; }
  std::span<const double> entity(std::size_t e) const { return {entities.data() + e * dim, dim}; }
  std::span<double> relation(std::size_t r) { return {relations.data() + r * dim, dim}; }
  std::span<const double> relation(std::size_t r) const { return {relations.data() + r * dim, dim}; }
};

/// max(0, γ + score(pos) − score(neg)). When `grad` is non-null (same layout as `p`),
/// the subgradient is accumulated into it.
double margin_pair_loss(const TranseParams& p, const kg::Triple& pos, const kg::Triple& neg, double margin,
                        TranseParams* grad = nullptr);

struct TrainLog {
  std::vector<double> epoch_loss;
  NegativeStats negatives;
};

/// Called after every epoch with the (renormalised) working parameters.
using EpochCallback = std::function<void(std::size_t epoch, const TranseParams&)>;

EmbeddingTable train_transe(const kg::KnowledgeGraph& kg, const KgeTrainConfig& cfg, TrainLog* log = nullptr,
                            const EpochCallback& on_epoch = {});

struct LinkPredictionMetrics {
  double mrr = 0;
  double hits1 = 0;
  double hits10 = 0;
  /// Filtered rank per query: tail query then head query for each test triple.
  std::vector<double> ranks;
};

LinkPredictionMetrics evaluate_link_prediction(const EmbeddingTable& table, const kg::KnowledgeGraph& test,
                                               const kg::KnowledgeGraph& all);

std::string serialize(const EmbeddingTable& table);
EmbeddingTable deserialize(std::string_view bytes);
void save_embeddings(const EmbeddingTable& table, const std::string& path);
EmbeddingTable load_embeddings(const std::string& path);

}  // namespace kdream::kge
