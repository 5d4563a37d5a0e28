#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kdream/molgraph.hpp"

namespace kdream::eval {

using Column = std::vector<std::optional<double>>;

/// Rectangular table of named scores, one row per molecule. Missing values stay explicit.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  explicit ScoreMatrix(std::vector<std::string> molecules) : molecules_(std::move(molecules)) {}

  std::size_t rows() const { return molecules_.size(); }
  const std::vector<std::string>& molecules() const { return molecules_; }
  const std::vector<std::string>& columns() const { return names_; }

  /// Adds or replaces a column; its length must equal rows().
  void set_column(const std::string& name, Column values);
  bool has_column(const std::string& name) const;
  /// Throws naming the column when absent.
  const Column& column(const std::string& name) const;

 private:
  std::vector<std::string> molecules_;
  std::vector<std::string> names_;
  std::vector<Column> columns_;
};

inline constexpr double kNoveltyThreshold = 0.4;

struct MetricsReport {
  std::size_t total = 0;
  std::size_t valid = 0;
  double validity = 0;
  /// Unique canonical keys over valid molecules; absent when nothing is valid.
  std::optional<double> uniqueness;
  /// Valid molecules whose max Tanimoto to the reference is below 0.4; absent when nothing is valid.
  std::optional<double> novelty;
  /// Columns "valid" (0/1) and "max_sim_ref" per molecule.
  ScoreMatrix per_molecule;
};

MetricsReport compute_metrics(const std::vector<mol::MolecularGraph>& mols,
                              const std::vector<mol::MolecularGraph>& reference);

/// Max Tanimoto similarity of each molecule to `actives`; missing for empty molecules.
Column max_tanimoto(const std::vector<mol::MolecularGraph>& mols, const std::vector<mol::MolecularGraph>& actives);

enum class SaScale { kNormalized, kRaw };

struct FilterConfig {
  /// Keep score ≥ qed_min from column "qed".
  std::optional<double> qed_min = 0.5;
  /// Keep normalized SA ≥ sa_min from column "sa".
  std::optional<double> sa_min = 0.44;
  SaScale sa_scale = SaScale::kNormalized;
  /// Keep value < max_similarity from column "max_sim_actives".
  std::optional<double> max_similarity = 0.4;

  static FilterConfig disabled() { return {std::nullopt, std::nullopt, SaScale::kNormalized, std::nullopt}; }
};

/// (10 − raw) / 9 for raw 1–10 synthetic accessibility scores.
double normalize_sa(double raw);

struct FilterResult {
  std::vector<std::size_t> kept;
  /// Rows failing each filter, counted independently; a missing value fails its filter.
  std::map<std::string, std::size_t> rejected;
};

FilterResult apply_filters(const ScoreMatrix& scores, const FilterConfig& cfg);

struct ExternalConfig {
  double timeout_seconds = 600;
  unsigned jobs = 1;
};

struct ExternalResult {
  Column scores;
  std::vector<std::string> diagnostics;
};

/// Runs a shell command template with `{input}` (one SMILES per line) and `{output}` (one real
/// per line, `NA` for missing). Timeouts and nonzero exits leave the batch's scores missing.
ExternalResult external_score(const std::string& command_template, const std::vector<std::string>& smiles,
                              const ExternalConfig& cfg = {});

/// Simplified stand-ins for drug-likeness and synthetic accessibility; not publication grade.
double proxy_qed(const mol::MolecularGraph& g);
double proxy_sa(const mol::MolecularGraph& g);

/// Scorer by name: `proxy:qed`, `proxy:sa`. Missing for invalid molecules.
Column proxy_score(const std::string& name, const std::vector<mol::MolecularGraph>& mols);

/// Fraction of rows meeting every (column ≤ threshold) simultaneously; missing values fail.
double threshold_proportion(const ScoreMatrix& scores, const std::vector<std::pair<std::string, double>>& thresholds);

std::string report_tsv(const MetricsReport& report, const ScoreMatrix& scores);
std::string report_jsonl(const MetricsReport& report, const ScoreMatrix& scores);

/// `lambda⟶bin_lo⟶bin_hi⟶count` for each guidance weight over a shared binning.
std::string histogram_tsv(const std::vector<std::pair<double, std::vector<double>>>& by_lambda, std::size_t bins,
                          bool negate);
/// `x⟶y` pairs of two columns, rows with a missing value skipped.
std::string scatter_tsv(const ScoreMatrix& scores, const std::string& x, const std::string& y, bool negate);

}  // namespace kdream::eval
