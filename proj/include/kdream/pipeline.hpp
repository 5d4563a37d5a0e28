#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kdream/config.hpp"

namespace kdream::pipeline {

/// Files read and written by one subcommand, plus a human-readable summary.
struct Artifacts {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string summary;
};

/// Normalizes and splits a triple file into out_dir/{all,train,valid,test,roles}.tsv.
Artifacts kg_build(const config::RunConfig& cfg, const std::string& triples, const std::string& roles,
                   const std::string& out_dir);

/// Trains on kg_dir/train.tsv; writes the embedding file and `<out>.loss.tsv`.
Artifacts kge_train(const config::RunConfig& cfg, const std::string& kg_dir, const std::string& out);

/// Filtered link prediction on kg_dir/<split>.tsv against kg_dir/all.tsv.
Artifacts kge_eval(const config::RunConfig& cfg, const std::string& kg_dir, const std::string& embeddings,
                   const std::string& split, const std::string& out);

Artifacts diff_train(const config::RunConfig& cfg, const std::string& molecules, const std::string& out,
                     unsigned jobs);

/// Pairs file lines: `entity⟶smiles`; the entity's embedding is the regression target.
Artifacts crn_train(const config::RunConfig& cfg, const std::string& embeddings, const std::string& pairs,
                    const std::string& out, unsigned jobs);

struct GuidanceInputs {
  std::string crn;
  std::string embeddings;
  std::string kg_dir;
  /// Target spec file, `entity@relation`, or an entity resolved with guidance.relation.
  std::string target;
};

/// Writes the generation TSV and `<out>.provenance.jsonl`.
Artifacts generate(const config::RunConfig& cfg, const std::string& score, const std::optional<GuidanceInputs>& guide,
                   const std::string& out, unsigned jobs);

/// Guided generation toward (1−α)·y1 + α·y2, sources as in target spec files.
Artifacts interpolate(const config::RunConfig& cfg, const std::string& score, const GuidanceInputs& base,
                      const std::string& y1, const std::string& y2, double alpha, const std::string& out,
                      unsigned jobs);

struct EvaluateInputs {
  std::vector<std::string> generated;
  std::string reference;
  std::string actives;
  /// `scorer=column`, scorer in proxy:qed, proxy:sa.
  std::vector<std::string> scorers;
  /// `column=command template`.
  std::vector<std::string> adapters;
  /// `column<=value` rules for the joint threshold proportion.
  std::vector<std::string> thresholds;
  std::string scatter_x, scatter_y;
  std::string histogram;
  bool negate = false;
};

/// Writes `<prefix>.tsv`, `<prefix>.jsonl`, `<prefix>.filtered.tsv`, `<prefix>.stats.tsv` and the
/// optional plot exports.
Artifacts evaluate(const config::RunConfig& cfg, const EvaluateInputs& in, const std::string& prefix, unsigned jobs);

/// Finite-difference checks; throws a numerical error after writing the report when any check fails.
Artifacts gradcheck(const config::RunConfig& cfg, const std::string& module, const std::string& out);

inline constexpr double kGradcheckTolerance = 1e-4;

/// 16 hex digits of FNV-1a over the file bytes.
std::string hash_file(const std::string& path);

/// JSON manifest: command, seed, resolved config, input/output hashes, start time, wall time.
std::string manifest_json(const std::string& command, const config::RunConfig& cfg, const Artifacts& a,
                          const std::string& started, double wall_seconds);

}  // namespace kdream::pipeline
