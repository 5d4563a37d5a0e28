#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "kdream/binio.hpp"
#include "kdream/config.hpp"
#include "kdream/crn.hpp"
#include "kdream/diffusion.hpp"
#include "kdream/eval.hpp"
#include "kdream/guidance.hpp"
#include "kdream/kge.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace kdream;

namespace {

std::string read(const fs::path& p) { return binio::read_file(p.string()); }

// Runs the CLI with stdout and stderr captured; returns the exit status.
int kdream_cli(const std::string& args, std::string* output = nullptr, const std::string& env = "") {
  const auto log = fs::temp_directory_path() / ("kdream_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = env + " " + KDREAM_CLI + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (output) *output = read(log);
  fs::remove(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json manifest_without_time(const fs::path& p) {
  auto j = nlohmann::json::parse(read(p));
  j.erase("started");
  j.erase("wall_seconds");
  return j;
}

class Pipeline : public ::testing::Test {
 protected:
  static fs::path dir_;

  static fs::path path(const std::string& name) { return dir_ / name; }
  static std::string p(const std::string& name) { return path(name).string(); }

  // kg build → kge train → kge eval → diff train → crn train → generate → evaluate, all into `prefix`.
  static void run_pipeline(const std::string& prefix, unsigned jobs) {
    const std::string common = "--config " + p("run.cfg") + " --jobs " + std::to_string(jobs) + " ";
    std::string out;
    auto step = [&](const std::string& args) {
      if (::testing::Test::HasFatalFailure()) return;
      ASSERT_EQ(kdream_cli(common + args, &out), 0) << args << "\n" << out;
    };
    step("kg build --triples " + p("triples.tsv") + " --roles " + p("roles.tsv") + " --out " + p(prefix + "kg"));
    step("kge train --kg " + p(prefix + "kg") + " --out " + p(prefix + "emb.kdem"));
    step("kge eval --kg " + p(prefix + "kg") + " --embeddings " + p(prefix + "emb.kdem") + " --out " +
         p(prefix + "lp.tsv"));
    step("diff train --molecules " + p("molecules.smi") + " --out " + p(prefix + "score.kdsn"));
    step("crn train --embeddings " + p(prefix + "emb.kdem") + " --pairs " + p("pairs.tsv") + " --out " +
         p(prefix + "crn.kdcr"));
    step("generate --score " + p(prefix + "score.kdsn") + " --out " + p(prefix + "plain.tsv"));
    step("generate --score " + p(prefix + "score.kdsn") + " --crn " + p(prefix + "crn.kdcr") + " --embeddings " +
         p(prefix + "emb.kdem") + " --kg " + p(prefix + "kg") + " --target COX1 --lambda-x 0 --out " +
         p(prefix + "zero.tsv"));
    step("generate --score " + p(prefix + "score.kdsn") + " --crn " + p(prefix + "crn.kdcr") + " --embeddings " +
         p(prefix + "emb.kdem") + " --kg " + p(prefix + "kg") + " --target COX1@drug_protein --lambda-x 0.5 --out " +
         p(prefix + "guided.tsv"));
    step("interpolate --score " + p(prefix + "score.kdsn") + " --crn " + p(prefix + "crn.kdcr") + " --embeddings " +
         p(prefix + "emb.kdem") + " --kg " + p(prefix + "kg") +
         " --y1 COX1@drug_protein --y2 GABA@drug_protein --alpha 0.5 --lambda-x 0.5 --out " + p(prefix + "interp.tsv"));
    step("evaluate --generated " + p(prefix + "plain.tsv") + " --generated " + p(prefix + "guided.tsv") +
         " --reference " + p("molecules.smi") + " --actives " + p("molecules.smi") +
         " --scorer proxy:qed=qed --scorer proxy:sa=sa --histogram qed --scatter-x qed --scatter-y sa"
         " --threshold 'qed<=0.9' --out " + p(prefix + "eval"));
  }

  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("kdream_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    oracle::write_toy_pipeline_inputs(dir_.string());
    run_pipeline("a_", 1);
    if (!::testing::Test::HasFatalFailure()) run_pipeline("b_", 3);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
};

fs::path Pipeline::dir_;

}  // namespace

TEST_F(Pipeline, EveryStepWritesArtifactsAndManifests) {
  for (const char* f : {"a_kg/all.tsv", "a_kg/train.tsv", "a_kg/roles.tsv", "a_kg/manifest.json", "a_emb.kdem",
                        "a_emb.kdem.loss.tsv", "a_lp.tsv", "a_score.kdsn", "a_crn.kdcr", "a_plain.tsv",
                        "a_plain.tsv.provenance.jsonl", "a_guided.tsv.manifest.json", "a_interp.tsv.target.tsv",
                        "a_eval.tsv", "a_eval.jsonl", "a_eval.filtered.tsv", "a_eval.stats.tsv", "a_eval.hist.tsv",
                        "a_eval.scatter.tsv", "a_eval.manifest.json"})
    EXPECT_TRUE(fs::exists(path(f))) << f;
  const auto m = nlohmann::json::parse(read(path("a_score.kdsn.manifest.json")));
  EXPECT_EQ(m["command"], "diff train");
  EXPECT_EQ(m["seed"], 11);
  EXPECT_EQ(m["inputs"][0]["path"], p("molecules.smi"));
  EXPECT_EQ(m["outputs"][0]["fnv1a64"].get<std::string>().size(), 16u);
  EXPECT_NE(m["config"].get<std::string>().find("iterations = 40"), std::string::npos);
  EXPECT_TRUE(m.contains("started"));
  EXPECT_EQ(read(path("a_plain.tsv")).substr(0, 26), "smiles\tvalid\tn_atoms\tseed\n");
}

TEST_F(Pipeline, ArtifactsAreIdenticalAcrossJobCounts) {
  for (const char* f : {"kg/all.tsv", "kg/test.tsv", "emb.kdem", "lp.tsv", "score.kdsn", "crn.kdcr", "plain.tsv",
                        "zero.tsv", "guided.tsv", "guided.tsv.provenance.jsonl", "interp.tsv", "eval.tsv",
                        "eval.jsonl", "eval.stats.tsv", "eval.hist.tsv"})
    EXPECT_EQ(read(path(std::string("a_") + f)), read(path(std::string("b_") + f))) << f;
  // Manifests match apart from timestamps and the paths they name.
  auto a = manifest_without_time(path("a_guided.tsv.manifest.json"));
  auto b = manifest_without_time(path("b_guided.tsv.manifest.json"));
  for (auto* j : {&a, &b})
    for (const char* side : {"inputs", "outputs"})
      for (auto& f : (*j)[side]) f.erase("path");
  EXPECT_EQ(a, b);
}

TEST_F(Pipeline, ZeroGuidanceEqualsUnconditionalSampling) {
  EXPECT_EQ(read(path("a_zero.tsv")), read(path("a_plain.tsv")));
}

TEST_F(Pipeline, MatchesScriptedLibraryInvocation) {
  const auto cfg = config::parse(oracle::kToyPipelineConfig);
  // Embeddings: TransE on train.tsv over the all.tsv vocabulary.
  auto all = kg::load_triples(p("a_kg/all.tsv"));
  kg::load_roles(all, p("a_kg/roles.tsv"));
  const auto train = kg::load_triples(p("a_kg/train.tsv"));
  std::vector<kg::Triple> mapped;
  for (const auto& t : train.triples())
    mapped.push_back({*all.entities().find(train.entities().name(t.head)),
                      *all.relations().find(train.relations().name(t.relation)),
                      *all.entities().find(train.entities().name(t.tail))});
  const auto table = kge::train_transe(all.with_triples(mapped), cfg.kge_train());
  const auto emb = path("lib_emb.kdem");
  kge::save_embeddings(table, emb.string());
  EXPECT_EQ(read(emb), read(path("a_emb.kdem")));

  const auto net = diffusion::train_score(mol::load_smiles_file(p("molecules.smi")), cfg.score_train(1));
  const auto score = path("lib_score.kdsn");
  diffusion::save(net, score.string());
  EXPECT_EQ(read(score), read(path("a_score.kdsn")));

  std::vector<crn::TrainingPair> pairs;
  for (const auto& [e, s] : std::vector<std::pair<std::string, std::string>>{
           {"aspirin", "C1CCCC1"}, {"ibuprofen", "C1CCC1"}, {"ethanol", "CCO"}, {"propanol", "CCCO"}})
    pairs.emplace_back(mol::parse_smiles(s), table.entity_vector(table.entity_index(e)));
  const auto crn_params = crn::train_crn(pairs, cfg.crn_train(table.dim(), 1));

  guidance::GenerateConfig gc;
  gc.sampler = cfg.sampler();
  gc.count = cfg.guidance.count;
  gc.seed = cfg.seed;
  const auto domain = guidance::drug_domain(all, table, cfg.guidance.domain);
  const auto r = table.relation_vector(table.relation_index("drug_protein"));
  const auto t = table.entity_vector(table.entity_index("COX1"));
  const guidance::GuidanceSpec spec{guidance::resolve_target_multi(domain, {{r, t}}).y, 0.5, 0.5, 1.0};
  const auto guided = guidance::generate(net, &crn_params, &spec, gc);
  EXPECT_EQ(guidance::generation_tsv(guided), read(path("a_guided.tsv")));

  const auto plain = guidance::generate(net, nullptr, nullptr, gc);
  EXPECT_EQ(guidance::generation_tsv(plain), read(path("a_plain.tsv")));
  std::vector<mol::MolecularGraph> mols;
  for (const auto* set : {&plain, &guided})
    for (const auto& rec : *set) mols.push_back(rec.smiles.empty() ? mol::MolecularGraph{} : mol::parse_smiles(rec.smiles, false));
  const auto report = eval::compute_metrics(mols, mol::load_smiles_file(p("molecules.smi")));
  std::istringstream js(read(path("a_eval.jsonl")));
  std::string first;
  std::getline(js, first);
  const auto summary = nlohmann::json::parse(first);
  EXPECT_EQ(summary["total"], report.total);
  EXPECT_EQ(summary["valid"], report.valid);
  EXPECT_EQ(summary["validity"].get<double>(), report.validity);
  // Both are null when nothing is valid, which the toy-sized score network usually produces.
  const auto same = [](const nlohmann::json& j, const std::optional<double>& v) {
    return v ? j.is_number() && j.get<double>() == *v : j.is_null();
  };
  EXPECT_TRUE(same(summary["uniqueness"], report.uniqueness)) << summary["uniqueness"];
  EXPECT_TRUE(same(summary["novelty"], report.novelty)) << summary["novelty"];
}

TEST_F(Pipeline, SeedFromEnvironmentOverridesConfig) {
  const std::string args = "--config " + p("run.cfg") + " generate --score " + p("a_score.kdsn") + " --out ";
  ASSERT_EQ(kdream_cli(args + p("env.tsv"), nullptr, "KDREAM_SEED=99"), 0);
  ASSERT_EQ(kdream_cli("--seed 99 " + args + p("flag.tsv")), 0);
  EXPECT_EQ(read(path("env.tsv")), read(path("flag.tsv")));
  EXPECT_NE(read(path("env.tsv")), read(path("a_plain.tsv")));
  EXPECT_EQ(nlohmann::json::parse(read(path("env.tsv.manifest.json")))["seed"], 99);
}

TEST_F(Pipeline, GradcheckPasses) {
  std::string out;
  ASSERT_EQ(kdream_cli("gradcheck --module all --out " + p("grad.tsv"), &out), 0) << out;
  const auto report = read(path("grad.tsv"));
  EXPECT_EQ(report.find("\tno\n"), std::string::npos);
  for (const char* m : {"transe", "dsm", "crn", "guidance"}) EXPECT_NE(report.find(m), std::string::npos) << m;
}

TEST_F(Pipeline, ErrorClassesMapToDistinctExitCodes) {
  std::string out;
  EXPECT_EQ(kdream_cli("kge train --kg " + p("a_kg") + " --out " + p("x") + " --kge.depth 3", &out), 2);
  EXPECT_EQ(kdream_cli("--kge.dim 0 kge train --kg " + p("a_kg") + " --out " + p("x"), &out), 2);
  binio::write_file(p("bad.cfg"), "[kge]\ndim = 4\nwidth = 2\n");
  EXPECT_EQ(kdream_cli("--config " + p("bad.cfg") + " kge train --kg " + p("a_kg") + " --out " + p("x"), &out), 3);
  EXPECT_NE(out.find("line 3"), std::string::npos) << out;
  binio::write_file(p("bad.kdsn"), "not a checkpoint");
  EXPECT_EQ(kdream_cli("generate --score " + p("bad.kdsn") + " --out " + p("x.tsv"), &out), 5);
  // Regressor trained on 4-dimensional embeddings against an 8-dimensional table.
  ASSERT_EQ(kdream_cli("--config " + p("run.cfg") + " --kge.dim 8 kge train --kg " + p("a_kg") + " --out " +
                       p("emb8.kdem")),
            0);
  EXPECT_EQ(kdream_cli("--config " + p("run.cfg") + " generate --score " + p("a_score.kdsn") + " --crn " +
                           p("a_crn.kdcr") + " --embeddings " + p("emb8.kdem") + " --kg " + p("a_kg") +
                           " --target COX1 --lambda-x 1 --out " + p("x.tsv"),
                       &out),
            6);
  EXPECT_NE(out.find("8"), std::string::npos);
  EXPECT_NE(out.find("4"), std::string::npos);
  EXPECT_EQ(kdream_cli("--config " + p("run.cfg") + " generate --score " + p("a_score.kdsn") + " --crn " +
                           p("a_crn.kdcr") + " --out " + p("x.tsv"),
                       &out),
            2);
  EXPECT_EQ(kdream_cli("evaluate --generated " + p("a_plain.tsv") + " --adapter 'dock=echo 1 > {output} # {input}' --out " +
                           p("x"),
                       &out),
            8);
  // Scores the adapter failed to produce stay missing; the default filters then lack their columns.
  EXPECT_EQ(kdream_cli("evaluate --generated " + p("a_plain.tsv") + " --adapter 'dock=exit 1 # {input} {output}' --out " +
                           p("x"),
                       &out),
            2);
  EXPECT_NE(out.find("'qed'"), std::string::npos) << out;
  EXPECT_EQ(kdream_cli("kge train --kg " + p("missing_dir") + " --out " + p("x"), &out), 2);
  fs::create_directories(path("empty_kg"));
  binio::write_file(p("empty_kg/all.tsv"), "");
  binio::write_file(p("empty_kg/train.tsv"), "a\tr\tb\n");
  EXPECT_EQ(kdream_cli("kge train --kg " + p("empty_kg") + " --out " + p("x"), &out), 3);
}
