#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "kdream/binio.hpp"
#include "kdream/config.hpp"
#include "kdream/error.hpp"
#include "kdream/parallel.hpp"
#include "kdream/pipeline.hpp"

namespace {

using kdream::config::RunConfig;
using kdream::pipeline::Artifacts;

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Options {
  std::string config_path;
  std::map<std::string, std::string> overrides;
  unsigned jobs = 0;
};

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{} : kdream::config::load(opt.config_path);
  if (const char* env = std::getenv("KDREAM_SEED")) cfg.set("seed", env);
  for (const auto& [key, value] : opt.overrides) cfg.set(key, value);
  cfg.validate();
  return cfg;
}

void finish(const std::string& command, const RunConfig& cfg, const Artifacts& a, const std::string& manifest,
            const std::string& started, std::chrono::steady_clock::time_point t0) {
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  kdream::binio::write_file(manifest, kdream::pipeline::manifest_json(command, cfg, a, started, wall));
  std::cout << a.summary;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdream: knowledge-guided score-based molecular graph generation"};
  app.require_subcommand(1);
  app.fallthrough();

  Options opt;
  app.add_option("--config", opt.config_path, "Run configuration file ([section] key = value)")
      ->check(CLI::ExistingFile);
  app.add_option("--jobs", opt.jobs, "Worker threads (default: available parallelism)");
  for (const auto& key : RunConfig::keys()) {
    app.add_option_function<std::string>(
           "--" + key, [&opt, key](const std::string& v) { opt.overrides[key] = v; },
           "Override " + key + " (default " + RunConfig{}.get(key) + ")")
        ->group("Configuration");
  }

  std::string triples, roles, out, kg_dir, embeddings, split = "test", molecules, pairs, score, crn_path, target;
  std::string module = "all", y1, y2;
  double alpha = 0.5;
  kdream::pipeline::EvaluateInputs eval_in;

  auto* kg = app.add_subcommand("kg", "Knowledge graph preparation")->require_subcommand(1);
  auto* kg_build = kg->add_subcommand("build", "Normalize and split a triple file");
  kg_build->add_option("--triples", triples, "Triple TSV (head, relation, tail)")->required()->check(CLI::ExistingFile);
  kg_build->add_option("--roles", roles, "Entity role TSV (drug, target, other)")->check(CLI::ExistingFile);
  kg_build->add_option("--out", out, "Output directory")->required();

  auto* kge = app.add_subcommand("kge", "TransE embeddings")->require_subcommand(1);
  auto* kge_train = kge->add_subcommand("train", "Train embeddings on <kg>/train.tsv");
  kge_train->add_option("--kg", kg_dir, "Directory written by kg build")->required()->check(CLI::ExistingDirectory);
  kge_train->add_option("--out", out, "Embedding file")->required();
  auto* kge_eval = kge->add_subcommand("eval", "Filtered link prediction");
  kge_eval->add_option("--kg", kg_dir, "Directory written by kg build")->required()->check(CLI::ExistingDirectory);
  kge_eval->add_option("--embeddings", embeddings, "Embedding file")->required()->check(CLI::ExistingFile);
  kge_eval->add_option("--split", split, "train, valid or test");
  kge_eval->add_option("--out", out, "Metrics TSV")->required();

  auto* diff = app.add_subcommand("diff", "Score-based graph diffusion")->require_subcommand(1);
  auto* diff_train = diff->add_subcommand("train", "Train the score network");
  diff_train->add_option("--molecules", molecules, "SMILES file")->required()->check(CLI::ExistingFile);
  diff_train->add_option("--out", out, "Score network checkpoint")->required();

  auto* crn = app.add_subcommand("crn", "Context regressor network")->require_subcommand(1);
  auto* crn_train = crn->add_subcommand("train", "Train the regressor on (entity, molecule) pairs");
  crn_train->add_option("--embeddings", embeddings, "Embedding file")->required()->check(CLI::ExistingFile);
  crn_train->add_option("--pairs", pairs, "entity<TAB>smiles file")->required()->check(CLI::ExistingFile);
  crn_train->add_option("--out", out, "Regressor checkpoint")->required();

  auto add_guidance_inputs = [&](CLI::App* sub, bool required) {
    auto* c = sub->add_option("--crn", crn_path, "Regressor checkpoint")->check(CLI::ExistingFile);
    auto* e = sub->add_option("--embeddings", embeddings, "Embedding file")->check(CLI::ExistingFile);
    auto* k = sub->add_option("--kg", kg_dir, "Directory written by kg build")->check(CLI::ExistingDirectory);
    if (required) {
      c->required();
      e->required();
      k->required();
    }
  };

  auto* generate = app.add_subcommand("generate", "Sample molecules, optionally guided toward a target");
  generate->add_option("--score", score, "Score network checkpoint")->required()->check(CLI::ExistingFile);
  add_guidance_inputs(generate, false);
  generate->add_option("--target", target, "Target spec file, entity@relation, or entity");
  generate->add_option_function<std::string>(
      "--lambda-x", [&opt](const std::string& v) { opt.overrides["guidance.lambda_x"] = v; }, "Guidance weight on X");
  generate->add_option_function<std::string>(
      "--lambda-e", [&opt](const std::string& v) { opt.overrides["guidance.lambda_e"] = v; }, "Guidance weight on E");
  generate->add_option_function<std::string>(
      "--count", [&opt](const std::string& v) { opt.overrides["guidance.count"] = v; }, "Number of chains");
  generate->add_option("--out", out, "Generation TSV")->required();

  auto* interp = app.add_subcommand("interpolate", "Sample toward an interpolated target");
  interp->add_option("--score", score, "Score network checkpoint")->required()->check(CLI::ExistingFile);
  add_guidance_inputs(interp, true);
  interp->add_option("--y1", y1, "First source: entity@relation or entity")->required();
  interp->add_option("--y2", y2, "Second source: entity@relation or entity")->required();
  interp->add_option("--alpha", alpha, "Weight of the second source")->check(CLI::Range(0.0, 1.0));
  interp->add_option_function<std::string>(
      "--lambda-x", [&opt](const std::string& v) { opt.overrides["guidance.lambda_x"] = v; }, "Guidance weight on X");
  interp->add_option_function<std::string>(
      "--count", [&opt](const std::string& v) { opt.overrides["guidance.count"] = v; }, "Number of chains");
  interp->add_option("--out", out, "Generation TSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Metrics, filters and statistics for generated molecules");
  evaluate->add_option("--generated", eval_in.generated, "Generation TSV (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--reference", eval_in.reference, "Reference SMILES for novelty")->check(CLI::ExistingFile);
  evaluate->add_option("--actives", eval_in.actives, "Known actives for the similarity filter")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--scorer", eval_in.scorers, "scorer=column, scorer in proxy:qed, proxy:sa");
  evaluate->add_option("--adapter", eval_in.adapters, "column=command template with {input} and {output}");
  evaluate->add_option("--threshold", eval_in.thresholds, "column<=value for the joint threshold proportion");
  evaluate->add_option("--scatter-x", eval_in.scatter_x, "Column for the scatter export x axis");
  evaluate->add_option("--scatter-y", eval_in.scatter_y, "Column for the scatter export y axis");
  evaluate->add_option("--histogram", eval_in.histogram, "Column for per-lambda histograms");
  evaluate->add_flag("--negate", eval_in.negate, "Negate values in plot exports");
  evaluate->add_option("--out", out, "Output prefix")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--module", module, "transe, dsm, crn, guidance or all");
  gradcheck->add_option("--out", out, "Report TSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(kdream::ErrorKind::kInvalidArgument);
  }

  try {
    const RunConfig cfg = resolve_config(opt);
    const unsigned jobs = opt.jobs ? opt.jobs : kdream::default_jobs();
    const auto started = utc_now();
    const auto t0 = std::chrono::steady_clock::now();
    auto guidance_inputs = [&]() -> std::optional<kdream::pipeline::GuidanceInputs> {
      const bool any = !crn_path.empty() || !embeddings.empty() || !kg_dir.empty() || !target.empty();
      if (!any) return std::nullopt;
      if (crn_path.empty() || embeddings.empty() || kg_dir.empty() || target.empty())
        throw kdream::Error(kdream::ErrorKind::kInvalidArgument,
                            "guided generation needs --crn, --embeddings, --kg and --target together");
      return kdream::pipeline::GuidanceInputs{crn_path, embeddings, kg_dir, target};
    };

    if (kg_build->parsed()) {
      finish("kg build", cfg, kdream::pipeline::kg_build(cfg, triples, roles, out),
             (std::filesystem::path(out) / "manifest.json").string(), started, t0);
    } else if (kge_train->parsed()) {
      finish("kge train", cfg, kdream::pipeline::kge_train(cfg, kg_dir, out), out + ".manifest.json", started, t0);
    } else if (kge_eval->parsed()) {
      finish("kge eval", cfg, kdream::pipeline::kge_eval(cfg, kg_dir, embeddings, split, out), out + ".manifest.json",
             started, t0);
    } else if (diff_train->parsed()) {
      finish("diff train", cfg, kdream::pipeline::diff_train(cfg, molecules, out, jobs), out + ".manifest.json",
             started, t0);
    } else if (crn_train->parsed()) {
      finish("crn train", cfg, kdream::pipeline::crn_train(cfg, embeddings, pairs, out, jobs),
             out + ".manifest.json", started, t0);
    } else if (generate->parsed()) {
      finish("generate", cfg, kdream::pipeline::generate(cfg, score, guidance_inputs(), out, jobs),
             out + ".manifest.json", started, t0);
    } else if (interp->parsed()) {
      finish("interpolate", cfg,
             kdream::pipeline::interpolate(cfg, score, {crn_path, embeddings, kg_dir, ""}, y1, y2, alpha, out, jobs),
             out + ".manifest.json", started, t0);
    } else if (evaluate->parsed()) {
      finish("evaluate", cfg, kdream::pipeline::evaluate(cfg, eval_in, out, jobs), out + ".manifest.json", started,
             t0);
    } else if (gradcheck->parsed()) {
      const auto a = kdream::pipeline::gradcheck(cfg, module, out);
      if (out.empty())
        std::cout << a.summary;
      else
        finish("gradcheck", cfg, a, out + ".manifest.json", started, t0);
    }
  } catch (const kdream::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(kdream::ErrorKind::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
