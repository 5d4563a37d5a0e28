#include "kdream/pipeline.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include <json.hpp>

#include "kdream/binio.hpp"
#include "kdream/crn.hpp"
#include "kdream/diffusion.hpp"
#include "kdream/error.hpp"
#include "kdream/eval.hpp"
#include "kdream/gradcheck.hpp"
#include "kdream/guidance.hpp"
#include "kdream/kge.hpp"
#include "kdream/stats.hpp"

namespace kdream::pipeline {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void put(Artifacts& a, const std::string& path, std::string_view data) {
  binio::write_file(path, data);
  a.outputs.push_back(path);
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    f.emplace_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return f;
}

// Calls fn(line_no, fields) for each non-blank, non-comment line.
template <typename Fn>
void for_each_row(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;
    fn(line_no, split_tabs(line));
  }
}

kg::KnowledgeGraph load_kg_with_roles(const std::string& kg_dir) {
  auto kg = kg::load_triples(join(kg_dir, "all.tsv"));
  const auto roles = join(kg_dir, "roles.tsv");
  if (fs::exists(roles)) kg::load_roles(kg, roles);
  return kg;
}

}  // namespace

Artifacts kg_build(const config::RunConfig& cfg, const std::string& triples, const std::string& roles,
                   const std::string& out_dir) {
  Artifacts a;
  a.inputs.push_back(triples);
  auto kg = kg::load_triples(triples);
  if (!roles.empty()) {
    kg::load_roles(kg, roles);
    a.inputs.push_back(roles);
  }
  kg::NormalizeReport report;
  const auto normal = kg::normalize(kg, &report);
  const auto parts = kg::split(normal, cfg.kg.ratios, cfg.seed);
  fs::create_directories(out_dir);
  put(a, join(out_dir, "all.tsv"), normal.to_tsv());
  put(a, join(out_dir, "train.tsv"), parts.train.to_tsv());
  put(a, join(out_dir, "valid.tsv"), parts.valid.to_tsv());
  put(a, join(out_dir, "test.tsv"), parts.test.to_tsv());
  put(a, join(out_dir, "roles.tsv"), kg::roles_to_tsv(normal));
  std::ostringstream s;
  s << "triples " << kg.triples().size() << " -> " << normal.triples().size() << " (duplicates "
    << report.duplicates_removed << ", reverses " << report.reverses_removed << "); train "
    << parts.train.triples().size() << ", valid " << parts.valid.triples().size() << ", test "
    << parts.test.triples().size() << '\n';
  a.summary = s.str();
  return a;
}

Artifacts kge_train(const config::RunConfig& cfg, const std::string& kg_dir, const std::string& out) {
  Artifacts a;
  const auto train_path = join(kg_dir, "train.tsv");
  a.inputs.push_back(train_path);
  // Train over the full vocabulary so every entity, including role-only ones, gets a vector.
  const auto all = load_kg_with_roles(kg_dir);
  a.inputs.push_back(join(kg_dir, "all.tsv"));
  const auto train_only = kg::load_triples(train_path);
  std::vector<kg::Triple> triples;
  for (const auto& t : train_only.triples()) {
    const auto h = all.entities().find(train_only.entities().name(t.head));
    const auto r = all.relations().find(train_only.relations().name(t.relation));
    const auto o = all.entities().find(train_only.entities().name(t.tail));
    if (!h || !r || !o) throw Error(ErrorKind::kFormat, "train.tsv names an entity or relation absent from all.tsv");
    triples.push_back({*h, *r, *o});
  }
  kge::TrainLog log;
  const auto table = kge::train_transe(all.with_triples(std::move(triples)), cfg.kge_train(), &log);
  kge::save_embeddings(table, out);
  a.outputs.push_back(out);
  std::ostringstream loss;
  loss << "epoch\tloss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) loss << e << '\t' << fmt(log.epoch_loss[e]) << '\n';
  put(a, out + ".loss.tsv", loss.str());
  a.summary = "trained " + std::to_string(table.entity_count()) + " entities, " +
              std::to_string(table.relation_count()) + " relations, dim " + std::to_string(table.dim()) +
              "; final loss " + fmt(log.epoch_loss.back()) + "; negatives at retry cap " +
              std::to_string(log.negatives.cap_warnings) + '\n';
  return a;
}

Artifacts kge_eval(const config::RunConfig&, const std::string& kg_dir, const std::string& embeddings,
                   const std::string& split, const std::string& out) {
  if (split != "test" && split != "valid" && split != "train")
    throw Error(ErrorKind::kInvalidArgument, "split must be train, valid or test");
  Artifacts a;
  const auto split_path = join(kg_dir, split + ".tsv");
  a.inputs = {embeddings, split_path, join(kg_dir, "all.tsv")};
  const auto table = kge::load_embeddings(embeddings);
  const auto m = kge::evaluate_link_prediction(table, kg::load_triples(split_path), kg::load_triples(a.inputs[2]));
  std::ostringstream s;
  s << "metric\tvalue\nmrr\t" << fmt(m.mrr) << "\nhits@1\t" << fmt(m.hits1) << "\nhits@10\t" << fmt(m.hits10)
    << "\nqueries\t" << m.ranks.size() << '\n';
  put(a, out, s.str());
  a.summary = s.str();
  return a;
}

Artifacts diff_train(const config::RunConfig& cfg, const std::string& molecules, const std::string& out,
                     unsigned jobs) {
  Artifacts a;
  a.inputs.push_back(molecules);
  const auto mols = mol::load_smiles_file(molecules);
  diffusion::TrainLog log;
  const auto net = diffusion::train_score(mols, cfg.score_train(jobs), &log);
  diffusion::save(net, out);
  a.outputs.push_back(out);
  std::ostringstream loss;
  loss << "window\tloss\n";
  for (std::size_t w = 0; w < log.window_loss.size(); ++w) loss << w << '\t' << fmt(log.window_loss[w]) << '\n';
  put(a, out + ".loss.tsv", loss.str());
  a.summary = "trained score network on " + std::to_string(mols.size()) + " molecules; final window loss " +
              fmt(log.window_loss.back()) + '\n';
  return a;
}

Artifacts crn_train(const config::RunConfig& cfg, const std::string& embeddings, const std::string& pairs_path,
                    const std::string& out, unsigned jobs) {
  Artifacts a;
  a.inputs = {embeddings, pairs_path};
  const auto table = kge::load_embeddings(embeddings);
  std::vector<crn::TrainingPair> pairs;
  for_each_row(binio::read_file(pairs_path), [&](std::size_t line, const std::vector<std::string>& f) {
    if (f.size() != 2) throw ParseError(line, "expected entity<TAB>smiles");
    std::size_t e = 0;
    try {
      e = table.entity_index(f[0]);
    } catch (const Error& err) {
      throw ParseError(line, err.what());
    }
    mol::MolecularGraph m;
    try {
      m = mol::parse_smiles(f[1]);
    } catch (const Error& err) {
      throw ParseError(line, err.what());
    }
    pairs.emplace_back(std::move(m), table.entity_vector(e));
  });
  if (pairs.empty()) throw ParseError(0, "pairs file is empty");
  crn::TrainLog log;
  const auto params = crn::train_crn(pairs, cfg.crn_train(table.dim(), jobs), &log);
  crn::save(params, out);
  a.outputs.push_back(out);
  std::ostringstream loss;
  loss << "epoch\tloss\n";
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) loss << e << '\t' << fmt(log.epoch_loss[e]) << '\n';
  put(a, out + ".loss.tsv", loss.str());
  a.summary = "trained crn on " + std::to_string(pairs.size()) + " pairs; final epoch loss " +
              fmt(log.epoch_loss.back()) + '\n';
  return a;
}

namespace {

struct LoadedGuidance {
  crn::CrnParams crn;
  guidance::GuidanceSpec spec;
};

guidance::TargetRequest target_request(const config::RunConfig& cfg, const std::string& target, Artifacts& a) {
  if (fs::is_regular_file(target)) {
    a.inputs.push_back(target);
    return guidance::parse_target_spec(binio::read_file(target));
  }
  guidance::TargetRequest req;
  const auto at = target.rfind('@');
  if (at == std::string::npos)
    req.targets.emplace_back(target, cfg.guidance.relation);
  else
    req.targets.emplace_back(target.substr(0, at), target.substr(at + 1));
  return req;
}

LoadedGuidance load_guidance(const config::RunConfig& cfg, const GuidanceInputs& in, const guidance::TargetRequest& req,
                             Artifacts& a) {
  a.inputs.push_back(in.crn);
  a.inputs.push_back(in.embeddings);
  a.inputs.push_back(join(in.kg_dir, "all.tsv"));
  auto params = crn::load(in.crn);
  const auto table = kge::load_embeddings(in.embeddings);
  if (table.dim() != params.config.out_dim)
    throw DimensionError("embedding dimension " + std::to_string(table.dim()) + " does not match crn output " +
                         std::to_string(params.config.out_dim));
  const auto kg = load_kg_with_roles(in.kg_dir);
  const auto domain = guidance::drug_domain(kg, table, cfg.guidance.domain);
  guidance::GuidanceSpec spec{guidance::resolve_request(req, table, domain), cfg.guidance.lambda_x, cfg.lambda_e(),
                              cfg.guidance.sigma_y2};
  return {std::move(params), std::move(spec)};
}

Artifacts run_generation(const config::RunConfig& cfg, const std::string& score, const LoadedGuidance* guide,
                         Artifacts a, const std::string& out, unsigned jobs) {
  a.inputs.insert(a.inputs.begin(), score);
  const auto net = diffusion::load(score);
  if (guide && guide->crn.config.max_nodes != net.config().max_nodes)
    throw DimensionError("crn was trained for " + std::to_string(guide->crn.config.max_nodes) +
                         " nodes, score network for " + std::to_string(net.config().max_nodes));
  guidance::GenerateConfig gc;
  gc.sampler = cfg.sampler();
  gc.n_atoms = cfg.guidance.n_atoms;
  gc.count = cfg.guidance.count;
  gc.seed = cfg.seed;
  gc.jobs = jobs;
  const auto records = guidance::generate(net, guide ? &guide->crn : nullptr, guide ? &guide->spec : nullptr, gc);
  put(a, out, guidance::generation_tsv(records));
  std::ostringstream prov;
  std::size_t valid = 0, failed = 0;
  for (const auto& r : records) {
    nlohmann::ordered_json j{{"chain", r.chain},       {"seed", r.seed},   {"lambda_x", r.lambda_x},
                             {"lambda_e", r.lambda_e}, {"smiles", r.smiles}, {"valid", r.valid},
                             {"n_atoms", r.n_atoms}};
    j["distance"] = r.distance ? nlohmann::ordered_json(*r.distance) : nlohmann::ordered_json(nullptr);
    if (!r.error.empty()) j["error"] = r.error;
    prov << j.dump() << '\n';
    valid += r.valid;
    failed += !r.error.empty();
  }
  put(a, out + ".provenance.jsonl", prov.str());
  a.summary = "generated " + std::to_string(records.size()) + " molecules, " + std::to_string(valid) + " valid, " +
              std::to_string(failed) + " failed chains\n";
  return a;
}

}  // namespace

Artifacts generate(const config::RunConfig& cfg, const std::string& score, const std::optional<GuidanceInputs>& guide,
                   const std::string& out, unsigned jobs) {
  Artifacts a;
  if (!guide) return run_generation(cfg, score, nullptr, std::move(a), out, jobs);
  const auto req = target_request(cfg, guide->target, a);
  const auto loaded = load_guidance(cfg, *guide, req, a);
  return run_generation(cfg, score, &loaded, std::move(a), out, jobs);
}

Artifacts interpolate(const config::RunConfig& cfg, const std::string& score, const GuidanceInputs& base,
                      const std::string& y1, const std::string& y2, double alpha, const std::string& out,
                      unsigned jobs) {
  Artifacts a;
  guidance::TargetRequest req;
  req.interp = guidance::TargetRequest::Interp{y1, y2, alpha};
  const auto loaded = load_guidance(cfg, base, req, a);
  std::ostringstream y;
  for (std::size_t i = 0; i < loaded.spec.y.size(); ++i) y << (i ? "\t" : "") << fmt(loaded.spec.y[i]);
  y << '\n';
  auto result = run_generation(cfg, score, &loaded, std::move(a), out, jobs);
  put(result, out + ".target.tsv", y.str());
  return result;
}

namespace {

struct GeneratedSet {
  std::vector<mol::MolecularGraph> mols;
  std::vector<std::string> smiles;
  double lambda = 0;
};

GeneratedSet read_generated(const std::string& path, std::size_t index) {
  GeneratedSet g;
  g.lambda = static_cast<double>(index);
  for_each_row(binio::read_file(path), [&](std::size_t line, const std::vector<std::string>& f) {
    if (f[0] == "smiles") return;
    try {
      g.mols.push_back(f[0].empty() ? mol::MolecularGraph{} : mol::parse_smiles(f[0], false));
    } catch (const Error& e) {
      throw ParseError(line, path + ": " + e.what());
    }
    g.smiles.push_back(f[0]);
  });
  const auto prov = path + ".provenance.jsonl";
  if (fs::exists(prov)) {
    const auto text = binio::read_file(prov);
    const auto first = text.substr(0, text.find('\n'));
    if (!first.empty()) g.lambda = nlohmann::json::parse(first).at("lambda_x").get<double>();
  }
  return g;
}

std::pair<std::string, std::string> split_assignment(const std::string& s, char sep, const char* what) {
  const auto pos = s.find(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size())
    throw Error(ErrorKind::kInvalidArgument, std::string("malformed ") + what + " '" + s + "'");
  return {s.substr(0, pos), s.substr(pos + 1)};
}

}  // namespace

Artifacts evaluate(const config::RunConfig& cfg, const EvaluateInputs& in, const std::string& prefix, unsigned jobs) {
  if (in.generated.empty()) throw Error(ErrorKind::kInvalidArgument, "evaluate needs at least one generated file");
  Artifacts a;
  std::vector<GeneratedSet> sets;
  std::vector<mol::MolecularGraph> mols;
  std::vector<std::string> smiles;
  std::vector<std::size_t> set_of;
  for (std::size_t i = 0; i < in.generated.size(); ++i) {
    a.inputs.push_back(in.generated[i]);
    sets.push_back(read_generated(in.generated[i], i));
    for (std::size_t k = 0; k < sets.back().mols.size(); ++k) set_of.push_back(i);
    mols.insert(mols.end(), sets.back().mols.begin(), sets.back().mols.end());
    smiles.insert(smiles.end(), sets.back().smiles.begin(), sets.back().smiles.end());
  }
  std::vector<mol::MolecularGraph> reference;
  if (!in.reference.empty()) {
    reference = mol::load_smiles_file(in.reference);
    a.inputs.push_back(in.reference);
  }
  auto report = eval::compute_metrics(mols, reference);
  auto& scores = report.per_molecule;
  if (!in.actives.empty()) {
    scores.set_column("max_sim_actives", eval::max_tanimoto(mols, mol::load_smiles_file(in.actives)));
    a.inputs.push_back(in.actives);
  }
  for (const auto& s : in.scorers) {
    const auto [scorer, column] = split_assignment(s, '=', "scorer");
    scores.set_column(column, eval::proxy_score(scorer, mols));
  }
  std::string diagnostics;
  for (const auto& s : in.adapters) {
    const auto [column, tmpl] = split_assignment(s, '=', "adapter");
    auto res = eval::external_score(tmpl, smiles, {cfg.eval.adapter_timeout, jobs});
    for (const auto& d : res.diagnostics) diagnostics += column + ": " + d + '\n';
    scores.set_column(column, std::move(res.scores));
  }

  put(a, prefix + ".tsv", eval::report_tsv(report, scores));
  put(a, prefix + ".jsonl", eval::report_jsonl(report, scores));

  const auto filtered = eval::apply_filters(scores, cfg.filters());
  std::ostringstream f;
  f << "index\tsmiles\n";
  for (auto i : filtered.kept) f << i << '\t' << scores.molecules()[i] << '\n';
  for (const auto& [name, count] : filtered.rejected) f << "# rejected by " << name << '\t' << count << '\n';
  put(a, prefix + ".filtered.tsv", f.str());

  std::ostringstream st;
  st << "column\tn\ttop_fraction\tmean\tstd\n";
  for (const auto& c : scores.columns()) {
    if (c == "valid") continue;
    std::vector<double> v;
    for (const auto& x : scores.column(c))
      if (x) v.push_back(*x);
    if (v.empty()) continue;
    const auto ms = stats::top_fraction_stats(v, cfg.eval.top_fraction);
    st << c << '\t' << v.size() << '\t' << fmt(cfg.eval.top_fraction) << '\t' << fmt(ms.mean) << '\t' << fmt(ms.std)
       << '\n';
  }
  if (!in.thresholds.empty()) {
    std::vector<std::pair<std::string, double>> rules;
    for (const auto& t : in.thresholds) {
      const auto pos = t.find("<=");
      if (pos == std::string::npos || pos == 0)
        throw Error(ErrorKind::kInvalidArgument, "malformed threshold '" + t + "' (expected column<=value)");
      const auto value = t.substr(pos + 2);
      double v = 0;
      const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || ptr != value.data() + value.size())
        throw Error(ErrorKind::kInvalidArgument, "malformed threshold value in '" + t + "'");
      rules.emplace_back(t.substr(0, pos), v);
    }
    st << "# threshold_proportion\t" << fmt(eval::threshold_proportion(scores, rules)) << '\n';
  }
  put(a, prefix + ".stats.tsv", st.str());

  if (!in.scatter_x.empty() || !in.scatter_y.empty())
    put(a, prefix + ".scatter.tsv", eval::scatter_tsv(scores, in.scatter_x, in.scatter_y, in.negate));
  if (!in.histogram.empty()) {
    const auto& col = scores.column(in.histogram);
    std::vector<std::pair<double, std::vector<double>>> by_lambda;
    for (const auto& s : sets) by_lambda.emplace_back(s.lambda, std::vector<double>{});
    for (std::size_t i = 0; i < col.size(); ++i)
      if (col[i]) by_lambda[set_of[i]].second.push_back(*col[i]);
    put(a, prefix + ".hist.tsv", eval::histogram_tsv(by_lambda, 20, in.negate));
  }

  std::ostringstream s;
  s << "molecules " << report.total << ", validity " << fmt(report.validity) << ", uniqueness "
    << (report.uniqueness ? fmt(*report.uniqueness) : "NA") << ", novelty "
    << (report.novelty ? fmt(*report.novelty) : "NA") << ", kept by filters " << filtered.kept.size() << '\n'
    << diagnostics;
  a.summary = s.str();
  return a;
}

Artifacts gradcheck(const config::RunConfig& cfg, const std::string& module, const std::string& out) {
  Artifacts a;
  const auto reports = gradcheck::run(module, cfg.seed);
  std::ostringstream s;
  s << "check\tcoordinates\tmax_rel_error\tworst_index\tanalytic\tnumeric\tpass\n";
  bool ok = true;
  for (const auto& r : reports) {
    const bool pass = r.result.max_rel_error < kGradcheckTolerance;
    ok = ok && pass;
    s << r.name << '\t' << r.coordinates << '\t' << fmt(r.result.max_rel_error) << '\t' << r.result.worst_index << '\t'
      << fmt(r.result.analytic) << '\t' << fmt(r.result.numeric) << '\t' << (pass ? "yes" : "no") << '\n';
  }
  if (!out.empty()) put(a, out, s.str());
  a.summary = s.str();
  if (!ok) throw NumericalError("gradient check failed:\n" + s.str());
  return a;
}

std::string hash_file(const std::string& path) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(binio::read_file(path))));
  return buf;
}

std::string manifest_json(const std::string& command, const config::RunConfig& cfg, const Artifacts& a,
                          const std::string& started, double wall_seconds) {
  using nlohmann::ordered_json;
  auto files = [](const std::vector<std::string>& paths) {
    ordered_json arr = ordered_json::array();
    for (const auto& p : paths) arr.push_back({{"path", p}, {"fnv1a64", hash_file(p)}});
    return arr;
  };
  ordered_json j;
  j["command"] = command;
  j["seed"] = cfg.seed;
  j["config"] = config::write(cfg);
  j["inputs"] = files(a.inputs);
  j["outputs"] = files(a.outputs);
  j["started"] = started;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2) + '\n';
}

}  // namespace kdream::pipeline
