#include "kdream/guidance.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "kdream/error.hpp"
#include "kdream/parallel.hpp"
#include "kdream/rng.hpp"

namespace kdream::guidance {

using diffusion::GraphState;

void GuidanceSpec::validate(std::size_t crn_dim) const {
  if (y.size() != crn_dim)
    throw DimensionError("guidance target has dimension " + std::to_string(y.size()) + ", crn outputs " +
                         std::to_string(crn_dim));
  require(lambda_x >= 0 && lambda_e >= 0, "guidance weights must be non-negative");
  require(sigma_y2 > 0, "guidance variance must be positive");
  require(std::all_of(y.begin(), y.end(), [](double v) { return std::isfinite(v); }),
          "guidance target must be finite");
}

DomainMode parse_domain_mode(const std::string& s) {
  if (s == "span") return DomainMode::kSpan;
  if (s == "convex") return DomainMode::kConvex;
  throw Error(ErrorKind::kInvalidArgument, "unknown drug domain mode '" + s + "' (expected span or convex)");
}

std::string to_string(DomainMode m) { return m == DomainMode::kSpan ? "span" : "convex"; }

DrugDomain drug_domain(const kg::KnowledgeGraph& kg, const kge::EmbeddingTable& table, DomainMode mode) {
  DrugDomain d{{}, mode};
  for (auto e : kg.entities_with_role(kg::Role::kDrug))
    d.basis.push_back(table.entity_vector(table.entity_index(kg.entities().name(e))));
  if (d.basis.empty()) throw Error(ErrorKind::kInvalidArgument, "no drug entities: supply a role file tagging drugs");
  return d;
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }
std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

// Euclidean projection onto the probability simplex.
Vec project_simplex(const Vec& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0, theta = 0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0) theta = candidate;
  }
  return (v.array() - theta).max(0.0).matrix();
}

}  // namespace

Resolution resolve_target_multi(const DrugDomain& domain, const std::vector<TargetPair>& targets) {
  if (targets.empty()) throw Error(ErrorKind::kInvalidArgument, "multi-target resolution needs at least one target");
  if (domain.basis.empty()) throw Error(ErrorKind::kInvalidArgument, "drug domain is empty");
  const std::size_t d = domain.basis[0].size();
  const std::size_t k = domain.basis.size();
  Mat B(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    if (domain.basis[i].size() != d) throw DimensionError("drug domain rows have unequal dimensions");
    B.row(static_cast<Eigen::Index>(i)) = to_vec(domain.basis[i]).transpose();
  }
  if (!B.allFinite()) throw NumericalError("drug domain contains non-finite values");
  // Σ‖Bᵀc − v_i‖² = m‖Bᵀc − v̄‖² + const, so the normal equations reduce to BBᵀc = B·v̄. The running
  // mean leaves v̄ bit-identical to v when every target is the same.
  Vec v_mean = Vec::Zero(static_cast<Eigen::Index>(d));
  std::size_t seen = 0;
  for (const auto& tp : targets) {
    if (tp.relation.size() != d || tp.entity.size() != d)
      throw DimensionError("target embeddings must have dimension " + std::to_string(d));
    ++seen;
    v_mean += (to_vec(tp.entity) - to_vec(tp.relation) - v_mean) / static_cast<double>(seen);
  }
  const Mat gram = B * B.transpose();
  const Vec rhs = B * v_mean;

  Resolution res;
  Vec c;
  if (domain.mode == DomainMode::kSpan) {
    c = gram.completeOrthogonalDecomposition().solve(rhs);
  } else {
    const double smax = Eigen::JacobiSVD<Mat>(B).singularValues()(0);
    const double step = smax > 0 ? 1.0 / (smax * smax) : 0.0;
    // ½‖Bᵀc − v̄‖² up to a constant.
    auto objective = [&](const Vec& x) { return 0.5 * x.dot(gram * x) - x.dot(rhs); };
    c = Vec::Constant(static_cast<Eigen::Index>(k), 1.0 / static_cast<double>(k));
    double prev = objective(c);
    for (std::size_t it = 0; it < kConvexMaxIterations; ++it) {
      c = project_simplex(c - step * (gram * c - rhs));
      res.iterations = it + 1;
      const double cur = objective(c);
      if (std::abs(prev - cur) < kConvexTolerance) break;
      prev = cur;
    }
  }
  const Vec y = B.transpose() * c;
  res.y = to_std(y);
  res.coefficients = to_std(c);
  for (const auto& tp : targets) res.objective += (y + to_vec(tp.relation) - to_vec(tp.entity)).squaredNorm();
  return res;
}

std::vector<double> interpolate(const std::vector<double>& y1, const std::vector<double>& y2, double alpha) {
  if (y1.size() != y2.size())
    throw DimensionError("interpolation endpoints have dimensions " + std::to_string(y1.size()) + " and " +
                         std::to_string(y2.size()));
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "interpolation alpha must lie in [0, 1]");
  std::vector<double> y(y1.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (1.0 - alpha) * y1[i] + alpha * y2[i];
  return y;
}

KnowledgeGuidance::KnowledgeGuidance(const crn::CrnParams& crn, GuidanceSpec spec) : crn_(crn), spec_(std::move(spec)) {
  spec_.validate(crn_.config.out_dim);
}

void KnowledgeGuidance::apply(const GraphState& g, diffusion::ScoreNetwork::Score& score) const {
  const auto grad = crn::input_gradient(crn_, g, spec_.y);
  const double cx = spec_.lambda_x / (2.0 * spec_.sigma_y2);
  const double ce = spec_.lambda_e / (2.0 * spec_.sigma_y2);
  for (std::size_t i = 0; i < score.X.size(); ++i) score.X[i] -= cx * grad.X[i];
  for (std::size_t i = 0; i < score.E.size(); ++i) score.E[i] -= ce * grad.E[i];
}

diffusion::ScoreNetwork::Score guided_score(const diffusion::ScoreNetwork& net, const crn::CrnParams& crn,
                                            const GuidanceSpec& spec, const GraphState& g) {
  auto s = net.score(g);
  KnowledgeGuidance(crn, spec).apply(g, s);
  return s;
}

std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain) { return stream_seed(seed, "generate.chain", chain); }

std::vector<GenerationRecord> generate(const diffusion::ScoreNetwork& net, const crn::CrnParams* crn,
                                       const GuidanceSpec* spec, const GenerateConfig& cfg) {
  require((crn == nullptr) == (spec == nullptr), "guided generation needs both a crn and a guidance spec");
  const std::size_t n = cfg.n_atoms ? cfg.n_atoms : net.config().max_nodes;
  std::optional<KnowledgeGuidance> guide;
  if (crn) {
    if (crn->config.channels != net.config().channels)
      throw DimensionError("crn expects " + std::to_string(crn->config.channels) + " channels, score network has " +
                           std::to_string(net.config().channels));
    guide.emplace(*crn, *spec);
  }
  std::vector<GenerationRecord> out(cfg.count);
  parallel_for(cfg.count, cfg.jobs, [&](std::size_t i) {
    auto& rec = out[i];
    rec.chain = i;
    rec.seed = chain_seed(cfg.seed, i);
    if (spec) {
      rec.lambda_x = spec->lambda_x;
      rec.lambda_e = spec->lambda_e;
    }
    try {
      Rng rng(rec.seed);
      const auto g0 = diffusion::reverse_sample(net, n, cfg.sampler, rng, guide ? &*guide : nullptr);
      rec.molecule = diffusion::quantize(g0);
      rec.n_atoms = rec.molecule.atom_count();
      rec.valid = rec.n_atoms > 0 && mol::is_valid(rec.molecule).valid;
      rec.smiles = mol::write_smiles(rec.molecule);
      if (crn) {
        const auto yhat = crn::crn_forward(*crn, g0);
        double s = 0;
        for (std::size_t k = 0; k < yhat.size(); ++k) s += (spec->y[k] - yhat[k]) * (spec->y[k] - yhat[k]);
        rec.distance = std::sqrt(s);
      }
    } catch (const Error& e) {
      rec.error = e.what();
      rec.valid = false;
    }
  });
  return out;
}

std::string generation_tsv(const std::vector<GenerationRecord>& records) {
  std::ostringstream os;
  os << "smiles\tvalid\tn_atoms\tseed\n";
  for (const auto& r : records) os << r.smiles << '\t' << (r.valid ? 1 : 0) << '\t' << r.n_atoms << '\t' << r.seed << '\n';
  return os.str();
}

namespace {

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

}  // namespace

TargetRequest parse_target_spec(std::string_view text) {
  TargetRequest req;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') {
      if (end == text.size()) break;
      continue;
    }
    const auto f = split_tabs(line);
    if (f[0] == "target") {
      if (f.size() != 3 || f[1].empty() || f[2].empty())
        throw ParseError(line_no, "expected target<TAB>entity<TAB>relation");
      req.targets.emplace_back(f[1], f[2]);
    } else if (f[0] == "interp") {
      if (f.size() != 4 || f[1].empty() || f[2].empty())
        throw ParseError(line_no, "expected interp<TAB>y1<TAB>y2<TAB>alpha");
      if (req.interp) throw ParseError(line_no, "only one interp line is allowed");
      double alpha = 0;
      const auto* b = f[3].data();
      const auto [ptr, ec] = std::from_chars(b, b + f[3].size(), alpha);
      if (ec != std::errc() || ptr != b + f[3].size()) throw ParseError(line_no, "invalid alpha '" + f[3] + "'");
      if (!(alpha >= 0 && alpha <= 1)) throw ParseError(line_no, "alpha must lie in [0, 1]");
      req.interp = TargetRequest::Interp{f[1], f[2], alpha};
    } else {
      throw ParseError(line_no, "unknown directive '" + f[0] + "' (expected target or interp)");
    }
    if (end == text.size()) break;
  }
  if (req.targets.empty() && !req.interp) throw ParseError(0, "target spec has no target or interp line");
  if (!req.targets.empty() && req.interp) throw ParseError(0, "target spec mixes target and interp lines");
  return req;
}

namespace {

TargetPair pair_for(const kge::EmbeddingTable& table, const std::string& entity, const std::string& relation) {
  return {table.relation_vector(table.relation_index(relation)), table.entity_vector(table.entity_index(entity))};
}

std::vector<double> resolve_source(const std::string& source, const kge::EmbeddingTable& table,
                                   const DrugDomain& domain) {
  const auto at = source.rfind('@');
  if (at == std::string::npos) return table.entity_vector(table.entity_index(source));
  return resolve_target_multi(domain, {pair_for(table, source.substr(0, at), source.substr(at + 1))}).y;
}

}  // namespace

std::vector<double> resolve_request(const TargetRequest& req, const kge::EmbeddingTable& table,
                                    const DrugDomain& domain) {
  if (req.interp)
    return interpolate(resolve_source(req.interp->y1, table, domain), resolve_source(req.interp->y2, table, domain),
                       req.interp->alpha);
  std::vector<TargetPair> pairs;
  for (const auto& [entity, relation] : req.targets) pairs.push_back(pair_for(table, entity, relation));
  return resolve_target_multi(domain, pairs).y;
}

}  // namespace kdream::guidance
