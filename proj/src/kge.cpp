#include "kdream/kge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "kdream/binio.hpp"
#include "kdream/error.hpp"

namespace kdream::kge {

EmbeddingTable::EmbeddingTable(std::vector<std::string> entity_names, std::vector<std::string> relation_names,
                               std::size_t dim)
    : dim_(dim),
      entity_names_(std::move(entity_names)),
      relation_names_(std::move(relation_names)),
      entity_vecs_(entity_names_.size() * dim, 0.0f),
      relation_vecs_(relation_names_.size() * dim, 0.0f) {}

std::vector<double> EmbeddingTable::entity_vector(std::size_t e) const {
  if (e >= entity_count()) throw Error(ErrorKind::kInvalidArgument, "entity id out of range");
  auto row = entity(e);
  return {row.begin(), row.end()};
}

std::vector<double> EmbeddingTable::relation_vector(std::size_t r) const {
  if (r >= relation_count()) throw Error(ErrorKind::kInvalidArgument, "relation id out of range");
  auto row = relation(r);
  return {row.begin(), row.end()};
}

std::size_t EmbeddingTable::entity_index(const std::string& name) const {
  auto it = std::find(entity_names_.begin(), entity_names_.end(), name);
  if (it == entity_names_.end()) throw Error(ErrorKind::kInvalidArgument, "unknown entity '" + name + "'");
  return static_cast<std::size_t>(it - entity_names_.begin());
}

std::size_t EmbeddingTable::relation_index(const std::string& name) const {
  auto it = std::find(relation_names_.begin(), relation_names_.end(), name);
  if (it == relation_names_.end()) throw Error(ErrorKind::kInvalidArgument, "unknown relation '" + name + "'");
  return static_cast<std::size_t>(it - relation_names_.begin());
}

void KgeTrainConfig::validate() const {
  require(dim >= 1, "kge.dim must be >= 1");
  require(epochs >= 1, "kge.epochs must be >= 1");
  require(learning_rate > 0, "kge.learning_rate must be > 0");
  require(margin > 0, "kge.margin must be > 0");
  require(negatives_per_positive >= 1, "kge.negatives must be >= 1");
}

double transe_score(const EmbeddingTable& table, const kg::Triple& t) {
  if (t.head >= table.entity_count() || t.tail >= table.entity_count() || t.relation >= table.relation_count())
    throw Error(ErrorKind::kInvalidArgument, "triple id out of table range");
  auto h = table.entity(t.head), r = table.relation(t.relation), o = table.entity(t.tail);
  double acc = 0;
  for (std::size_t i = 0; i < table.dim(); ++i) {
    const double v = double(h[i]) + double(r[i]) - double(o[i]);
    acc += v * v;
  }
  return std::sqrt(acc);
}

std::vector<kg::Triple> sample_negatives_slcwa(const TripleIndex& known, std::size_t entity_count,
                                               const kg::Triple& t, std::size_t k, Rng& rng, NegativeStats* stats) {
  require(k >= 1, "negatives per positive must be >= 1");
  require(entity_count >= 2, "negative sampling needs at least two entities");
  std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(entity_count - 2));
  std::bernoulli_distribution coin(0.5);
  std::vector<kg::Triple> out;
  out.reserve(k);
  for (std::size_t n = 0; n < k; ++n) {
    kg::Triple cand;
    bool filtered = false;
    for (std::size_t attempt = 0; attempt < kNegativeRetryCap; ++attempt) {
      cand = t;
      const bool corrupt_head = coin(rng);
      const auto orig = corrupt_head ? t.head : t.tail;
      auto repl = pick(rng);
      if (repl >= orig) ++repl;
      (corrupt_head ? cand.head : cand.tail) = repl;
      if (stats) ++stats->drawn;
      if (!known.contains(cand)) {
        filtered = true;
        break;
      }
      if (stats) ++stats->resampled;
    }
    if (!filtered && stats) ++stats->cap_warnings;
    out.push_back(cand);
  }
  return out;
}

namespace {

double residual_norm(const TranseParams& p, const kg::Triple& t, std::vector<double>& resid) {
  resid.resize(p.dim);
  auto h = p.entity(t.head), r = p.relation(t.relation), o = p.entity(t.tail);
  double acc = 0;
  for (std::size_t i = 0; i < p.dim; ++i) {
    resid[i] = h[i] + r[i] - o[i];
    acc += resid[i] * resid[i];
  }
  return std::sqrt(acc);
}

// d‖v‖/dv = v/‖v‖, scaled by `sign`, scattered onto head (+), relation (+), tail (−).
void scatter_norm_grad(TranseParams& g, const kg::Triple& t, const std::vector<double>& resid, double norm,
                       double sign) {
  if (norm == 0) return;
  auto gh = g.entity(t.head), gr = g.relation(t.relation), go = g.entity(t.tail);
  for (std::size_t i = 0; i < g.dim; ++i) {
    const double d = sign * resid[i] / norm;
    gh[i] += d;
    gr[i] += d;
    go[i] -= d;
  }
}

void normalize_row(std::span<double> v) {
  double acc = 0;
  for (double x : v) acc += x * x;
  const double n = std::sqrt(acc);
  if (n > 0)
    for (double& x : v) x /= n;
}

}  // namespace

double margin_pair_loss(const TranseParams& p, const kg::Triple& pos, const kg::Triple& neg, double margin,
                        TranseParams* grad) {
  std::vector<double> rp, rn;
  const double sp = residual_norm(p, pos, rp);
  const double sn = residual_norm(p, neg, rn);
  const double loss = margin + sp - sn;
  if (loss <= 0) return 0.0;
  if (grad) {
    scatter_norm_grad(*grad, pos, rp, sp, 1.0);
    scatter_norm_grad(*grad, neg, rn, sn, -1.0);
  }
  return loss;
}

EmbeddingTable train_transe(const kg::KnowledgeGraph& kg, const KgeTrainConfig& cfg, TrainLog* log,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  if (kg.triples().empty()) throw Error(ErrorKind::kInvalidArgument, "cannot train on an empty knowledge graph");
  const std::size_t d = cfg.dim;
  const std::size_t ne = kg.entity_count(), nr = kg.relation_count();

  TranseParams p{d, std::vector<double>(ne * d), std::vector<double>(nr * d)};
  auto init_rng = derive_stream(cfg.seed, "kge.init");
  const double bound = 6.0 / std::sqrt(static_cast<double>(d));
  std::uniform_real_distribution<double> init(-bound, bound);
  for (auto& v : p.entities) v = init(init_rng);
  for (auto& v : p.relations) v = init(init_rng);
  for (std::size_t r = 0; r < nr; ++r) normalize_row(p.relation(r));
  for (std::size_t e = 0; e < ne; ++e) normalize_row(p.entity(e));

  TripleIndex known(kg.triples());
  TrainLog local;
  TrainLog& out_log = log ? *log : local;
  out_log = {};

  // Sparse gradient holder: only rows touched by the current pair are non-zero.
  TranseParams g{d, std::vector<double>(ne * d, 0.0), std::vector<double>(nr * d, 0.0)};
  std::vector<std::size_t> order(kg.triples().size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto rng = derive_stream(cfg.seed, "kge.epoch", epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t pairs = 0;
    for (auto idx : order) {
      const auto& pos = kg.triples()[idx];
      auto negs = sample_negatives_slcwa(known, ne, pos, cfg.negatives_per_positive, rng, &out_log.negatives);
      std::vector<kg::Triple> touched_rows;
      double step_loss = 0;
      for (const auto& neg : negs) {
        step_loss += margin_pair_loss(p, pos, neg, cfg.margin, &g);
        touched_rows.push_back(neg);
      }
      touched_rows.push_back(pos);
      if (!std::isfinite(step_loss))
        throw NumericalError("non-finite TransE loss at epoch " + std::to_string(epoch + 1) + ", triple " +
                             std::to_string(idx));
      total += step_loss;
      pairs += negs.size();
      // Each row is updated once even if it appears in several triples of this step.
      for (const auto& t : touched_rows) {
        for (auto e : {t.head, t.tail}) {
          auto row = p.entity(e);
          auto grow = g.entity(e);
          for (std::size_t i = 0; i < d; ++i) {
            row[i] -= cfg.learning_rate * grow[i];
            grow[i] = 0;
          }
        }
        auto row = p.relation(t.relation);
        auto grow = g.relation(t.relation);
        for (std::size_t i = 0; i < d; ++i) {
          row[i] -= cfg.learning_rate * grow[i];
          grow[i] = 0;
        }
      }
      for (const auto& t : touched_rows) {
        normalize_row(p.entity(t.head));
        normalize_row(p.entity(t.tail));
      }
    }
    out_log.epoch_loss.push_back(total / static_cast<double>(pairs));
    if (on_epoch) on_epoch(epoch, p);
  }

  EmbeddingTable table(kg.entities().names(), kg.relations().names(), d);
  for (std::size_t e = 0; e < ne; ++e) {
    auto src = p.entity(e);
    std::copy(src.begin(), src.end(), table.entity(e).begin());
  }
  for (std::size_t r = 0; r < nr; ++r) {
    auto src = p.relation(r);
    std::copy(src.begin(), src.end(), table.relation(r).begin());
  }
  return table;
}

LinkPredictionMetrics evaluate_link_prediction(const EmbeddingTable& table, const kg::KnowledgeGraph& test,
                                               const kg::KnowledgeGraph& all) {
  if (test.triples().empty()) throw Error(ErrorKind::kInvalidArgument, "empty test set");
  const std::size_t d = table.dim(), ne = table.entity_count();

  auto to_table = [&](const kg::KnowledgeGraph& g, const kg::Triple& t) {
    return kg::Triple{static_cast<kg::EntityId>(table.entity_index(g.entities().name(t.head))),
                      static_cast<kg::RelationId>(table.relation_index(g.relations().name(t.relation))),
                      static_cast<kg::EntityId>(table.entity_index(g.entities().name(t.tail)))};
  };
  std::vector<kg::Triple> known_triples;
  known_triples.reserve(all.triples().size());
  for (const auto& t : all.triples()) known_triples.push_back(to_table(all, t));
  TripleIndex known(known_triples);

  // Entity rows widened once so every candidate score is computed identically.
  std::vector<double> ent(ne * d);
  for (std::size_t e = 0; e < ne; ++e)
    for (std::size_t i = 0; i < d; ++i) ent[e * d + i] = table.entity(e)[i];

  // Same association as transe_score: (h + r) − o.
  auto dist = [&](const std::vector<double>& hr, const kg::Triple& t, std::size_t e, bool tail_query) {
    double acc = 0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = tail_query ? hr[i] - ent[e * d + i] : (ent[e * d + i] + double(table.relation(t.relation)[i])) -
                                                                  ent[t.tail * d + i];
      acc += v * v;
    }
    return std::sqrt(acc);
  };

  LinkPredictionMetrics m;
  std::vector<double> hr(d);
  for (const auto& raw : test.triples()) {
    const auto t = to_table(test, raw);
    auto r = table.relation(t.relation);
    for (std::size_t i = 0; i < d; ++i) hr[i] = ent[t.head * d + i] + double(r[i]);
    for (int side = 0; side < 2; ++side) {
      const bool tail_query = side == 0;
      const auto truth = tail_query ? t.tail : t.head;
      const double true_score = dist(hr, t, truth, tail_query);
      double better = 0, ties = 0;
      for (std::size_t e = 0; e < ne; ++e) {
        if (e == truth) continue;
        kg::Triple cand = t;
        (tail_query ? cand.tail : cand.head) = static_cast<kg::EntityId>(e);
        if (known.contains(cand)) continue;
        const double s = dist(hr, t, e, tail_query);
        if (s < true_score)
          better += 1;
        else if (s == true_score)
          ties += 1;
      }
      m.ranks.push_back(1.0 + better + ties / 2.0);
    }
  }
  for (double rank : m.ranks) {
    m.mrr += 1.0 / rank;
    m.hits1 += rank <= 1.0 ? 1 : 0;
    m.hits10 += rank <= 10.0 ? 1 : 0;
  }
  const double n = static_cast<double>(m.ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits10 /= n;
  return m;
}

namespace {
constexpr std::string_view kMagic = "KDRM";
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::string serialize(const EmbeddingTable& table) {
  binio::Writer w;
  w.bytes(kMagic);
  w.put<std::uint16_t>(kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.entity_count()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.relation_count()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(table.dim()));
  for (const auto& n : table.entity_names()) w.str(n);
  for (const auto& n : table.relation_names()) w.str(n);
  for (std::size_t e = 0; e < table.entity_count(); ++e)
    for (float v : table.entity(e)) w.put<float>(v);
  for (std::size_t r = 0; r < table.relation_count(); ++r)
    for (float v : table.relation(r)) w.put<float>(v);
  return w.data();
}

EmbeddingTable deserialize(std::string_view bytes) {
  binio::Reader r(bytes);
  binio::expect_magic(r, kMagic, kVersion);
  const auto ne = r.get<std::uint32_t>();
  const auto nr = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  std::vector<std::string> en, rn;
  for (std::uint32_t i = 0; i < ne; ++i) en.push_back(r.str());
  for (std::uint32_t i = 0; i < nr; ++i) rn.push_back(r.str());
  if (r.remaining() != (std::size_t{ne} + nr) * dim * sizeof(float))
    throw Error(ErrorKind::kFormat, "embedding file size does not match header (" + std::to_string(ne) +
                                        " entities, " + std::to_string(nr) + " relations, dim " +
                                        std::to_string(dim) + ")");
  EmbeddingTable table(std::move(en), std::move(rn), dim);
  for (std::size_t e = 0; e < ne; ++e)
    for (float& v : table.entity(e)) v = r.get<float>();
  for (std::size_t k = 0; k < nr; ++k)
    for (float& v : table.relation(k)) v = r.get<float>();
  return table;
}

void save_embeddings(const EmbeddingTable& table, const std::string& path) {
  binio::write_file(path, serialize(table));
}

EmbeddingTable load_embeddings(const std::string& path) { return deserialize(binio::read_file(path)); }

}  // namespace kdream::kge
