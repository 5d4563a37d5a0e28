#include "kdream/kg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "kdream/binio.hpp"
#include "kdream/error.hpp"

namespace kdream::kg {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

bool is_blank(std::string_view line) {
  return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; });
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t lineno = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    auto line = strip_cr(text.substr(start, end - start));
    if (!line.empty() && line.front() != '#' && !is_blank(line)) fn(lineno, line);
    if (end == text.size()) break;
    start = end + 1;
  }
}

}  // namespace

std::uint32_t Vocabulary::intern(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<std::uint32_t>(names_.size());
  names_.emplace_back(name);
  index_.emplace(names_.back(), id);
  return id;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void KnowledgeGraph::add(std::string_view head, std::string_view relation, std::string_view tail) {
  Triple t;
  t.head = entities_.intern(head);
  t.relation = relations_.intern(relation);
  t.tail = entities_.intern(tail);
  triples_.push_back(t);
}

void KnowledgeGraph::set_role(EntityId e, Role r) {
  if (e >= entities_.size()) throw Error(ErrorKind::kInvalidArgument, "role for unknown entity id");
  if (roles_.size() < entities_.size()) roles_.resize(entities_.size(), Role::kUnknown);
  roles_[e] = r;
}

std::vector<EntityId> KnowledgeGraph::entities_with_role(Role r) const {
  std::vector<EntityId> out;
  for (EntityId e = 0; e < entities_.size(); ++e)
    if (role(e) == r) out.push_back(e);
  return out;
}

KnowledgeGraph KnowledgeGraph::with_triples(std::vector<Triple> triples) const {
  KnowledgeGraph out = *this;
  out.triples_ = std::move(triples);
  return out;
}

std::string KnowledgeGraph::to_tsv() const {
  std::string out;
  for (const auto& t : triples_) {
    out += entities_.name(t.head);
    out += '\t';
    out += relations_.name(t.relation);
    out += '\t';
    out += entities_.name(t.tail);
    out += '\n';
  }
  return out;
}

KnowledgeGraph parse_triples(std::string_view text) {
  KnowledgeGraph kg;
  for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    auto fields = split_tabs(line);
    if (fields.size() != 3)
      throw ParseError(lineno, "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty() || fields[2].empty()) throw ParseError(lineno, "empty field");
    kg.add(fields[0], fields[1], fields[2]);
  });
  if (kg.triples().empty()) throw Error(ErrorKind::kParse, "triple file contains no triples");
  return kg;
}

KnowledgeGraph load_triples(const std::string& path) { return parse_triples(binio::read_file(path)); }

void apply_roles(KnowledgeGraph& kg, std::string_view text) {
  for_each_line(text, [&](std::size_t lineno, std::string_view line) {
    auto fields = split_tabs(line);
    if (fields.size() != 2) throw ParseError(lineno, "expected `entity<TAB>role`");
    auto id = kg.entities().find(fields[0]);
    if (!id) throw ParseError(lineno, "unknown entity '" + std::string(fields[0]) + "'");
    Role r;
    if (fields[1] == "drug")
      r = Role::kDrug;
    else if (fields[1] == "target")
      r = Role::kTarget;
    else if (fields[1] == "other")
      r = Role::kOther;
    else
      throw ParseError(lineno, "unknown role '" + std::string(fields[1]) + "'");
    kg.set_role(*id, r);
  });
}

void load_roles(KnowledgeGraph& kg, const std::string& path) { apply_roles(kg, binio::read_file(path)); }

std::string roles_to_tsv(const KnowledgeGraph& kg) {
  std::string out;
  for (EntityId e = 0; e < kg.entity_count(); ++e) {
    const char* name = nullptr;
    switch (kg.role(e)) {
      case Role::kDrug: name = "drug"; break;
      case Role::kTarget: name = "target"; break;
      case Role::kOther: name = "other"; break;
      case Role::kUnknown: break;
    }
    if (!name) continue;
    out += kg.entities().name(e);
    out += '\t';
    out += name;
    out += '\n';
  }
  return out;
}

KnowledgeGraph normalize(const KnowledgeGraph& kg, NormalizeReport* report) {
  NormalizeReport rep;
  std::unordered_set<Triple, TripleHash> kept;
  std::vector<Triple> out;
  out.reserve(kg.triples().size());
  for (const auto& t : kg.triples()) {
    if (kept.count(t)) {
      ++rep.duplicates_removed;
      continue;
    }
    // A self-loop is its own reverse; it is only ever dropped as a duplicate.
    if (t.head != t.tail && kept.count(Triple{t.tail, t.relation, t.head})) {
      ++rep.reverses_removed;
      continue;
    }
    kept.insert(t);
    out.push_back(t);
  }
  if (report) *report = rep;
  return kg.with_triples(std::move(out));
}

Split split(const KnowledgeGraph& kg, SplitRatios ratios, std::uint64_t seed) {
  if (!(ratios.train > 0) || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9)
    throw Error(ErrorKind::kInvalidArgument, "split ratios must be non-negative, train positive, and sum to 1");

  const auto& all = kg.triples();
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  auto rng = derive_stream(seed, "kg.split");
  std::shuffle(order.begin(), order.end(), rng);

  const auto n = all.size();
  const auto n_valid = static_cast<std::size_t>(std::floor(ratios.valid * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * static_cast<double>(n) + 1e-9));
  const auto n_train = n - n_valid - n_test;

  std::vector<Triple> train, valid, test;
  for (std::size_t i = 0; i < n_train; ++i) train.push_back(all[order[i]]);

  std::vector<bool> ent_seen(kg.entity_count(), false), rel_seen(kg.relation_count(), false);
  auto mark = [&](const Triple& t) {
    ent_seen[t.head] = ent_seen[t.tail] = true;
    rel_seen[t.relation] = true;
  };
  for (const auto& t : train) mark(t);

  auto place = [&](std::size_t begin, std::size_t end, std::vector<Triple>& dest) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& t = all[order[i]];
      if (ent_seen[t.head] && ent_seen[t.tail] && rel_seen[t.relation]) {
        dest.push_back(t);
      } else {
        train.push_back(t);
        mark(t);
      }
    }
  };
  place(n_train, n_train + n_valid, valid);
  place(n_train + n_valid, n, test);

  return Split{kg.with_triples(std::move(train)), kg.with_triples(std::move(valid)), kg.with_triples(std::move(test))};
}

}  // namespace kdream::kg
