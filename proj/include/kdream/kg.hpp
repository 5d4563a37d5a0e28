#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kdream/rng.hpp"

namespace kdream::kg {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

struct Triple {
  EntityId head = 0;
  RelationId relation = 0;
  EntityId tail = 0;

  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
  std::size_t operator()(const Triple& t) const noexcept {
    return splitmix64((std::uint64_t{t.head} << 32) ^ (std::uint64_t{t.relation} << 16) ^ t.tail ^
                      (std::uint64_t{t.relation} << 48));
  }
};

/// Interned name table; indices are assigned in first-seen order.
class Vocabulary {
 public:
  std::uint32_t intern(std::string_view name);
  std::optional<std::uint32_t> find(std::string_view name) const;
  const std::string& name(std::uint32_t id) const { return names_.at(id); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

enum class Role : std::uint8_t { kUnknown, kDrug, kTarget, kOther };

struct NormalizeReport {
  std::size_t duplicates_removed = 0;
  std::size_t reverses_removed = 0;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Adds a triple by name, interning unseen names. Does not deduplicate.
  void add(std::string_view head, std::string_view relation, std::string_view tail);
  void add(const Triple& t) { triples_.push_back(t); }

  const std::vector<Triple>& triples() const { return triples_; }
  const Vocabulary& entities() const { return entities_; }
  const Vocabulary& relations() const { return relations_; }
  std::size_t entity_count() const { return entities_.size(); }
  std::size_t relation_count() const { return relations_.size(); }

  Role role(EntityId e) const { return e < roles_.size() ? roles_[e] : Role::kUnknown; }
  void set_role(EntityId e, Role r);
  std::vector<EntityId> entities_with_role(Role r) const;

  /// Same vocabularies and roles, different triple list.
  KnowledgeGraph with_triples(std::vector<Triple> triples) const;

  std::string to_tsv() const;

 private:
  std::vector<Triple> triples_;
  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Role> roles_;
};

KnowledgeGraph parse_triples(std::string_view text);
KnowledgeGraph load_triples(const std::string& path);

/// Role file: `entity<TAB>role`, role in {drug, target, other}. Unknown entities are errors.
void apply_roles(KnowledgeGraph& kg, std::string_view text);
void load_roles(KnowledgeGraph& kg, const std::string& path);
std::string roles_to_tsv(const KnowledgeGraph& kg);

/// Drops duplicate triples and, for each (s,r,o)/(o,r,s) pair, the later one in input order.
KnowledgeGraph normalize(const KnowledgeGraph& kg, NormalizeReport* report = nullptr);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct Split {
  KnowledgeGraph train;
  KnowledgeGraph valid;
  KnowledgeGraph test;
};

/// Seeded shuffle then cut. Valid/test triples whose entities or relation are absent
/// from train are moved to train.
Split split(const KnowledgeGraph& kg, SplitRatios ratios, std::uint64_t seed);

}  // namespace kdream::kg
