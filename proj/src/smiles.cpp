#include <algorithm>
#include <map>
#include <numeric>

#include "kdream/molgraph.hpp"

namespace kdream::mol {

SmilesError::SmilesError(SmilesErrorKind kind, std::size_t offset, const std::string& what)
    : Error(ErrorKind::kParse, "SMILES offset " + std::to_string(offset) + ": " + what), kind_(kind), offset_(offset) {}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

int bond_symbol_order(char c) {
  switch (c) {
    case '-': return 1;
    case '=': return 2;
    case '#': return 3;
    default: return 0;
  }
}

class Parser {
 public:
  Parser(std::string_view s, bool check_valence) : s_(s), check_valence_(check_valence) {}

  MolecularGraph run() {
    if (s_.empty()) throw SmilesError(SmilesErrorKind::kSyntax, 0, "empty input");
    while (pos_ < s_.size()) step();
    if (s_.back() == '.') throw SmilesError(SmilesErrorKind::kSyntax, s_.size() - 1, "misplaced '.'");
    if (pending_order_) throw SmilesError(SmilesErrorKind::kSyntax, pending_offset_, "dangling bond");
    if (!branches_.empty())
      throw SmilesError(SmilesErrorKind::kUnbalancedParenthesis, branches_.back().second, "unclosed '('");
    if (!rings_.empty())
      throw SmilesError(SmilesErrorKind::kUnclosedRing, rings_.begin()->second.offset,
                        "unclosed ring bond " + std::to_string(rings_.begin()->first));
    for (std::size_t i = 0; check_valence_ && i < g_.atom_count(); ++i) {
      const auto& a = g_.atom(i);
      const int used = g_.bond_order_sum(i) + std::max(a.hydrogens, 0);
      if (used > max_valence(a.element) + a.charge)
        throw SmilesError(SmilesErrorKind::kValence, atom_offsets_[i],
                          "valence " + std::to_string(used) + " exceeds limit for " + std::string(symbol(a.element)));
    }
    return std::move(g_);
  }

 private:
  struct OpenRing {
    std::size_t atom;
    int order;
    std::size_t offset;
  };

  void step() {
    const char c = s_[pos_];
    if (c == '(') {
      if (!prev_) throw SmilesError(SmilesErrorKind::kSyntax, pos_, "branch before any atom");
      if (pending_order_) throw SmilesError(SmilesErrorKind::kSyntax, pos_, "bond symbol before branch");
      if (pos_ + 1 < s_.size() && s_[pos_ + 1] == ')') throw SmilesError(SmilesErrorKind::kSyntax, pos_, "empty branch");
      branches_.emplace_back(*prev_, pos_);
      ++pos_;
    } else if (c == ')') {
      if (branches_.empty()) throw SmilesError(SmilesErrorKind::kUnbalancedParenthesis, pos_, "unmatched ')'");
      if (pending_order_) throw SmilesError(SmilesErrorKind::kSyntax, pending_offset_, "dangling bond");
      prev_ = branches_.back().first;
      branches_.pop_back();
      ++pos_;
    } else if (int order = bond_symbol_order(c)) {
      if (!prev_) throw SmilesError(SmilesErrorKind::kSyntax, pos_, "bond before any atom");
      if (pending_order_) throw SmilesError(SmilesErrorKind::kSyntax, pos_, "consecutive bond symbols");
      pending_order_ = order;
      pending_offset_ = pos_;
      ++pos_;
    } else if (c == '.') {
      if (!prev_ || pending_order_ || !branches_.empty())
        throw SmilesError(SmilesErrorKind::kSyntax, pos_, "misplaced '.'");
      prev_.reset();
      ++pos_;
    } else if ((is_digit(c) && c != '0') || c == '%') {
      ring_closure();
    } else if (c == '[') {
      bracket_atom();
    } else {
      organic_atom();
    }
  }

  void ring_closure() {
    const std::size_t start = pos_;
    if (!prev_) throw SmilesError(SmilesErrorKind::kSyntax, pos_, "ring bond before any atom");
    int number;
    if (s_[pos_] == '%') {
      if (pos_ + 2 >= s_.size() || !is_digit(s_[pos_ + 1]) || !is_digit(s_[pos_ + 2]))
        throw SmilesError(SmilesErrorKind::kSyntax, pos_, "'%' must be followed by two digits");
      number = (s_[pos_ + 1] - '0') * 10 + (s_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      number = s_[pos_] - '0';
      ++pos_;
    }
    auto it = rings_.find(number);
    if (it == rings_.end()) {
      rings_[number] = {*prev_, pending_order_, start};
    } else {
      const auto open = it->second;
      rings_.erase(it);
      if (open.order && pending_order_ && open.order != pending_order_)
        throw SmilesError(SmilesErrorKind::kSyntax, start, "conflicting ring bond orders");
      if (open.atom == *prev_) throw SmilesError(SmilesErrorKind::kSyntax, start, "ring bond to itself");
      if (g_.bond_order(open.atom, *prev_))
        throw SmilesError(SmilesErrorKind::kSyntax, start, "ring closure duplicates an existing bond");
      const int order = open.order ? open.order : (pending_order_ ? pending_order_ : 1);
      g_.add_bond(open.atom, *prev_, order);
    }
    pending_order_ = 0;
  }

  void attach(Atom atom, std::size_t offset) {
    const auto idx = g_.add_atom(atom);
    atom_offsets_.push_back(offset);
    if (prev_) g_.add_bond(*prev_, idx, pending_order_ ? pending_order_ : 1);
    pending_order_ = 0;
    prev_ = idx;
  }

  void organic_atom() {
    const std::size_t start = pos_;
    if (pos_ + 1 < s_.size()) {
      if (auto e = element_from_symbol(s_.substr(pos_, 2)); e && s_[pos_ + 1] >= 'a' && s_[pos_ + 1] <= 'z') {
        pos_ += 2;
        attach(Atom{*e, 0, -1}, start);
        return;
      }
    }
    if (auto e = element_from_symbol(s_.substr(pos_, 1))) {
      ++pos_;
      attach(Atom{*e, 0, -1}, start);
      return;
    }
    throw SmilesError(SmilesErrorKind::kUnknownSymbol, pos_, std::string("unsupported symbol '") + s_[pos_] + "'");
  }

  void bracket_atom() {
    const std::size_t start = pos_;
    const auto close = s_.find(']', pos_);
    if (close == std::string_view::npos) throw SmilesError(SmilesErrorKind::kSyntax, pos_, "unterminated bracket atom");
    std::size_t p = pos_ + 1;
    auto unknown = [&](std::size_t at) {
      return SmilesError(SmilesErrorKind::kUnknownSymbol, at,
                         std::string("unsupported bracket content '") + (at < close ? s_[at] : ']') + "'");
    };
    std::optional<Element> elem;
    if (p + 1 < close && s_[p + 1] >= 'a' && s_[p + 1] <= 'z') {
      elem = element_from_symbol(s_.substr(p, 2));
      if (elem) p += 2;
    }
    if (!elem && p < close) {
      elem = element_from_symbol(s_.substr(p, 1));
      if (elem) ++p;
    }
    if (!elem) throw unknown(p);
    int hydrogens = 0;
    if (p < close && s_[p] == 'H') {
      ++p;
      hydrogens = 1;
      if (p < close && is_digit(s_[p])) {
        hydrogens = 0;
        while (p < close && is_digit(s_[p])) hydrogens = hydrogens * 10 + (s_[p++] - '0');
      }
    }
    int charge = 0;
    if (p < close && (s_[p] == '+' || s_[p] == '-')) {
      const char sign = s_[p];
      const int unit = sign == '+' ? 1 : -1;
      ++p;
      if (p < close && is_digit(s_[p])) {
        int mag = 0;
        while (p < close && is_digit(s_[p])) mag = mag * 10 + (s_[p++] - '0');
        charge = unit * mag;
      } else {
        charge = unit;
        while (p < close && s_[p] == sign) {
          charge += unit;
          ++p;
        }
      }
    }
    if (p != close) throw unknown(p);
    pos_ = close + 1;
    attach(Atom{*elem, charge, hydrogens}, start);
  }

  std::string_view s_;
  bool check_valence_;
  std::size_t pos_ = 0;
  MolecularGraph g_;
  std::vector<std::size_t> atom_offsets_;
  std::optional<std::size_t> prev_;
  int pending_order_ = 0;
  std::size_t pending_offset_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> branches_;
  std::map<int, OpenRing> rings_;
};

// ---- canonical ordering ----

using Ranks = std::vector<std::size_t>;

// Dense ranks of `keys`; equal keys share a rank, order follows the key order.
template <typename Key>
Ranks dense_rank(const std::vector<Key>& keys) {
  std::vector<std::size_t> idx(keys.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return keys[a] < keys[b]; });
  Ranks r(keys.size());
  std::size_t rank = 0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k > 0 && keys[idx[k - 1]] < keys[idx[k]]) ++rank;
    r[idx[k]] = rank;
  }
  return r;
}

std::size_t class_count(const Ranks& r) {
  return r.empty() ? 0 : *std::max_element(r.begin(), r.end()) + 1;
}

Ranks refine(const MolecularGraph& g, Ranks ranks) {
  using Key = std::pair<std::size_t, std::vector<std::pair<int, std::size_t>>>;
  std::vector<Key> keys(g.atom_count());
  ranks = dense_rank(ranks);
  while (true) {
    for (std::size_t i = 0; i < g.atom_count(); ++i) {
      keys[i].first = ranks[i];
      auto& env = keys[i].second;
      env.clear();
      for (auto j : g.neighbors(i)) env.emplace_back(g.bond_order(i, j), ranks[j]);
      std::sort(env.begin(), env.end());
    }
    auto next = dense_rank(keys);
    const bool stable = class_count(next) == class_count(ranks);
    ranks = std::move(next);
    if (stable) return ranks;
  }
}

Ranks initial_ranks(const MolecularGraph& g) {
  using Key = std::array<int, 5>;
  std::vector<Key> keys(g.atom_count());
  for (std::size_t i = 0; i < g.atom_count(); ++i) {
    const auto& a = g.atom(i);
    keys[i] = {static_cast<int>(a.element), a.charge, g.hydrogen_count(i), g.degree(i), g.bond_order_sum(i)};
  }
  return dense_rank(keys);
}

std::string atom_token(const MolecularGraph& g, std::size_t i) {
  const auto& a = g.atom(i);
  if (a.charge == 0 && a.hydrogens < 0) return std::string(symbol(a.element));
  std::string out = "[";
  out += symbol(a.element);
  const int h = g.hydrogen_count(i);
  if (h > 0) {
    out += 'H';
    if (h > 1) out += std::to_string(h);
  }
  if (a.charge != 0) {
    out += a.charge > 0 ? '+' : '-';
    if (std::abs(a.charge) > 1) out += std::to_string(std::abs(a.charge));
  }
  out += ']';
  return out;
}

std::string_view bond_token(int order) {
  switch (order) {
    case 2: return "=";
    case 3: return "#";
    default: return "";
  }
}

std::string ring_label(int n) { return n < 10 ? std::to_string(n) : "%" + std::to_string(n); }

// SMILES text for a graph whose ranks are all distinct.
std::string emit(const MolecularGraph& g, const Ranks& ranks) {
  const std::size_t n = g.atom_count();
  const std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::vector<std::size_t>> sorted_nbrs(n);
  for (std::size_t i = 0; i < n; ++i) {
    sorted_nbrs[i] = g.neighbors(i);
    std::sort(sorted_nbrs[i].begin(), sorted_nbrs[i].end(), [&](auto a, auto b) { return ranks[a] < ranks[b]; });
  }
  std::vector<std::size_t> pre(n, none), parent(n, none);
  std::vector<std::vector<std::size_t>> children(n), ring_partners(n);
  std::size_t counter = 0;

  auto dfs = [&](auto&& self, std::size_t v) -> void {
    pre[v] = counter++;
    for (auto w : sorted_nbrs[v]) {
      if (w == parent[v]) continue;
      if (pre[w] == none) {
        parent[w] = v;
        children[v].push_back(w);
        self(self, w);
      } else if (pre[w] < pre[v] &&
                 std::find(ring_partners[v].begin(), ring_partners[v].end(), w) == ring_partners[v].end()) {
        ring_partners[v].push_back(w);
        ring_partners[w].push_back(v);
      }
    }
  };

  std::vector<std::size_t> by_rank(n);
  std::iota(by_rank.begin(), by_rank.end(), 0);
  std::sort(by_rank.begin(), by_rank.end(), [&](auto a, auto b) { return ranks[a] < ranks[b]; });

  std::string out;
  std::map<std::pair<std::size_t, std::size_t>, int> ring_digit;
  std::vector<bool> digit_used(100, false);

  auto write = [&](auto&& self, std::size_t v) -> void {
    out += atom_token(g, v);
    auto partners = ring_partners[v];
    std::sort(partners.begin(), partners.end(), [&](auto a, auto b) { return pre[a] < pre[b]; });
    for (auto w : partners) {
      const auto key = std::make_pair(std::min(v, w), std::max(v, w));
      if (pre[w] < pre[v]) {
        const int d = ring_digit.at(key);
        digit_used[static_cast<std::size_t>(d)] = false;
        out += ring_label(d);
      } else {
        int d = 1;
        while (digit_used[static_cast<std::size_t>(d)]) ++d;
        digit_used[static_cast<std::size_t>(d)] = true;
        ring_digit[key] = d;
        out += bond_token(g.bond_order(v, w));
        out += ring_label(d);
      }
    }
    const auto& kids = children[v];
    for (std::size_t k = 0; k < kids.size(); ++k) {
      const bool last = k + 1 == kids.size();
      if (!last) out += '(';
      out += bond_token(g.bond_order(v, kids[k]));
      self(self, kids[k]);
      if (!last) out += ')';
    }
  };

  bool first = true;
  for (auto start : by_rank) {
    if (pre[start] != none) continue;
    dfs(dfs, start);
    if (!first) out += '.';
    first = false;
    write(write, start);
  }
  return out;
}

constexpr std::size_t kMaxCanonicalLeaves = 4096;

struct Search {
  const MolecularGraph& g;
  std::string best;
  Ranks best_ranks;
  std::size_t leaves = 0;

  void run(Ranks ranks) {
    ranks = refine(g, std::move(ranks));
    const auto classes = class_count(ranks);
    if (classes == ranks.size()) {
      auto s = emit(g, ranks);
      if (best_ranks.empty() || s < best) {
        best = std::move(s);
        best_ranks = ranks;
      }
      ++leaves;
      return;
    }
    std::vector<std::size_t> count(classes, 0);
    for (auto r : ranks) ++count[r];
    std::size_t target = 0;
    while (count[target] < 2) ++target;
    for (std::size_t c = 0; c < ranks.size(); ++c) {
      if (ranks[c] != target) continue;
      if (leaves >= kMaxCanonicalLeaves) return;
      Ranks split(ranks.size());
      for (std::size_t i = 0; i < ranks.size(); ++i) split[i] = 2 * ranks[i] + 1;
      split[c] -= 1;
      run(std::move(split));
    }
  }
};

}  // namespace

MolecularGraph parse_smiles(std::string_view text, bool check_valence) { return Parser(text, check_valence).run(); }

std::vector<std::size_t> canonical_ranks(const MolecularGraph& g) {
  if (g.atom_count() == 0) return {};
  Search s{g, {}, {}, 0};
  s.run(initial_ranks(g));
  return s.best_ranks;
}

std::string write_smiles(const MolecularGraph& g) {
  if (g.atom_count() == 0) return "";
  Search s{g, {}, {}, 0};
  s.run(initial_ranks(g));
  return s.best;
}

}  // namespace kdream::mol
