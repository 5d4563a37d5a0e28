#include "kdream/molgraph.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>

#include "kdream/binio.hpp"
#include "kdream/rng.hpp"

namespace kdream::mol {

namespace {

constexpr std::array<std::string_view, kElementCount> kSymbols = {"C", "N", "O", "F", "P", "S", "Cl", "Br", "I"};
constexpr std::array<int, kElementCount> kMaxValence = {4, 3, 2, 1, 5, 6, 1, 1, 1};

std::vector<int> standard_valences(Element e) {
  switch (e) {
    case Element::P: return {3, 5};
    case Element::S: return {2, 4, 6};
    default: return {max_valence(e)};
  }
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) { return splitmix64(h ^ splitmix64(v + 0x9e3779b97f4a7c15ULL)); }

}  // namespace

std::string_view symbol(Element e) { return kSymbols[static_cast<std::size_t>(e)]; }

std::optional<Element> element_from_symbol(std::string_view s) {
  for (std::size_t i = 0; i < kElementCount; ++i)
    if (kSymbols[i] == s) return static_cast<Element>(i);
  return std::nullopt;
}

int max_valence(Element e) { return kMaxValence[static_cast<std::size_t>(e)]; }

std::size_t MolecularGraph::add_atom(Atom atom) {
  atoms_.push_back(atom);
  adj_.emplace_back();
  adj_order_.emplace_back();
  return atoms_.size() - 1;
}

void MolecularGraph::add_bond(std::size_t a, std::size_t b, int order) {
  if (a >= atoms_.size() || b >= atoms_.size()) throw Error(ErrorKind::kInvalidArgument, "bond endpoint out of range");
  if (a == b) throw Error(ErrorKind::kInvalidArgument, "bond endpoints must differ");
  if (order < 1 || order > 3) throw Error(ErrorKind::kInvalidArgument, "bond order must be 1, 2 or 3");
  if (bond_order(a, b) != 0)
    throw Error(ErrorKind::kInvalidArgument,
                "duplicate bond between atoms " + std::to_string(a) + " and " + std::to_string(b));
  bonds_.push_back({a, b, order});
  adj_[a].push_back(b);
  adj_order_[a].push_back(order);
  adj_[b].push_back(a);
  adj_order_[b].push_back(order);
}

int MolecularGraph::bond_order(std::size_t a, std::size_t b) const {
  const auto& n = adj_.at(a);
  for (std::size_t k = 0; k < n.size(); ++k)
    if (n[k] == b) return adj_order_[a][k];
  return 0;
}

int MolecularGraph::bond_order_sum(std::size_t i) const {
  const auto& o = adj_order_.at(i);
  return std::accumulate(o.begin(), o.end(), 0);
}

int MolecularGraph::hydrogen_count(std::size_t i) const {
  const auto& a = atoms_.at(i);
  if (a.hydrogens >= 0) return a.hydrogens;
  const int used = bond_order_sum(i);
  for (int v : standard_valences(a.element)) {
    const int allowed = v + a.charge;
    if (allowed >= used) return allowed - used;
  }
  return 0;
}

std::vector<std::size_t> MolecularGraph::components(std::size_t* count) const {
  const std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> comp(atoms_.size(), none);
  std::size_t next = 0;
  for (std::size_t s = 0; s < atoms_.size(); ++s) {
    if (comp[s] != none) continue;
    std::vector<std::size_t> stack{s};
    comp[s] = next;
    while (!stack.empty()) {
      auto v = stack.back();
      stack.pop_back();
      for (auto w : adj_[v])
        if (comp[w] == none) {
          comp[w] = next;
          stack.push_back(w);
        }
    }
    ++next;
  }
  if (count) *count = next;
  return comp;
}

MolecularGraph MolecularGraph::largest_component() const {
  std::size_t n = 0;
  auto comp = components(&n);
  if (n <= 1) return *this;
  std::vector<std::size_t> sizes(n, 0);
  for (auto c : comp) ++sizes[c];
  const auto best = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  MolecularGraph out;
  std::vector<std::size_t> remap(atoms_.size(), 0);
  for (std::size_t i = 0; i < atoms_.size(); ++i)
    if (comp[i] == best) remap[i] = out.add_atom(atoms_[i]);
  for (const auto& b : bonds_)
    if (comp[b.a] == best) out.add_bond(remap[b.a], remap[b.b], b.order);
  return out;
}

std::size_t MolecularGraph::ring_count() const {
  std::size_t n = 0;
  components(&n);
  return bonds_.size() + n - atoms_.size();
}

std::vector<bool> MolecularGraph::ring_atoms() const {
  // An atom is on a cycle iff it touches a bond that is not a bridge.
  const std::size_t n = atoms_.size();
  std::vector<int> disc(n, -1), low(n, 0);
  std::vector<std::pair<std::size_t, std::size_t>> bridges;
  int timer = 0;
  std::function<void(std::size_t, std::size_t)> dfs = [&](std::size_t v, std::size_t parent) {
    disc[v] = low[v] = timer++;
    for (auto w : adj_[v]) {
      if (w == parent) continue;
      if (disc[w] >= 0) {
        low[v] = std::min(low[v], disc[w]);
      } else {
        dfs(w, v);
        low[v] = std::min(low[v], low[w]);
        if (low[w] > disc[v]) bridges.emplace_back(std::min(v, w), std::max(v, w));
      }
    }
  };
  for (std::size_t s = 0; s < n; ++s)
    if (disc[s] < 0) dfs(s, static_cast<std::size_t>(-1));
  std::sort(bridges.begin(), bridges.end());
  std::vector<bool> on_ring(n, false);
  for (const auto& b : bonds_) {
    const std::pair<std::size_t, std::size_t> key{std::min(b.a, b.b), std::max(b.a, b.b)};
    if (!std::binary_search(bridges.begin(), bridges.end(), key)) on_ring[b.a] = on_ring[b.b] = true;
  }
  return on_ring;
}

MolecularGraph MolecularGraph::permuted(const std::vector<std::size_t>& perm) const {
  if (perm.size() != atoms_.size()) throw Error(ErrorKind::kInvalidArgument, "permutation size mismatch");
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  MolecularGraph out;
  for (std::size_t k = 0; k < perm.size(); ++k) out.add_atom(atoms_[inv[k]]);
  for (const auto& b : bonds_) out.add_bond(perm[b.a], perm[b.b], b.order);
  return out;
}

std::string_view to_string(InvalidReason r) {
  switch (r) {
    case InvalidReason::kNone: return "ok";
    case InvalidReason::kEmpty: return "empty";
    case InvalidReason::kValence: return "valence";
    case InvalidReason::kDisconnected: return "disconnected";
  }
  return "?";
}

Validity is_valid(const MolecularGraph& g) {
  if (g.atom_count() == 0) return {false, InvalidReason::kEmpty, std::nullopt};
  for (std::size_t i = 0; i < g.atom_count(); ++i) {
    const auto& a = g.atom(i);
    const int used = g.bond_order_sum(i) + std::max(a.hydrogens, 0);
    if (used > max_valence(a.element) + a.charge) return {false, InvalidReason::kValence, i};
  }
  std::size_t n = 0;
  g.components(&n);
  if (n != 1) return {false, InvalidReason::kDisconnected, std::nullopt};
  return {true, InvalidReason::kNone, std::nullopt};
}

namespace {

std::size_t diameter(const MolecularGraph& g) {
  std::size_t best = 0;
  const std::size_t n = g.atom_count();
  std::vector<std::size_t> dist(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), static_cast<std::size_t>(-1));
    std::queue<std::size_t> q;
    dist[s] = 0;
    q.push(s);
    while (!q.empty()) {
      auto v = q.front();
      q.pop();
      best = std::max(best, dist[v]);
      for (auto w : g.neighbors(v))
        if (dist[w] == static_cast<std::size_t>(-1)) {
          dist[w] = dist[v] + 1;
          q.push(w);
        }
    }
  }
  return best;
}

std::uint64_t atom_seed(const Atom& a) {
  std::uint64_t h = mix(0x4b44524dULL, static_cast<std::uint64_t>(a.element));
  h = mix(h, static_cast<std::uint64_t>(a.charge + 64));
  return mix(h, static_cast<std::uint64_t>(a.hydrogens + 64));
}

}  // namespace

std::uint64_t canonical_key(const MolecularGraph& g) {
  const std::size_t n = g.atom_count();
  std::vector<std::uint64_t> label(n), next(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = mix(atom_seed(g.atom(i)), static_cast<std::uint64_t>(g.degree(i)));
  const std::size_t rounds = std::max<std::size_t>(1, 3 * diameter(g));
  std::vector<std::uint64_t> env;
  for (std::size_t round = 0; round < rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      env.clear();
      for (auto j : g.neighbors(i)) env.push_back(mix(static_cast<std::uint64_t>(g.bond_order(i, j)), label[j]));
      std::sort(env.begin(), env.end());
      std::uint64_t h = mix(label[i], env.size());
      for (auto e : env) h = mix(h, e);
      next[i] = h;
    }
    label.swap(next);
  }
  std::sort(label.begin(), label.end());
  std::uint64_t key = mix(mix(0x6b6579ULL, n), g.bond_count());
  for (auto l : label) key = mix(key, l);
  return key;
}

Fingerprint::Fingerprint(std::size_t nbits) : nbits_(nbits), words_((nbits + 63) / 64, 0) {
  if (nbits == 0 || (nbits & (nbits - 1)) != 0)
    throw Error(ErrorKind::kInvalidArgument, "fingerprint length must be a power of two");
}

std::size_t Fingerprint::count() const {
  std::size_t c = 0;
  for (auto w : words_) c += static_cast<std::size_t>(__builtin_popcountll(w));
  return c;
}

Fingerprint fingerprint(const MolecularGraph& g, int radius, std::size_t nbits) {
  require(radius >= 0, "fingerprint radius must be >= 0");
  Fingerprint fp(nbits);
  const std::size_t n = g.atom_count();
  const auto in_ring = g.ring_atoms();
  std::vector<std::uint64_t> id(n), next(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t h = atom_seed(Atom{g.atom(i).element, g.atom(i).charge, -1});
    h = mix(h, static_cast<std::uint64_t>(g.degree(i)));
    h = mix(h, static_cast<std::uint64_t>(g.hydrogen_count(i)));
    id[i] = mix(h, in_ring[i] ? 1 : 0);
    fp.set(id[i] & (nbits - 1));
  }
  std::vector<std::pair<int, std::uint64_t>> env;
  for (int r = 1; r <= radius; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      env.clear();
      for (auto j : g.neighbors(i)) env.emplace_back(g.bond_order(i, j), id[j]);
      std::sort(env.begin(), env.end());
      std::uint64_t h = mix(id[i], static_cast<std::uint64_t>(r));
      for (auto& [o, nb] : env) h = mix(mix(h, static_cast<std::uint64_t>(o)), nb);
      next[i] = h;
      fp.set(h & (nbits - 1));
    }
    id.swap(next);
  }
  return fp;
}

double tanimoto(const Fingerprint& a, const Fingerprint& b) {
  if (a.size() != b.size())
    throw Error(ErrorKind::kDimensionMismatch,
                "fingerprint length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  std::size_t both = 0, either = 0;
  for (std::size_t k = 0; k < a.words().size(); ++k) {
    both += static_cast<std::size_t>(__builtin_popcountll(a.words()[k] & b.words()[k]));
    either += static_cast<std::size_t>(__builtin_popcountll(a.words()[k] | b.words()[k]));
  }
  return either == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(either);
}

std::vector<MolecularGraph> parse_smiles_list(std::string_view text) {
  std::vector<MolecularGraph> out;
  std::size_t lineno = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    auto line = text.substr(start, end - start);
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.remove_suffix(1);
    while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
    // Allow trailing columns (e.g. generation TSV): only the first field is the SMILES.
    if (auto tab = line.find('\t'); tab != std::string_view::npos) line = line.substr(0, tab);
    if (!line.empty() && line.front() != '#') {
      try {
        out.push_back(parse_smiles(line));
      } catch (const SmilesError& e) {
        throw ParseError(lineno, e.what());
      }
    }
    start = end + 1;
  }
  return out;
}

std::vector<MolecularGraph> load_smiles_file(const std::string& path) {
  return parse_smiles_list(binio::read_file(path));
}

}  // namespace kdream::mol
