#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdream/error.hpp"

namespace kdream::mol {

/// Supported heavy-atom alphabet. The enumerator value is the one-hot channel index.
enum class Element : std::uint8_t { C, N, O, F, P, S, Cl, Br, I };
inline constexpr std::size_t kElementCount = 9;

std::string_view symbol(Element e);
std::optional<Element> element_from_symbol(std::string_view s);
/// Maximum total bond order for a neutral atom (C=4, N=3, O=2, F=1, P=5, S=6, halogens 1).
int max_valence(Element e);

struct Atom {
  Element element = Element::C;
  int charge = 0;
  /// Hydrogen count written in a bracket atom; -1 means derived from valence.
  int hydrogens = -1;

  friend bool operator==(const Atom&, const Atom&) = default;
};

struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;
  int order = 1;

  friend bool operator==(const Bond&, const Bond&) = default;
};

/// Heavy-atom graph with explicit bond orders. Construction enforces distinct, in-range
/// endpoints, orders in 1..3 and at most one bond per pair; valence is checked by is_valid.
class MolecularGraph {
 public:
  MolecularGraph() = default;

  std::size_t add_atom(Atom atom);
  std::size_t add_atom(Element e) { return add_atom(Atom{e, 0, -1}); }
  void add_bond(std::size_t a, std::size_t b, int order);

  std::size_t atom_count() const { return atoms_.size(); }
  std::size_t bond_count() const { return bonds_.size(); }
  const std::vector<Atom>& atoms() const { return atoms_; }
  const Atom& atom(std::size_t i) const { return atoms_.at(i); }
  const std::vector<Bond>& bonds() const { return bonds_; }

  /// Neighbour atom indices (in bond insertion order).
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return adj_.at(i); }
  /// 0 when unbonded.
  int bond_order(std::size_t a, std::size_t b) const;
  int bond_order_sum(std::size_t i) const;
  int degree(std::size_t i) const { return static_cast<int>(adj_.at(i).size()); }
  /// Bracket hydrogens, or the smallest standard valence that fits the bond sum.
  int hydrogen_count(std::size_t i) const;

  /// Component id per atom; ids are numbered by lowest member atom.
  std::vector<std::size_t> components(std::size_t* count = nullptr) const;
  /// Largest connected component (ties: the one holding the lowest atom index), atoms kept in order.
  MolecularGraph largest_component() const;
  /// Independent cycle count: bonds − atoms + components.
  std::size_t ring_count() const;
  /// Atoms lying on at least one cycle.
  std::vector<bool> ring_atoms() const;

  /// Same graph with atoms relabelled so new index perm[i] holds old atom i.
  MolecularGraph permuted(const std::vector<std::size_t>& perm) const;

 private:
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::vector<std::size_t>> adj_;
  std::vector<std::vector<int>> adj_order_;
};

enum class SmilesErrorKind { kSyntax, kUnbalancedParenthesis, kUnclosedRing, kUnknownSymbol, kValence };

class SmilesError : public Error {
 public:
  SmilesError(SmilesErrorKind kind, std::size_t offset, const std::string& what);
  SmilesErrorKind error_kind() const noexcept { return kind_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  SmilesErrorKind kind_;
  std::size_t offset_;
};

/// Kekulized SMILES subset: organic atoms C N O F P S Cl Br I, bracket atoms with H count
/// and charge, bonds - = #, branches, ring closures 1-9 and %nn, `.` between fragments. With check_valence off, over-valent
/// atoms are accepted so generated molecules can be read back and judged by is_valid.
MolecularGraph parse_smiles(std::string_view text, bool check_valence = true);

/// Canonical SMILES: graphs that differ only by atom order produce the same string.
/// Disconnected graphs are joined with '.'.
std::string write_smiles(const MolecularGraph& g);

/// Canonical atom order used by write_smiles: rank per atom, all distinct.
std::vector<std::size_t> canonical_ranks(const MolecularGraph& g);

enum class InvalidReason { kNone, kEmpty, kValence, kDisconnected };
std::string_view to_string(InvalidReason r);

struct Validity {
  bool valid = false;
  InvalidReason reason = InvalidReason::kNone;
  /// Offending atom for valence failures.
  std::optional<std::size_t> atom;
  explicit operator bool() const { return valid; }
};

/// Valence table satisfied (charge shifts the limit by its signed value) and one component.
Validity is_valid(const MolecularGraph& g);

/// Weisfeiler–Leman style refinement (3·diameter rounds) then an order-independent hash.
std::uint64_t canonical_key(const MolecularGraph& g);

class Fingerprint {
 public:
  explicit Fingerprint(std::size_t nbits = 2048);
  std::size_t size() const { return nbits_; }
  void set(std::size_t bit) { words_[bit >> 6] |= std::uint64_t{1} << (bit & 63); }
  bool test(std::size_t bit) const { return (words_[bit >> 6] >> (bit & 63)) & 1u; }
  std::size_t count() const;
  const std::vector<std::uint64_t>& words() const { return words_; }
  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;

 private:
  std::size_t nbits_;
  std::vector<std::uint64_t> words_;
};

inline constexpr int kDefaultFingerprintRadius = 2;
inline constexpr std::size_t kDefaultFingerprintBits = 2048;

/// Circular substructure fingerprint; nbits must be a power of two.
Fingerprint fingerprint(const MolecularGraph& g, int radius = kDefaultFingerprintRadius,
                        std::size_t nbits = kDefaultFingerprintBits);

/// |a∧b| / |a∨b|; 0 when both are empty.
double tanimoto(const Fingerprint& a, const Fingerprint& b);

/// One SMILES per line, `#` comments and blank lines skipped. Parse failures carry the line number.
std::vector<MolecularGraph> parse_smiles_list(std::string_view text);
std::vector<MolecularGraph> load_smiles_file(const std::string& path);

}  // namespace kdream::mol
