#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <numeric>

#include "kdream/molgraph.hpp"
#include "kdream/rng.hpp"
#include "oracles.hpp"

using namespace kdream;
using mol::Element;
using mol::MolecularGraph;

namespace {

mol::SmilesErrorKind parse_error_kind(const std::string& s, std::size_t* offset = nullptr) {
  try {
    mol::parse_smiles(s);
  } catch (const mol::SmilesError& e) {
    if (offset) *offset = e.offset();
    return e.error_kind();
  }
  ADD_FAILURE() << "'" << s << "' parsed";
  return mol::SmilesErrorKind::kSyntax;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  auto rng = derive_stream(seed, "test.perm");
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST(ParseSmiles, AceticAcid) {
  auto g = mol::parse_smiles("CC(=O)O");
  ASSERT_EQ(g.atom_count(), 4u);
  EXPECT_EQ(g.atom(2).element, Element::O);
  const std::vector<mol::Bond> expected{{0, 1, 1}, {1, 2, 2}, {1, 3, 1}};
  EXPECT_EQ(g.bonds(), expected);
  EXPECT_EQ(g.hydrogen_count(0), 3);
  EXPECT_EQ(g.hydrogen_count(3), 1);
}

TEST(ParseSmiles, Cyclopropane) {
  auto g = mol::parse_smiles("C1CC1");
  EXPECT_EQ(g.atom_count(), 3u);
  EXPECT_EQ(g.bond_count(), 3u);
  EXPECT_EQ(g.ring_count(), 1u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(g.degree(i), 2);
    EXPECT_EQ(g.hydrogen_count(i), 2);
  }
}

TEST(ParseSmiles, RingClosureForms) {
  EXPECT_EQ(mol::parse_smiles("C%12CCCC%12").ring_count(), 1u);
  auto g = mol::parse_smiles("C=1CCCCC=1");
  EXPECT_EQ(g.bond_order(0, 5), 2);
  EXPECT_EQ(mol::parse_smiles("C12CC1C2").ring_count(), 2u);
}

TEST(ParseSmiles, BracketAtomsAndFragments) {
  auto g = mol::parse_smiles("C[N+](C)(C)C");
  EXPECT_EQ(g.atom(1).charge, 1);
  EXPECT_TRUE(mol::is_valid(g).valid);
  auto h = mol::parse_smiles("[OH2]");
  EXPECT_EQ(h.hydrogen_count(0), 2);
  auto frag = mol::parse_smiles("CC.O", false);
  EXPECT_EQ(frag.atom_count(), 3u);
  EXPECT_EQ(mol::is_valid(frag).reason, mol::InvalidReason::kDisconnected);
}

TEST(ParseSmiles, ErrorKindsAndOffsets) {
  std::size_t off = 99;
  EXPECT_EQ(parse_error_kind("CC(C", &off), mol::SmilesErrorKind::kUnbalancedParenthesis);
  EXPECT_EQ(off, 2u);
  EXPECT_EQ(parse_error_kind("CC)C", &off), mol::SmilesErrorKind::kUnbalancedParenthesis);
  EXPECT_EQ(off, 2u);
  EXPECT_EQ(parse_error_kind("C1CC", &off), mol::SmilesErrorKind::kUnclosedRing);
  EXPECT_EQ(off, 1u);
  EXPECT_EQ(parse_error_kind("CcC", &off), mol::SmilesErrorKind::kUnknownSymbol);
  EXPECT_EQ(off, 1u);
  EXPECT_EQ(parse_error_kind("C[Xx]", &off), mol::SmilesErrorKind::kUnknownSymbol);
  EXPECT_EQ(parse_error_kind("C/C=C/C"), mol::SmilesErrorKind::kUnknownSymbol);
  EXPECT_EQ(parse_error_kind("CN(=C)=C", &off), mol::SmilesErrorKind::kValence);
  EXPECT_EQ(off, 1u);
  EXPECT_EQ(parse_error_kind("C=", &off), mol::SmilesErrorKind::kSyntax);
  EXPECT_EQ(parse_error_kind(""), mol::SmilesErrorKind::kSyntax);
  EXPECT_NO_THROW(mol::parse_smiles("CN(=C)=C", false));
}

TEST(ParseSmiles, ListFileReportsLineNumbers) {
  auto list = mol::parse_smiles_list("# header\nCC\n\nC1CC1\n");
  EXPECT_EQ(list.size(), 2u);
  try {
    mol::parse_smiles_list("CC\n# c\nC(C\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(WriteSmiles, SingleCarbon) { EXPECT_EQ(mol::write_smiles(mol::parse_smiles("C")), "C"); }

TEST(WriteSmiles, AtomOrderDoesNotChangeOutput) {
  for (const auto& s : oracle::data_lines("smiles200.smi")) {
    const auto g = mol::parse_smiles(s);
    const auto canon = mol::write_smiles(g);
    for (std::uint64_t seed = 0; seed < 3; ++seed)
      EXPECT_EQ(mol::write_smiles(g.permuted(shuffled(g.atom_count(), seed))), canon) << s;
  }
}

TEST(WriteSmiles, CorpusRoundTripIsIsomorphic) {
  const auto corpus = oracle::data_lines("smiles200.smi");
  ASSERT_EQ(corpus.size(), 200u);
  const auto rt = oracle::smiles_round_trip(corpus);
  EXPECT_EQ(rt.isomorphic, 200u);
  for (const auto& f : rt.failures) ADD_FAILURE() << "round trip failed: " << f;
}

TEST(WriteSmiles, ChargesAndDisconnectedGraphs) {
  auto g = mol::parse_smiles("C[N+](C)(C)C.[O-]C");
  auto back = mol::parse_smiles(mol::write_smiles(g));
  EXPECT_TRUE(oracle::isomorphic(g, back));
  EXPECT_NE(mol::write_smiles(g).find('.'), std::string::npos);
}

TEST(WriteSmiles, RandomGraphsRoundTrip) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const auto g = oracle::random_molecule(2 + seed % 14, seed);
    const auto text = mol::write_smiles(g);
    EXPECT_TRUE(oracle::isomorphic(g, mol::parse_smiles(text))) << text;
  }
}

TEST(IsomorphismOracle, SanityChecks) {
  auto a = mol::parse_smiles("CCO"), b = mol::parse_smiles("OCC"), c = mol::parse_smiles("COC");
  EXPECT_TRUE(oracle::isomorphic(a, b));
  EXPECT_FALSE(oracle::isomorphic(a, c));
  EXPECT_FALSE(oracle::isomorphic(mol::parse_smiles("C1CCCCC1"), mol::parse_smiles("C1CC1C1CC1")));
}

TEST(IsValid, Examples) {
  EXPECT_TRUE(mol::is_valid(mol::parse_smiles("CC(C)(C)C")).valid);
  auto n4 = mol::parse_smiles("CN(C)(C)C", false);
  auto v = mol::is_valid(n4);
  EXPECT_FALSE(v.valid);
  EXPECT_EQ(v.reason, mol::InvalidReason::kValence);
  EXPECT_EQ(v.atom, std::optional<std::size_t>{1});
  EXPECT_EQ(mol::is_valid(mol::parse_smiles("CC.CC", false)).reason, mol::InvalidReason::kDisconnected);
  EXPECT_EQ(mol::is_valid(MolecularGraph{}).reason, mol::InvalidReason::kEmpty);
  EXPECT_TRUE(mol::is_valid(mol::parse_smiles("C[N+](C)(C)C")).valid);
  EXPECT_FALSE(mol::is_valid(mol::parse_smiles("C[O-]=C", false)).valid);
}

TEST(IsValid, AgreesWithBruteForceEnumeration) {
  const auto r = oracle::enumerate_validity();
  EXPECT_EQ(r.disagreements, 0u) << "of " << r.graphs;
  EXPECT_GT(r.valid, 0u);
  EXPECT_LT(r.valid, r.graphs);
}

TEST(GraphConstruction, RejectsBadBonds) {
  MolecularGraph g;
  g.add_atom(Element::C);
  g.add_atom(Element::C);
  EXPECT_THROW(g.add_bond(0, 0, 1), Error);
  EXPECT_THROW(g.add_bond(0, 2, 1), Error);
  EXPECT_THROW(g.add_bond(0, 1, 4), Error);
  g.add_bond(0, 1, 1);
  EXPECT_THROW(g.add_bond(1, 0, 2), Error);
}

TEST(CanonicalKey, PermutationInvariantAndDiscriminating) {
  for (const auto& s : oracle::data_lines("smiles200.smi")) {
    const auto g = mol::parse_smiles(s);
    EXPECT_EQ(mol::canonical_key(g), mol::canonical_key(g.permuted(shuffled(g.atom_count(), 5)))) << s;
  }
  EXPECT_NE(mol::canonical_key(mol::parse_smiles("CCO")), mol::canonical_key(mol::parse_smiles("CCC")));
}

TEST(CanonicalKey, AgreesWithIsomorphismOnRandomGraphs) {
  std::vector<MolecularGraph> graphs;
  for (std::uint64_t seed = 0; graphs.size() < 500; ++seed) {
    auto g = oracle::random_molecule(1 + seed % 12, seed + 1000);
    // Every fifth graph is a relabelled copy of an earlier one.
    if (seed % 5 == 4) g = graphs[seed % graphs.size()].permuted(shuffled(graphs[seed % graphs.size()].atom_count(), seed));
    graphs.push_back(g);
  }
  std::size_t merges = 0, splits = 0, iso_pairs = 0;
  for (std::size_t i = 0; i < graphs.size(); ++i)
    for (std::size_t j = i + 1; j < graphs.size(); ++j) {
      const bool same_key = mol::canonical_key(graphs[i]) == mol::canonical_key(graphs[j]);
      const bool iso = oracle::isomorphic(graphs[i], graphs[j]);
      iso_pairs += iso;
      merges += same_key && !iso;
      splits += iso && !same_key;
    }
  EXPECT_EQ(merges, 0u);
  EXPECT_EQ(splits, 0u);
  EXPECT_GT(iso_pairs, 50u);
}

TEST(Fingerprint, DeterministicAndSized) {
  auto g = mol::parse_smiles("CC(=O)OC1CCCCC1");
  auto a = mol::fingerprint(g), b = mol::fingerprint(g.permuted(shuffled(g.atom_count(), 1)));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 2048u);
  EXPECT_GT(a.count(), 0u);
  EXPECT_THROW(mol::fingerprint(g, 2, 1000), Error);
  EXPECT_EQ(mol::fingerprint(g, 1, 512).size(), 512u);
}

TEST(Tanimoto, SelfEmptyAndMismatch) {
  auto f = mol::fingerprint(mol::parse_smiles("CCN"));
  EXPECT_EQ(mol::tanimoto(f, f), 1.0);
  EXPECT_EQ(mol::tanimoto(f, mol::Fingerprint(2048)), 0.0);
  EXPECT_EQ(mol::tanimoto(mol::Fingerprint(64), mol::Fingerprint(64)), 0.0);
  try {
    mol::tanimoto(f, mol::Fingerprint(1024));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}

TEST(Tanimoto, MatchesBitLoopOnRandomBitsets) {
  auto rng = derive_stream(4, "test.tanimoto");
  for (int trial = 0; trial < 200; ++trial) {
    mol::Fingerprint a(256), b(256);
    const double pa = uniform01(rng), pb = uniform01(rng);
    for (std::size_t i = 0; i < 256; ++i) {
      if (uniform01(rng) < pa) a.set(i);
      if (uniform01(rng) < pb) b.set(i);
    }
    std::size_t both = 0, either = 0;
    for (std::size_t i = 0; i < 256; ++i) {
      both += a.test(i) && b.test(i);
      either += a.test(i) || b.test(i);
    }
    const double expected = either ? double(both) / double(either) : 0.0;
    EXPECT_DOUBLE_EQ(mol::tanimoto(a, b), expected);
    EXPECT_DOUBLE_EQ(mol::tanimoto(a, b), mol::tanimoto(b, a));
    EXPECT_LE(mol::tanimoto(a, b), 1.0);
  }
}

TEST(Fingerprint, SimilarMoleculesScoreHigherThanUnrelated) {
  auto base = mol::fingerprint(mol::parse_smiles("CCCCCCO"));
  auto near = mol::fingerprint(mol::parse_smiles("CCCCCCCO"));
  auto far = mol::fingerprint(mol::parse_smiles("FC(F)(F)Cl"));
  EXPECT_GT(mol::tanimoto(base, near), mol::tanimoto(base, far));
}
