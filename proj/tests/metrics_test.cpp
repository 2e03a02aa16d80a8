//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "diffspectra/metrics.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

namespace diffspectra {
namespace {

using namespace metrics;
using testing::B;
using testing::E;

MolecularGraph propanol() {
  return saturate({E::kC, E::kC, E::kC, E::kO},
                  {{0, 1, B::kSingle}, {1, 2, B::kSingle}, {2, 3, B::kSingle}});
}
MolecularGraph propane() {
  return saturate({E::kC, E::kC, E::kC}, {{0, 1, B::kSingle}, {1, 2, B::kSingle}});
}
MolecularGraph cyclopropane() {
  return saturate({E::kC, E::kC, E::kC},
                  {{0, 1, B::kSingle}, {1, 2, B::kSingle}, {0, 2, B::kSingle}});
}
MolecularGraph benzene() {
  std::vector<Bond> ring;
  for (int i = 0; i < 6; ++i)
    ring.push_back({i, (i + 1) % 6, B::kAromatic});
  return saturate(std::vector<Element>(6, E::kC), ring);
}

Fingerprint fp(std::vector<uint64_t> bits) { return Fingerprint{std::move(bits)}; }

TEST(Similarity, BitArithmetic) {
  // a = 1100, b = 1010 as on-bit index sets.
  const auto a = fp({0, 1}), b = fp({0, 2});
  EXPECT_NEAR(tanimoto(a, b), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(cosine(a, b), 0.5, 1e-15);
  EXPECT_EQ(tanimoto(a, a), 1.0);
  EXPECT_EQ(cosine(a, a), 1.0);
  EXPECT_EQ(tanimoto(a, fp({5, 6})), 0.0);
  EXPECT_EQ(cosine(a, fp({5, 6})), 0.0);
  EXPECT_EQ(tanimoto(a, b), tanimoto(b, a));
  EXPECT_EQ(tanimoto(fp({}), fp({})), 1.0);
  EXPECT_EQ(tanimoto(a, fp({})), 0.0);
}

TEST(Morgan, PermutationInvariantAndDiscriminative) {
  std::mt19937_64 rng(1);
  for (const auto &m : {testing::ethanol(), propanol(), benzene(), cyclopropane(),
                        testing::formaldehyde()}) {
    const auto base = morgan_fingerprint(m);
    for (int k = 0; k < 10; ++k)
      EXPECT_EQ(morgan_fingerprint(m.permuted(testing::random_permutation(m.size(), rng))),
                base);
  }
  EXPECT_NE(morgan_fingerprint(testing::methane()), morgan_fingerprint(testing::ethane()));
  EXPECT_LT(tanimoto(morgan_fingerprint(testing::methane()),
                     morgan_fingerprint(testing::ethane())),
            1.0);
}

TEST(Morgan, RadiusZeroMatchesPerAtomHash) {
  // Invariant tuples written out by hand: (Z, heavy degree, H, charge, ring).
  struct Case {
    MolecularGraph m;
    std::vector<std::vector<uint64_t>> atoms;
  };
  const std::vector<Case> cases = {
      {testing::methane(), {{6, 0, 4, 0, 0}}},
      {testing::ethanol(), {{6, 1, 3, 0, 0}, {6, 2, 2, 0, 0}, {8, 1, 1, 0, 0}}},
      {cyclopropane(), {{6, 2, 2, 0, 1}, {6, 2, 2, 0, 1}, {6, 2, 2, 0, 1}}},
      {testing::formaldehyde(), {{6, 1, 2, 0, 0}, {8, 1, 0, 0, 0}}},
  };
  for (const auto &c : cases) {
    std::vector<uint64_t> want;
    for (const auto &t : c.atoms)
      want.push_back(hash_sequence(t) % 2048);
    std::sort(want.begin(), want.end());
    want.erase(std::unique(want.begin(), want.end()), want.end());
    EXPECT_EQ(morgan_fingerprint(c.m, 0).bits, want);
  }
}

TEST(PathFingerprint, EthanolVsEthane) {
  // Heavy skeletons C-C-O and C-C. Paths: {C, O, C-C, C-O, C-C-O} and
  // {C, C-C}; two shared.
  const auto a = path_fingerprint(testing::ethanol());
  const auto b = path_fingerprint(testing::ethane());
  EXPECT_EQ(a.bits.size(), 5u);
  EXPECT_EQ(b.bits.size(), 2u);
  EXPECT_NEAR(tanimoto(a, b), 2.0 / 5.0, 1e-15);
  // Bond type is part of the label.
  EXPECT_NE(path_fingerprint(testing::ethane()),
            path_fingerprint(saturate({E::kC, E::kC}, {{0, 1, B::kDouble}})));
}

TEST(Fraggle, HandEnumeratedCases) {
  EXPECT_EQ(fraggle_sim(propanol(), propanol()), 1.0);
  // Ethanol: every cut leaves pieces of one or two heavy atoms.
  EXPECT_TRUE(fraggle_fragments(testing::ethanol()).empty());
  EXPECT_NEAR(fraggle_sim(testing::ethanol(), testing::ethane()), 0.4, 1e-15);
  // Benzene: no acyclic bonds, falls back to the whole molecule.
  EXPECT_TRUE(fraggle_fragments(benzene()).empty());
  EXPECT_NEAR(fraggle_sim(benzene(), propane()),
              tanimoto(path_fingerprint(benzene()), path_fingerprint(propane())), 1e-15);
  // Propanol C-C-C-O: cutting C-O leaves C-C-C, cutting the first C-C
  // leaves C-C-O. Whole-molecule path Tanimoto against propane is 3/7; the
  // C-C-C fragment matches exactly.
  const auto frags = fraggle_fragments(propanol());
  EXPECT_EQ(frags, (std::vector<std::vector<int>>{{0, 1, 2}, {1, 2, 3}}));
  EXPECT_NEAR(tanimoto(path_fingerprint(propanol()), path_fingerprint(propane())),
              3.0 / 7.0, 1e-15);
  EXPECT_EQ(fraggle_sim(propanol(), propane()), 1.0);
}

TEST(FunctionalGroups, Library) {
  using FG = FunctionalGroup;
  auto groups = [](const MolecularGraph &m) { return functional_groups(m); };
  EXPECT_EQ(groups(testing::ethanol()), (std::set<FG>{FG::kAlcohol, FG::kAlkane}));
  EXPECT_EQ(groups(testing::ethane()), (std::set<FG>{FG::kAlkane}));
  EXPECT_EQ(groups(testing::methanol()), (std::set<FG>{FG::kAlcohol}));
  EXPECT_EQ(groups(testing::formaldehyde()), (std::set<FG>{FG::kAldehyde}));
  EXPECT_EQ(groups(testing::dimethyl_ether()), (std::set<FG>{FG::kEther}));
  EXPECT_EQ(groups(benzene()), (std::set<FG>{FG::kAromaticRing}));
  const auto acetic = saturate({E::kC, E::kC, E::kO, E::kO},
                               {{0, 1, B::kSingle}, {1, 2, B::kDouble}, {1, 3, B::kSingle}});
  EXPECT_EQ(groups(acetic), (std::set<FG>{FG::kCarboxylicAcid, FG::kAlkane}));
  const auto acetone = saturate({E::kC, E::kC, E::kC, E::kO},
                                {{0, 1, B::kSingle}, {1, 2, B::kSingle}, {1, 3, B::kDouble}});
  EXPECT_EQ(groups(acetone), (std::set<FG>{FG::kKetone, FG::kAlkane}));
  const auto acetamide = saturate({E::kC, E::kC, E::kO, E::kN},
                                  {{0, 1, B::kSingle}, {1, 2, B::kDouble}, {1, 3, B::kSingle}});
  EXPECT_EQ(groups(acetamide), (std::set<FG>{FG::kAmide, FG::kAlkane}));
  const auto methyl_formate = saturate(
      {E::kC, E::kO, E::kO, E::kC}, {{0, 1, B::kDouble}, {0, 2, B::kSingle}, {2, 3, B::kSingle}});
  EXPECT_EQ(groups(methyl_formate), (std::set<FG>{FG::kEster}));
  const auto acetonitrile = saturate({E::kC, E::kC, E::kN}, {{0, 1, B::kSingle}, {1, 2, B::kTriple}});
  EXPECT_EQ(groups(acetonitrile), (std::set<FG>{FG::kNitrile, FG::kAlkane}));
  const auto methylamine = saturate({E::kC, E::kN}, {{0, 1, B::kSingle}});
  EXPECT_EQ(groups(methylamine), (std::set<FG>{FG::kAmine}));
  const auto propyne = saturate({E::kC, E::kC, E::kC}, {{0, 1, B::kSingle}, {1, 2, B::kTriple}});
  EXPECT_EQ(groups(propyne), (std::set<FG>{FG::kAlkyne, FG::kAlkane}));
  const auto ethene = saturate({E::kC, E::kC}, {{0, 1, B::kDouble}});
  EXPECT_EQ(groups(ethene), (std::set<FG>{FG::kAlkene}));
  const auto fluoromethane = saturate({E::kC, E::kF}, {{0, 1, B::kSingle}});
  EXPECT_EQ(groups(fluoromethane), (std::set<FG>{FG::kFluoride}));
  const auto hydroxylamine = saturate({E::kN, E::kO}, {{0, 1, B::kSingle}});
  EXPECT_EQ(groups(hydroxylamine), (std::set<FG>{FG::kNitrogenOxygen}));
}

TEST(FunctionalGroups, Similarity) {
  EXPECT_EQ(fg_sim(testing::ethanol(), testing::ethanol()), 1.0);
  EXPECT_EQ(fg_sim(testing::ethanol(), testing::ethane()), 0.5);
  EXPECT_EQ(fg_sim(testing::methanol(), testing::ethane()), 0.0);
  EXPECT_EQ(fg_sim(testing::ethane(), testing::ethanol()), 0.5);
}

MolecularGraph skeleton(int n, const std::vector<std::pair<int, int>> &edges) {
  MolecularGraph g(n);
  for (int i = 0; i < n; ++i)
    g.set_element(i, E::kC);
  for (auto [i, j] : edges)
    g.set_bond(i, j, B::kSingle);
  return g;
}

TEST(Mces, SmallCases) {
  const auto tri = skeleton(3, {{0, 1}, {1, 2}, {0, 2}});
  const auto r = mces(tri, tri);
  EXPECT_EQ(r.common_edges, 3);
  EXPECT_EQ(r.distance, 0);
  EXPECT_TRUE(r.exact);

  // Path of three edges vs. the three-star: both contain a two-edge path,
  // so two edges are shared (exhaustive oracle agrees).
  const auto path = skeleton(4, {{0, 1}, {1, 2}, {2, 3}});
  const auto star = skeleton(4, {{0, 1}, {0, 2}, {0, 3}});
  EXPECT_EQ(testing::mces_exhaustive(path, star), 2);
  EXPECT_EQ(mces(path, star).common_edges, 2);
  EXPECT_EQ(mces(path, star).distance, 2);

  // Triangle vs. star: line graphs are isomorphic but the graphs share only
  // a two-edge path.
  EXPECT_EQ(mces(tri, star).common_edges, 2);

  // Labels matter.
  auto ether = skeleton(3, {{0, 1}, {1, 2}});
  ether.set_element(1, E::kO);
  EXPECT_EQ(mces(ether, skeleton(3, {{0, 1}, {1, 2}})).common_edges, 0);
  auto dbl = skeleton(2, {{0, 1}});
  dbl.set_bond(0, 1, B::kDouble);
  EXPECT_EQ(mces(dbl, skeleton(2, {{0, 1}})).common_edges, 0);
}

TEST(Mces, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(2, 6);
  for (int pair = 0; pair < 200; ++pair) {
    // Few labels so that non-trivial common subgraphs are common.
    const auto a = testing::random_graph(size(rng), rng, 0.5, 2, 2);
    const auto b = testing::random_graph(size(rng), rng, 0.5, 2, 2);
    const auto r = mces(a, b, 0);
    const int want = testing::mces_exhaustive(a, b);
    ASSERT_EQ(r.common_edges, want) << "pair " << pair;
    ASSERT_EQ(mces(b, a, 0).common_edges, want) << "pair " << pair;
    ASSERT_EQ(r.distance, a.num_bonds() + b.num_bonds() - 2 * want);
  }
}

TEST(Mces, PermutedCopyHasDistanceZero) {
  std::mt19937_64 rng(6);
  for (int k = 0; k < 20; ++k) {
    const auto g = testing::random_graph(7, rng, 0.4, 3, 3);
    const auto p = g.permuted(testing::random_permutation(7, rng));
    EXPECT_EQ(mces(g, p, 0).distance, 0);
  }
}

TEST(Mces, TimeoutIsFlagged) {
  std::mt19937_64 rng(7);
  const auto a = testing::random_graph(22, rng, 0.2, 1, 1);
  const auto b = testing::random_graph(22, rng, 0.2, 1, 1);
  const auto r = mces(a, b, 1);
  EXPECT_FALSE(r.exact);
  EXPECT_GE(r.common_edges, 0);
  EXPECT_LE(r.common_edges, std::min(a.num_bonds(), b.num_bonds()));
}

TEST(AccAtK, PositionAndMonotonicity) {
  const auto target = testing::ethanol();
  std::vector<MolecularGraph> cands{testing::methane(), testing::ethane(), target,
                                    testing::methanol(), testing::formaldehyde()};
  EXPECT_FALSE(acc_at_k(cands, target, 1));
  EXPECT_FALSE(acc_at_k(cands, target, 2));
  EXPECT_TRUE(acc_at_k(cands, target, 3));
  EXPECT_TRUE(acc_at_k(cands, target, 5));
  // A permuted copy of the target still matches.
  std::mt19937_64 rng(8);
  cands[0] = target.permuted(testing::random_permutation(target.size(), rng));
  EXPECT_TRUE(acc_at_k(cands, target, 1));

  const std::vector<MolecularGraph> pool{testing::methane(), testing::ethane(),
                                         testing::ethanol(), testing::methanol()};
  std::uniform_int_distribution<int> pick(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<MolecularGraph> list;
    for (int k = 0; k < 8; ++k)
      list.push_back(pool[pick(rng)]);
    const auto &t = pool[pick(rng)];
    bool prev = false;
    for (int k = 1; k <= 8; ++k) {
      const bool now = acc_at_k(list, t, k);
      EXPECT_TRUE(!prev || now);
      prev = now;
    }
  }
}

TEST(AccAtK, AggregateMatchesHandCount) {
  // Ten targets; the target sits at position p (1-based, 0 = absent) of
  // three candidates: p = 1,1,2,3,0,0,2,1,3,0.
  const std::vector<int> pos{1, 1, 2, 3, 0, 0, 2, 1, 3, 0};
  const auto target = testing::ethanol();
  std::vector<MolecularGraph> targets;
  std::vector<std::vector<MolecularGraph>> cands;
  for (int p : pos) {
    std::vector<MolecularGraph> c(3, testing::dimethyl_ether());
    if (p > 0)
      c[p - 1] = target;
    targets.push_back(target);
    cands.push_back(c);
  }
  ElucidationOptions opts;
  opts.ks = {1, 2, 3, 5};
  const auto rep = elucidation_metrics(targets, cands, opts, parse_metric_selection("acc"));
  EXPECT_DOUBLE_EQ(*rep.values.at("acc@1"), 0.3);
  EXPECT_DOUBLE_EQ(*rep.values.at("acc@2"), 0.5);
  EXPECT_DOUBLE_EQ(*rep.values.at("acc@3"), 0.7);
  EXPECT_FALSE(rep.values.at("acc@5").has_value());
  EXPECT_EQ(rep.values.count("mces_distance"), 0u);
}

TEST(Mmd, HandComputed) {
  const std::vector<double> x{1, 2, 3}, y{1, 2, 4};
  EXPECT_LT(std::abs(mmd2(x, x)), 1e-10);
  // Direct kernel sums with h = 1.
  auto k = [](double a, double b) { return std::exp(-(a - b) * (a - b) / 2.0); };
  double kxx = 0, kyy = 0, kxy = 0;
  for (double a : x)
    for (double b : x)
      kxx += k(a, b);
  for (double a : y)
    for (double b : y)
      kyy += k(a, b);
  for (double a : x)
    for (double b : y)
      kxy += k(a, b);
  EXPECT_NEAR(mmd2(x, y, 1.0), (kxx + kyy - 2 * kxy) / 9.0, 1e-14);
  EXPECT_NEAR(mmd2({0.0}, {100.0}, 1.0), 2.0, 1e-12);
  // Median heuristic: pooled {1,2,3,1,2,4} has median pairwise distance 1.
  EXPECT_NEAR(mmd2(x, y), mmd2(x, y, 1.0), 1e-14);
}

TEST(Geometry, FeaturesOfKnownShapes) {
  // Regular tetrahedron of hydrogens around carbon.
  auto m = testing::methane();
  m.coords() << 0, 0, 0, 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  const auto bonds = geometry_features(m, GeometryFeature::kBond);
  ASSERT_EQ(bonds.size(), 4u);
  for (double b : bonds)
    EXPECT_NEAR(b, std::sqrt(3.0), 1e-12);
  const auto angles = geometry_features(m, GeometryFeature::kAngle);
  ASSERT_EQ(angles.size(), 6u);
  for (double a : angles)
    EXPECT_NEAR(a, std::acos(-1.0 / 3.0), 1e-12);
  EXPECT_TRUE(geometry_features(m, GeometryFeature::kDihedral).empty());

  // H-C-C-H chain with a 90 degree twist.
  MolecularGraph chain(4);
  chain.set_bond(0, 1, B::kSingle);
  chain.set_bond(1, 2, B::kSingle);
  chain.set_bond(2, 3, B::kSingle);
  chain.coords() << 1, 0, 0, 0, 0, 0, 0, 0, 1, 0, 1, 1;
  const auto dih = geometry_features(chain, GeometryFeature::kDihedral);
  ASSERT_EQ(dih.size(), 1u);
  EXPECT_NEAR(dih[0], M_PI / 2, 1e-12);

  const std::vector<MolecularGraph> set{m, chain};
  for (auto f : {GeometryFeature::kBond, GeometryFeature::kAngle, GeometryFeature::kDihedral})
    EXPECT_LT(std::abs(geometry_mmd(set, set, f)), 1e-10);
}

TEST(Generation, SelfComparison) {
  std::vector<MolecularGraph> refs{testing::ethanol(), cyclopropane(), benzene(),
                                   propanol(), testing::formaldehyde()};
  const std::vector<MolecularGraph> train{refs[0], refs[1]};
  const auto rep = generation_metrics(refs, train, refs);
  EXPECT_EQ(*rep.values.at("validity"), 1.0);
  EXPECT_EQ(*rep.values.at("v_and_c"), 1.0);
  EXPECT_EQ(*rep.values.at("v_and_u"), 1.0);
  EXPECT_DOUBLE_EQ(*rep.values.at("v_and_u_and_n"), 3.0 / 5.0);
  EXPECT_EQ(*rep.values.at("atom_stability"), 1.0);
  EXPECT_EQ(*rep.values.at("mol_stability"), 1.0);
  EXPECT_NEAR(*rep.values.at("snn"), 1.0, 1e-15);
  EXPECT_NEAR(*rep.values.at("frag"), 1.0, 1e-12);
  EXPECT_NEAR(*rep.values.at("scaf"), 1.0, 1e-12);
  EXPECT_FALSE(rep.values.at("fcd").has_value());
  EXPECT_FALSE(rep.null_reasons.at("fcd").empty());
}

TEST(Generation, FiveMoleculeOracle) {
  // Over-valent carbon: CH4 plus an extra hydrogen on the carbon.
  auto overvalent = testing::methane();
  {
    MolecularGraph g(6);
    g.set_element(0, E::kC);
    for (int h = 1; h < 6; ++h)
      g.set_bond(0, h, B::kSingle);
    overvalent = g;
  }
  // Two methane molecules in one graph.
  MolecularGraph split(10);
  for (int c : {0, 5}) {
    split.set_element(c, E::kC);
    for (int h = 1; h <= 4; ++h)
      split.set_bond(c, c + h, B::kSingle);
  }
  std::mt19937_64 rng(9);
  const auto eth = testing::ethanol();
  const std::vector<MolecularGraph> samples{
      eth, eth.permuted(testing::random_permutation(eth.size(), rng)),
      testing::methane(), split, overvalent};
  const std::vector<MolecularGraph> train{testing::methane()};
  const auto rep = generation_metrics(samples, train, {testing::ethane()});
  // valid: both ethanols, methane, the split pair; V&C drops the split pair;
  // unique V&C keys {ethanol, methane}; novel: ethanol only.
  EXPECT_DOUBLE_EQ(*rep.values.at("validity"), 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(*rep.values.at("v_and_c"), 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(*rep.values.at("v_and_u"), 2.0 / 5.0);
  EXPECT_DOUBLE_EQ(*rep.values.at("v_and_u_and_n"), 1.0 / 5.0);
  EXPECT_DOUBLE_EQ(*rep.values.at("mol_stability"), 4.0 / 5.0);
  // 9 + 9 + 5 + 10 atoms stable; of the over-valent 6 only the hydrogens.
  EXPECT_DOUBLE_EQ(*rep.values.at("atom_stability"), 38.0 / 39.0);
}

TEST(Invariance, AllPairMetricsIgnoreAtomOrder) {
  std::mt19937_64 rng(10);
  const std::vector<MolecularGraph> mols{testing::ethanol(), propanol(), benzene(),
                                         cyclopropane(), testing::dimethyl_ether()};
  for (const auto &a : mols)
    for (const auto &b : mols) {
      const auto pa = a.permuted(testing::random_permutation(a.size(), rng));
      const auto pb = b.permuted(testing::random_permutation(b.size(), rng));
      EXPECT_EQ(mces(heavy_atoms(a).graph, heavy_atoms(b).graph).common_edges,
                mces(heavy_atoms(pa).graph, heavy_atoms(pb).graph).common_edges);
      EXPECT_EQ(tanimoto(morgan_fingerprint(a), morgan_fingerprint(b)),
                tanimoto(morgan_fingerprint(pa), morgan_fingerprint(pb)));
      EXPECT_EQ(fraggle_sim(a, b), fraggle_sim(pa, pb));
      EXPECT_EQ(fg_sim(a, b), fg_sim(pa, pb));
      EXPECT_EQ(path_fingerprint(a), path_fingerprint(pa));
    }
}

TEST(Report, SelectionAndJson) {
  EXPECT_THROW(parse_metric_selection("bogus"), ConfigError);
  const auto sel = parse_metric_selection("mces,fg_sim");
  EXPECT_TRUE(sel.wants_group("elucidation"));
  EXPECT_FALSE(sel.wants_group("generation"));
  const auto rep = elucidation_metrics({testing::ethanol()}, {{testing::ethane()}}, {}, sel);
  const auto j = rep.to_json();
  EXPECT_TRUE(j["metrics"].contains("mces_distance"));
  EXPECT_TRUE(j["metrics"].contains("fg_sim"));
  EXPECT_FALSE(j["metrics"].contains("tanisim_mg"));
  // C-C-O vs C-C share one edge: distance 2 + 1 - 2.
  EXPECT_EQ(j["metrics"]["mces_distance"], 1.0);
  EXPECT_EQ(j["details"].size(), 1u);

  const auto all = elucidation_metrics({testing::ethanol()}, {{testing::ethanol()}});
  EXPECT_TRUE(all.to_json()["metrics"]["tanisim_ma"].is_null());
  EXPECT_EQ(*all.values.at("mces_distance"), 0.0);
  EXPECT_EQ(*all.values.at("acc@1"), 1.0);
}

} // namespace
} // namespace diffspectra
