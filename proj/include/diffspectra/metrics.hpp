//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_METRICS_HPP_
#define DIFFSPECTRA_METRICS_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffspectra/molgraph.hpp"

namespace diffspectra::metrics {

// Hydrogen-suppressed view. Topological metrics (fingerprints, fragments,
// scaffolds, MCES) work on heavy atoms; `h_count` keeps the attached
// hydrogen count of each heavy atom.
struct HeavyGraph {
  MolecularGraph graph;
  std::vector<int> h_count;
  std::vector<int> source; // index of each heavy atom in the full graph
};
HeavyGraph heavy_atoms(const MolecularGraph &m);

// ring_bond[i][j] for bonded pairs that lie on a cycle.
std::vector<std::vector<bool>> ring_bonds(const MolecularGraph &m);

// Deterministic 64-bit hashing (platform independent).
uint64_t hash_combine(uint64_t seed, uint64_t value);
uint64_t hash_sequence(const std::vector<uint64_t> &values);

// Sparse binary fingerprint: sorted, unique on-bit identifiers.
struct Fingerprint {
  std::vector<uint64_t> bits;
  bool operator==(const Fingerprint &) const = default;
};

// Identical sets (including two empty ones) score 1.
double tanimoto(const Fingerprint &a, const Fingerprint &b);
double cosine(const Fingerprint &a, const Fingerprint &b);

// Circular fingerprint over heavy atoms. Atom invariant: (atomic number,
// heavy degree, attached H, formal charge, ring membership). Each round
// hashes (round, own id, sorted (bond type, neighbour id) pairs).
// Identifiers from rounds 0..radius are folded modulo n_bits.
Fingerprint morgan_fingerprint(const MolecularGraph &m, int radius = 2,
                               int n_bits = 2048);
// Round-0 identifier of heavy atom `i` of `h`.
uint64_t morgan_atom_invariant(const HeavyGraph &h, int i);

// Linear-path fingerprint: every simple heavy-atom path of 0..max_bonds
// bonds, labelled by element and bond type, hashed in canonical direction.
// Unfolded identifiers.
Fingerprint path_fingerprint(const MolecularGraph &m, int max_bonds = 7);

// Heavy-atom subsets (indices into heavy_atoms(m).graph) obtained by one or
// two cuts of acyclic single bonds, keeping pieces of >= min_atoms atoms.
std::vector<std::vector<int>> fraggle_fragments(const MolecularGraph &m,
                                                int min_atoms = 3);

// max(whole-molecule path Tanimoto, max over target fragments of the
// Tanimoto between the fragment's path fingerprint and the candidate's).
double fraggle_sim(const MolecularGraph &target, const MolecularGraph &candidate);

enum class FunctionalGroup {
  kAlcohol = 0,
  kAmine,
  kCarboxylicAcid,
  kEster,
  kEther,
  kAldehyde,
  kKetone,
  kAmide,
  kNitrile,
  kAlkene,
  kAlkyne,
  kAromaticRing,
  kFluoride,
  kNitrogenOxygen,
  kAlkane,
};
inline constexpr int kNumFunctionalGroups = 15;
std::string to_string(FunctionalGroup g);

std::set<FunctionalGroup> functional_groups(const MolecularGraph &m);
// Jaccard of the group sets; two empty sets score 1.
double fg_sim(const MolecularGraph &a, const MolecularGraph &b);

struct MCESResult {
  int common_edges = 0;
  int distance = 0;  // |E1| + |E2| - 2 common_edges
  bool exact = true; // false when the timeout cut the search short
};

// Exact maximum common edge subgraph with atom labels (element, charge) and
// bond labels respected, as a maximum clique of the oriented edge-pair
// compatibility graph. timeout_ms <= 0 disables the timeout. Applied to the
// graphs as given (callers pass heavy-atom graphs).
MCESResult mces(const MolecularGraph &g1, const MolecularGraph &g2,
                int64_t timeout_ms = 2000);

// True iff one of the first k candidates has the target's canonical key.
bool acc_at_k(const std::vector<MolecularGraph> &candidates,
              const MolecularGraph &target, int k);

// Valences never exceed the element maximum (under-valent atoms take
// implicit hydrogens).
bool is_valid(const MolecularGraph &m);

enum class GeometryFeature { kBond, kAngle, kDihedral };
std::string to_string(GeometryFeature f);
// Bond lengths (A), bond angles and absolute dihedral angles (radians).
std::vector<double> geometry_features(const MolecularGraph &m, GeometryFeature f);

// Squared MMD (biased V-statistic) with k(x, y) = exp(-(x - y)^2 / (2 h^2)).
// bandwidth <= 0 selects the median pairwise distance of the pooled sample.
double mmd2(const std::vector<double> &x, const std::vector<double> &y,
            double bandwidth = 0);
// Populations larger than max_points are thinned with an even stride.
double geometry_mmd(const std::vector<MolecularGraph> &samples,
                    const std::vector<MolecularGraph> &refs, GeometryFeature f,
                    std::size_t max_points = 1500);

// Named scalar metrics; a metric that cannot be computed is null with a
// reason.
struct MetricReport {
  std::map<std::string, std::optional<double>> values;
  std::map<std::string, std::string> null_reasons;
  nlohmann::json details = nlohmann::json::array();

  void set(const std::string &name, double v) { values[name] = v; }
  void set_null(const std::string &name, const std::string &reason);
  void merge(const MetricReport &other);
  nlohmann::json to_json() const;
};

// Subsets selectable by name: groups "generation", "geometry",
// "elucidation", "all", or individual metric keys (e.g. "mces", "acc").
struct MetricSelection {
  std::set<std::string> items{"all"};
  bool wants(const std::string &group, const std::string &metric) const;
  bool wants_group(const std::string &group) const;
};
MetricSelection parse_metric_selection(const std::string &list);
const std::vector<std::string> &metric_names(const std::string &group);

MetricReport generation_metrics(const std::vector<MolecularGraph> &samples,
                                const std::vector<MolecularGraph> &train_refs,
                                const std::vector<MolecularGraph> &test_refs,
                                const MetricSelection &sel = {});

MetricReport geometry_metrics(const std::vector<MolecularGraph> &samples,
                              const std::vector<MolecularGraph> &test_refs,
                              const MetricSelection &sel = {});

struct ElucidationOptions {
  std::vector<int> ks{1, 5, 10};
  int64_t mces_timeout_ms = 2000;
  int workers = 1;
};

// candidates[t] holds the sampled structures for targets[t] in draw order;
// similarity metrics use the first candidate.
MetricReport elucidation_metrics(const std::vector<MolecularGraph> &targets,
                                 const std::vector<std::vector<MolecularGraph>> &candidates,
                                 const ElucidationOptions &opts = {},
                                 const MetricSelection &sel = {});

} // namespace diffspectra::metrics

#endif // DIFFSPECTRA_METRICS_HPP_
