//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_MOLGRAPH_HPP_
#define DIFFSPECTRA_MOLGRAPH_HPP_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "diffspectra/error.hpp"

namespace diffspectra {

enum class Element : std::uint8_t { kH = 0, kC, kN, kO, kF };
enum class BondType : std::uint8_t {
  kNone = 0,
  kSingle,
  kDouble,
  kTriple,
  kAromatic,
};

inline constexpr int kNumElements = 5;
// One-hot element block plus a scalar formal-charge channel.
inline constexpr int kAtomFeatureDim = kNumElements + 1;
inline constexpr int kBondClasses = 5;

using Coords = Eigen::Matrix<double, Eigen::Dynamic, 3>;

std::string_view element_symbol(Element e);
Element element_from_symbol(std::string_view symbol);

// Bond order used for valence sums; aromatic counts 1.5.
double bond_order(BondType b);

struct Bond {
  int i;
  int j;
  BondType type;
};

// Discrete molecule: element/charge per atom, a symmetric bond-class matrix
// and Cartesian coordinates in Angstrom. The one-hot H/A tensors used by the
// diffusion model are derived views (see graph_tensor.hpp).
class MolecularGraph {
public:
  MolecularGraph() = default;
  explicit MolecularGraph(int n_atoms);
  MolecularGraph(std::vector<Element> elements, std::vector<int> charges,
                 const std::vector<Bond> &bonds, Coords coords);

  int size() const { return static_cast<int>(elements_.size()); }
  bool empty() const { return elements_.empty(); }

  Element element(int i) const { return elements_[i]; }
  int charge(int i) const { return charges_[i]; }
  void set_element(int i, Element e) { elements_[i] = e; }
  void set_charge(int i, int c) { charges_[i] = c; }

  BondType bond(int i, int j) const { return bonds_[index(i, j)]; }
  void set_bond(int i, int j, BondType b);

  const Coords &coords() const { return coords_; }
  Coords &coords() { return coords_; }

  const std::vector<Element> &elements() const { return elements_; }
  const std::vector<int> &charges() const { return charges_; }

  // Bonds with i < j, row-major order.
  std::vector<Bond> bond_list() const;
  int num_bonds() const;
  std::vector<int> neighbors(int i) const;
  int hydrogen_count(int i) const;
  bool is_connected() const;

  // Atoms reordered so that new atom k is old atom perm[k].
  MolecularGraph permuted(const std::vector<int> &perm) const;

  friend bool operator==(const MolecularGraph &,
                         const MolecularGraph &) = default;

private:
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(i) * elements_.size() + j;
  }

  std::vector<Element> elements_;
  std::vector<int> charges_;
  std::vector<BondType> bonds_;
  Coords coords_;
};

// Subtracts the column means. N >= 1.
Coords center_coords(const Coords &x);

struct KabschResult {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Coords aligned;
  double rmsd = 0;
  // Set when the cross-covariance has rank < 2 and the optimal rotation is
  // not unique (rank 0 returns the identity).
  bool degenerate = false;
};

// Rotates the centered `moving` onto the centered `reference`:
// aligned = moving * R^T with det(R) = +1 minimizing the RMSD.
KabschResult kabsch_align(const Coords &reference, const Coords &moving);

double rmsd(const Coords &a, const Coords &b);

// Permutation-invariant key; equal iff the labeled graphs are isomorphic.
// Exact (backtracking over refinement ties) for the molecule sizes handled
// here. Coordinates do not enter the key.
std::string canonical_key(const MolecularGraph &m);

// Canonical atom order used by canonical_key; canonical position k holds
// original atom order[k].
std::vector<int> canonical_order(const MolecularGraph &m);

struct ValenceReport {
  std::vector<bool> atom_stable;
  int stable_atoms = 0;
  bool molecule_stable = false;
  bool connected = false;
  // molecule_stable && connected
  bool valid_and_complete = false;
};

// Allowed total bond orders for an (element, charge) pair; empty when the
// pair is not in the table.
const std::vector<double> &allowed_valences(Element e, int charge);

ValenceReport check_valence(const MolecularGraph &m);

} // namespace diffspectra

#endif // DIFFSPECTRA_MOLGRAPH_HPP_
