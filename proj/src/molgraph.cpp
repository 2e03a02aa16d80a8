//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/molgraph.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

namespace diffspectra {

namespace {
constexpr std::array<std::string_view, kNumElements> kSymbols = {"H", "C", "N",
                                                                 "O", "F"};
} // namespace

std::string_view element_symbol(Element e) {
  const auto idx = static_cast<std::size_t>(e);
  if (idx >= kSymbols.size())
    throw DataError("unknown element code " + std::to_string(idx));
  return kSymbols[idx];
}

Element element_from_symbol(std::string_view symbol) {
  for (std::size_t i = 0; i < kSymbols.size(); ++i)
    if (kSymbols[i] == symbol)
      return static_cast<Element>(i);
  throw DataError("unknown element symbol '" + std::string(symbol) + "'");
}

double bond_order(BondType b) {
  switch (b) {
  case BondType::kNone:
    return 0.0;
  case BondType::kSingle:
    return 1.0;
  case BondType::kDouble:
    return 2.0;
  case BondType::kTriple:
    return 3.0;
  case BondType::kAromatic:
    return 1.5;
  }
  return 0.0;
}

MolecularGraph::MolecularGraph(int n_atoms)
    : elements_(n_atoms, Element::kH), charges_(n_atoms, 0),
      bonds_(static_cast<std::size_t>(n_atoms) * n_atoms, BondType::kNone),
      coords_(Coords::Zero(n_atoms, 3)) {}

MolecularGraph::MolecularGraph(std::vector<Element> elements,
                               std::vector<int> charges,
                               const std::vector<Bond> &bonds, Coords coords)
    : elements_(std::move(elements)), charges_(std::move(charges)),
      coords_(std::move(coords)) {
  const int n = size();
  if (static_cast<int>(charges_.size()) != n)
    throw DataError("charges length does not match atom count");
  if (coords_.rows() == 0)
    coords_ = Coords::Zero(n, 3);
  if (coords_.rows() != n)
    throw DataError("coords length does not match atom count");
  bonds_.assign(static_cast<std::size_t>(n) * n, BondType::kNone);
  for (const auto &b : bonds) {
    if (b.i < 0 || b.j < 0 || b.i >= n || b.j >= n || b.i == b.j)
      throw DataError("bond index out of range: " + std::to_string(b.i) +
                      "-" + std::to_string(b.j));
    set_bond(b.i, b.j, b.type);
  }
}

void MolecularGraph::set_bond(int i, int j, BondType b) {
  bonds_[index(i, j)] = b;
  bonds_[index(j, i)] = b;
}

std::vector<Bond> MolecularGraph::bond_list() const {
  std::vector<Bond> out;
  const int n = size();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (bond(i, j) != BondType::kNone)
        out.push_back({i, j, bond(i, j)});
  return out;
}

int MolecularGraph::num_bonds() const {
  return static_cast<int>(bond_list().size());
}

std::vector<int> MolecularGraph::neighbors(int i) const {
  std::vector<int> out;
  for (int j = 0; j < size(); ++j)
    if (j != i && bond(i, j) != BondType::kNone)
      out.push_back(j);
  return out;
}

int MolecularGraph::hydrogen_count(int i) const {
  int h = 0;
  for (int j : neighbors(i))
    h += elements_[j] == Element::kH;
  return h;
}

bool MolecularGraph::is_connected() const {
  const int n = size();
  if (n == 0)
    return false;
  std::vector<bool> seen(n, false);
  std::vector<int> stack{0};
  seen[0] = true;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : neighbors(v))
      if (!seen[w]) {
        seen[w] = true;
        ++count;
        stack.push_back(w);
      }
  }
  return count == n;
}

MolecularGraph MolecularGraph::permuted(const std::vector<int> &perm) const {
  const int n = size();
  MolecularGraph out(n);
  for (int k = 0; k < n; ++k) {
    out.elements_[k] = elements_[perm[k]];
    out.charges_[k] = charges_[perm[k]];
    out.coords_.row(k) = coords_.row(perm[k]);
  }
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      out.bonds_[out.index(a, b)] = bond(perm[a], perm[b]);
  return out;
}

Coords center_coords(const Coords &x) {
  if (x.rows() == 0)
    return x;
  Coords out = x;
  out.rowwise() -= x.colwise().mean();
  return out;
}

double rmsd(const Coords &a, const Coords &b) {
  if (a.rows() == 0)
    return 0.0;
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.rows()));
}

KabschResult kabsch_align(const Coords &reference, const Coords &moving) {
  if (reference.rows() != moving.rows())
    throw NumericError("kabsch_align: point counts differ");
  KabschResult res;
  const Eigen::Matrix3d cov = moving.transpose() * reference;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU |
                                                 Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double scale = std::max(sv(0), 1e-300);
  const bool rank0 = sv(0) < 1e-12;
  res.degenerate = rank0 || sv(1) / scale < 1e-10;
  if (!rank0) {
    const Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    const double d = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
    Eigen::Matrix3d diag = Eigen::Matrix3d::Identity();
    diag(2, 2) = d;
    res.rotation = v * diag * u.transpose();
  }
  res.aligned = moving * res.rotation.transpose();
  res.rmsd = rmsd(res.aligned, reference);
  return res;
}

// ---------------------------------------------------------------------------
// Canonical form: colour refinement + individualisation with exhaustive
// branching over the first non-singleton cell. Interchangeable twins (same
// label, same labelled neighbourhood) are branched on once.

namespace {

using Colouring = std::vector<int>;

int atom_label(const MolecularGraph &m, int i) {
  return static_cast<int>(m.element(i)) * 8 + (m.charge(i) + 4);
}

int num_cells(const Colouring &c) {
  return c.empty() ? 0 : *std::max_element(c.begin(), c.end()) + 1;
}

Colouring rank_signatures(const std::vector<std::vector<int>> &sigs) {
  std::vector<std::vector<int>> uniq = sigs;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  Colouring out(sigs.size());
  for (std::size_t v = 0; v < sigs.size(); ++v)
    out[v] = static_cast<int>(
        std::lower_bound(uniq.begin(), uniq.end(), sigs[v]) - uniq.begin());
  return out;
}

Colouring refine(const MolecularGraph &m,
                 const std::vector<std::vector<int>> &adj, Colouring c) {
  const int n = m.size();
  int cells = num_cells(c);
  while (true) {
    std::vector<std::vector<int>> sigs(n);
    for (int v = 0; v < n; ++v) {
      std::vector<int> nb;
      nb.reserve(adj[v].size());
      for (int w : adj[v])
        nb.push_back(static_cast<int>(m.bond(v, w)) * 1024 + c[w]);
      std::sort(nb.begin(), nb.end());
      sigs[v].push_back(c[v]);
      sigs[v].insert(sigs[v].end(), nb.begin(), nb.end());
    }
    Colouring next = rank_signatures(sigs);
    const int next_cells = num_cells(next);
    c = std::move(next);
    if (next_cells == cells)
      return c;
    cells = next_cells;
  }
}

bool are_twins(const MolecularGraph &m, int u, int v) {
  for (int w = 0; w < m.size(); ++w) {
    if (w == u || w == v)
      continue;
    if (m.bond(u, w) != m.bond(v, w))
      return false;
  }
  return true;
}

std::string certificate(const MolecularGraph &m, const std::vector<int> &ord) {
  const int n = m.size();
  std::string out;
  out.reserve(static_cast<std::size_t>(n) * (n + 4));
  for (int k = 0; k < n; ++k) {
    out += element_symbol(m.element(ord[k]));
    const int q = m.charge(ord[k]);
    if (q != 0)
      out += (q > 0 ? "+" : "-") + std::to_string(std::abs(q));
    out += '.';
  }
  out += '|';
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b)
      out += static_cast<char>('0' + static_cast<int>(m.bond(ord[a], ord[b])));
  return out;
}

struct Search {
  const MolecularGraph &m;
  std::vector<std::vector<int>> adj;
  std::string best;
  std::vector<int> best_order;
  bool have_best = false;

  void run(const Colouring &c) {
    const int n = m.size();
    if (num_cells(c) == n) {
      std::vector<int> ord(n);
      for (int v = 0; v < n; ++v)
        ord[c[v]] = v;
      std::string cert = certificate(m, ord);
      if (!have_best || cert < best) {
        best = std::move(cert);
        best_order = std::move(ord);
        have_best = true;
      }
      return;
    }
    // First non-singleton cell.
    std::vector<int> size(n, 0);
    for (int v = 0; v < n; ++v)
      ++size[c[v]];
    int target = 0;
    while (size[target] < 2)
      ++target;
    std::vector<int> cell;
    for (int v = 0; v < n; ++v)
      if (c[v] == target)
        cell.push_back(v);

    std::vector<int> reps;
    for (int v : cell) {
      bool covered = false;
      for (int r : reps)
        if (are_twins(m, r, v)) {
          covered = true;
          break;
        }
      if (!covered)
        reps.push_back(v);
    }

    for (int v : reps) {
      std::vector<std::vector<int>> sigs(n);
      for (int w = 0; w < n; ++w)
        sigs[w] = {c[w], (c[w] == target && w != v) ? 1 : 0};
      run(refine(m, adj, rank_signatures(sigs)));
    }
  }
};

Search canonical_search(const MolecularGraph &m) {
  Search s{m, {}, {}, {}, false};
  const int n = m.size();
  s.adj.resize(n);
  for (int i = 0; i < n; ++i)
    s.adj[i] = m.neighbors(i);
  std::vector<std::vector<int>> sigs(n);
  for (int v = 0; v < n; ++v)
    sigs[v] = {atom_label(m, v)};
  s.run(refine(m, s.adj, rank_signatures(sigs)));
  return s;
}

} // namespace

std::string canonical_key(const MolecularGraph &m) {
  if (m.empty())
    return "|";
  return canonical_search(m).best;
}

std::vector<int> canonical_order(const MolecularGraph &m) {
  if (m.empty())
    return {};
  return canonical_search(m).best_order;
}

// ---------------------------------------------------------------------------

const std::vector<double> &allowed_valences(Element e, int charge) {
  static const std::map<std::pair<int, int>, std::vector<double>> table = {
      {{static_cast<int>(Element::kH), 0}, {1}},
      {{static_cast<int>(Element::kC), 0}, {4}},
      {{static_cast<int>(Element::kN), 0}, {3}},
      {{static_cast<int>(Element::kN), 1}, {4}},
      {{static_cast<int>(Element::kO), 0}, {2}},
      {{static_cast<int>(Element::kO), -1}, {1}},
      {{static_cast<int>(Element::kF), 0}, {1}},
  };
  static const std::vector<double> none;
  if (static_cast<int>(e) >= kNumElements)
    throw DataError("unknown element code " +
                    std::to_string(static_cast<int>(e)));
  auto it = table.find({static_cast<int>(e), charge});
  return it == table.end() ? none : it->second;
}

ValenceReport check_valence(const MolecularGraph &m) {
  ValenceReport r;
  const int n = m.size();
  r.atom_stable.assign(n, false);
  for (int i = 0; i < n; ++i) {
    double total = 0;
    for (int j = 0; j < n; ++j)
      if (j != i)
        total += bond_order(m.bond(i, j));
    for (double v : allowed_valences(m.element(i), m.charge(i)))
      if (std::abs(total - v) < 1e-6)
        r.atom_stable[i] = true;
    r.stable_atoms += r.atom_stable[i];
  }
  r.molecule_stable = n > 0 && r.stable_atoms == n;
  r.connected = m.is_connected();
  r.valid_and_complete = r.molecule_stable && r.connected;
  return r;
}

} // namespace diffspectra
