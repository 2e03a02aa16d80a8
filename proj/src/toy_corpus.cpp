//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>

namespace diffspectra {

namespace {

int neutral_valence(Element e) {
  switch (e) {
  case Element::kH:
    return 1;
  case Element::kC:
    return 4;
  case Element::kN:
    return 3;
  case Element::kO:
    return 2;
  case Element::kF:
    return 1;
  }
  return 0;
}

bool pair_allowed(Element a, Element b) {
  auto is = [&](Element x, Element y) {
    return (a == x && b == y) || (a == y && b == x);
  };
  return !(is(Element::kO, Element::kO) || is(Element::kF, Element::kF) ||
           is(Element::kO, Element::kF) || is(Element::kN, Element::kF));
}

double single_length(Element a, Element b) {
  using E = Element;
  if (static_cast<int>(a) > static_cast<int>(b))
    std::swap(a, b);
  if (a == E::kH) {
    switch (b) {
    case E::kH:
      return 0.74;
    case E::kC:
      return 1.09;
    case E::kN:
      return 1.01;
    case E::kO:
      return 0.96;
    case E::kF:
      return 0.92;
    }
  }
  if (a == E::kC && b == E::kC)
    return 1.54;
  if (a == E::kC && b == E::kN)
    return 1.47;
  if (a == E::kC && b == E::kO)
    return 1.43;
  if (a == E::kC && b == E::kF)
    return 1.35;
  if (a == E::kN && b == E::kN)
    return 1.45;
  if (a == E::kN && b == E::kO)
    return 1.40;
  return 1.45;
}

double bond_length(Element a, Element b, BondType t) {
  const double l = single_length(a, b);
  switch (t) {
  case BondType::kDouble:
    return 0.87 * l;
  case BondType::kTriple:
    return 0.78 * l;
  case BondType::kAromatic:
    return 0.91 * l;
  default:
    return l;
  }
}

// Ideal angle at atom k from its bond orders.
double ideal_angle(const MolecularGraph &m, int k) {
  int doubles = 0, triples = 0, aromatic = 0;
  for (int j : m.neighbors(k)) {
    const auto b = m.bond(k, j);
    doubles += b == BondType::kDouble;
    triples += b == BondType::kTriple;
    aromatic += b == BondType::kAromatic;
  }
  if (triples > 0 || doubles >= 2)
    return std::numbers::pi;
  if (doubles > 0 || aromatic > 0)
    return 2.0 * std::numbers::pi / 3.0;
  return std::acos(-1.0 / 3.0);
}

struct PairTerm {
  int i, j;
  double target;
  double k;
  bool repulsive_only;
};

std::vector<PairTerm> pair_terms(const MolecularGraph &m) {
  const int n = m.size();
  std::vector<PairTerm> terms;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const auto b = m.bond(i, j);
      if (b != BondType::kNone) {
        terms.push_back({i, j, bond_length(m.element(i), m.element(j), b), 1.0,
                         false});
        continue;
      }
      int center = -1;
      for (int k : m.neighbors(i))
        if (m.bond(k, j) != BondType::kNone) {
          center = k;
          break;
        }
      if (center >= 0) {
        const double l1 =
            bond_length(m.element(i), m.element(center), m.bond(i, center));
        const double l2 =
            bond_length(m.element(j), m.element(center), m.bond(j, center));
        const double th = ideal_angle(m, center);
        terms.push_back({i, j,
                         std::sqrt(l1 * l1 + l2 * l2 - 2 * l1 * l2 * std::cos(th)),
                         0.5, false});
        continue;
      }
      const bool hi = m.element(i) == Element::kH, hj = m.element(j) == Element::kH;
      const double r0 = hi && hj ? 2.2 : (hi || hj ? 2.5 : 2.9);
      terms.push_back({i, j, r0, 0.2, true});
    }
  return terms;
}

double energy_and_grad(const std::vector<PairTerm> &terms, const Coords &x,
                       Coords &grad) {
  grad.setZero(x.rows(), 3);
  double e = 0;
  for (const auto &t : terms) {
    const Eigen::RowVector3d d = x.row(t.i) - x.row(t.j);
    const double r = std::max(d.norm(), 1e-9);
    const double diff = r - t.target;
    if (t.repulsive_only && diff >= 0)
      continue;
    e += t.k * diff * diff;
    const Eigen::RowVector3d g = 2 * t.k * diff / r * d;
    grad.row(t.i) += g;
    grad.row(t.j) -= g;
  }
  return e;
}

} // namespace

MolecularGraph saturate(const std::vector<Element> &heavy,
                        const std::vector<Bond> &bonds) {
  const int nh = static_cast<int>(heavy.size());
  std::vector<double> used(nh, 0.0);
  for (const auto &b : bonds) {
    if (b.i < 0 || b.j < 0 || b.i >= nh || b.j >= nh)
      throw DataError("skeleton bond index out of range");
    used[b.i] += bond_order(b.type);
    used[b.j] += bond_order(b.type);
  }
  std::vector<Element> elements = heavy;
  std::vector<Bond> all = bonds;
  for (int i = 0; i < nh; ++i) {
    const double free = neutral_valence(heavy[i]) - used[i];
    if (free < -1e-9 || std::abs(free - std::round(free)) > 1e-9)
      throw DataError("heavy atom " + std::to_string(i) + " (" +
                      std::string(element_symbol(heavy[i])) +
                      ") cannot be saturated with hydrogens");
    for (int k = 0; k < static_cast<int>(std::round(free)); ++k) {
      all.push_back({i, static_cast<int>(elements.size()), BondType::kSingle});
      elements.push_back(Element::kH);
    }
  }
  const int n = static_cast<int>(elements.size());
  return MolecularGraph(std::move(elements), std::vector<int>(n, 0), all,
                        Coords::Zero(n, 3));
}

Coords embed_coordinates(const MolecularGraph &m, uint64_t seed) {
  const int n = m.size();
  if (n <= 1)
    return Coords::Zero(n, 3);
  const auto terms = pair_terms(m);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  Coords best;
  double best_e = std::numeric_limits<double>::infinity();
  Coords grad(n, 3);
  for (int restart = 0; restart < 6; ++restart) {
    Coords x(n, 3);
    for (int i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d)
        x(i, d) = u(rng);
    Coords vel = Coords::Zero(n, 3);
    double e = 0;
    for (int it = 0; it < 3000; ++it) {
      e = energy_and_grad(terms, x, grad);
      vel = 0.9 * vel - 0.02 * grad;
      x += vel;
    }
    e = energy_and_grad(terms, x, grad);
    if (e < best_e) {
      best_e = e;
      best = x;
    }
  }
  return center_coords(best);
}

namespace {

struct Skeleton {
  std::vector<Element> atoms;
  std::vector<Bond> bonds;

  int used(int i) const {
    int u = 0;
    for (const auto &b : bonds)
      if (b.i == i || b.j == i)
        u += static_cast<int>(b.type);
    return u;
  }
  bool bonded(int i, int j) const {
    for (const auto &b : bonds)
      if ((b.i == i && b.j == j) || (b.i == j && b.j == i))
        return true;
    return false;
  }
};

} // namespace

std::vector<MolecularGraph> enumerate_molecules(int max_heavy) {
  if (max_heavy < 1)
    throw ConfigError("enumerate_molecules needs max_heavy >= 1");
  const std::vector<Element> heavy = {Element::kC, Element::kN, Element::kO,
                                      Element::kF};
  std::map<std::string, Skeleton> all;
  std::vector<Skeleton> level;
  auto admit = [&](const Skeleton &s, std::vector<Skeleton> &out) {
    const auto key = canonical_key(saturate(s.atoms, s.bonds));
    if (all.emplace(key, s).second)
      out.push_back(s);
  };
  for (auto e : heavy)
    admit({{e}, {}}, level);
  for (int size = 1; size <= max_heavy; ++size) {
    // Ring closures within this size, to a fixed point.
    for (std::size_t q = 0; q < level.size(); ++q) {
      const Skeleton s = level[q];
      const int n = static_cast<int>(s.atoms.size());
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
          if (!s.bonded(i, j) && pair_allowed(s.atoms[i], s.atoms[j]) &&
              s.used(i) < neutral_valence(s.atoms[i]) &&
              s.used(j) < neutral_valence(s.atoms[j])) {
            Skeleton t = s;
            t.bonds.push_back({i, j, BondType::kSingle});
            admit(t, level);
          }
    }
    // Bond-order raises on existing bonds.
    for (std::size_t q = 0; q < level.size(); ++q) {
      const Skeleton s = level[q];
      for (std::size_t b = 0; b < s.bonds.size(); ++b) {
        const auto &bd = s.bonds[b];
        if (bd.type == BondType::kTriple ||
            s.used(bd.i) >= neutral_valence(s.atoms[bd.i]) ||
            s.used(bd.j) >= neutral_valence(s.atoms[bd.j]))
          continue;
        Skeleton t = s;
        t.bonds[b].type = static_cast<BondType>(static_cast<int>(bd.type) + 1);
        admit(t, level);
      }
    }
    if (size == max_heavy)
      break;
    std::vector<Skeleton> next;
    for (const auto &s : level) {
      const int n = static_cast<int>(s.atoms.size());
      for (int i = 0; i < n; ++i) {
        if (s.used(i) >= neutral_valence(s.atoms[i]))
          continue;
        for (auto e : heavy) {
          if (!pair_allowed(s.atoms[i], e))
            continue;
          Skeleton t = s;
          t.atoms.push_back(e);
          t.bonds.push_back({i, n, BondType::kSingle});
          admit(t, next);
        }
      }
    }
    level = std::move(next);
  }
  std::vector<MolecularGraph> out;
  out.reserve(all.size());
  for (const auto &[key, s] : all)
    out.push_back(saturate(s.atoms, s.bonds));
  return out;
}

std::vector<MoleculeRecord> make_toy_corpus(int count, int max_heavy,
                                            uint64_t seed) {
  if (count < 1)
    throw ConfigError("toy corpus size must be positive");
  const auto mols = enumerate_molecules(max_heavy);
  std::vector<MolecularGraph> distinct;
  std::set<std::vector<double>> seen;
  for (const auto &m : mols) {
    const auto s = normalize_minmax(surrogate_spectra(m));
    std::vector<double> sig = s.uv;
    sig.insert(sig.end(), s.ir.begin(), s.ir.end());
    sig.insert(sig.end(), s.raman.begin(), s.raman.end());
    if (seen.insert(std::move(sig)).second)
      distinct.push_back(m);
  }
  if (static_cast<int>(distinct.size()) < count)
    throw ConfigError("only " + std::to_string(distinct.size()) +
                      " spectrally distinct molecules with <= " +
                      std::to_string(max_heavy) + " heavy atoms");
  std::mt19937_64 rng(seed);
  for (int i = static_cast<int>(distinct.size()) - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<uint64_t>(i + 1));
    std::swap(distinct[i], distinct[j]);
  }
  std::vector<MoleculeRecord> out;
  for (int k = 0; k < count; ++k) {
    MolecularGraph m = distinct[k];
    m.coords() = embed_coordinates(m, seed + 7919ULL * (k + 1));
    out.push_back({m, surrogate_spectra(m), nullptr});
  }
  return out;
}

} // namespace diffspectra
