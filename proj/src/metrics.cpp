//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "diffspectra/error.hpp"

namespace diffspectra::metrics {

namespace {

int atomic_number(Element e) {
  static constexpr int z[] = {1, 6, 7, 8, 9};
  return z[static_cast<int>(e)];
}

uint64_t mix(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t as_u64(int v) { return static_cast<uint64_t>(static_cast<int64_t>(v)); }

bool is_bonded(const MolecularGraph &g, int i, int j) {
  return g.bond(i, j) != BondType::kNone;
}

double valence_sum(const MolecularGraph &m, int i) {
  double total = 0;
  for (int j : m.neighbors(i))
    total += bond_order(m.bond(i, j));
  return total;
}

// Connected components of g with the bonds flagged in `cut` removed.
std::vector<std::vector<int>>
components(const MolecularGraph &g, const std::vector<std::vector<bool>> &cut) {
  const int n = g.size();
  std::vector<int> comp(n, -1);
  std::vector<std::vector<int>> out;
  for (int s = 0; s < n; ++s) {
    if (comp[s] >= 0)
      continue;
    std::vector<int> stack{s}, members;
    comp[s] = static_cast<int>(out.size());
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      members.push_back(u);
      for (int v : g.neighbors(u))
        if (comp[v] < 0 && !cut[u][v]) {
          comp[v] = comp[s];
          stack.push_back(v);
        }
    }
    std::sort(members.begin(), members.end());
    out.push_back(members);
  }
  return out;
}

MolecularGraph induced(const MolecularGraph &g, const std::vector<int> &atoms,
                       const std::vector<std::vector<bool>> *cut = nullptr) {
  std::vector<Element> el;
  std::vector<int> ch;
  Coords x(static_cast<int>(atoms.size()), 3);
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    el.push_back(g.element(atoms[k]));
    ch.push_back(g.charge(atoms[k]));
    x.row(static_cast<int>(k)) = g.coords().row(atoms[k]);
  }
  std::vector<Bond> bonds;
  for (std::size_t a = 0; a < atoms.size(); ++a)
    for (std::size_t b = a + 1; b < atoms.size(); ++b) {
      const auto t = g.bond(atoms[a], atoms[b]);
      if (t != BondType::kNone && !(cut && (*cut)[atoms[a]][atoms[b]]))
        bonds.push_back({static_cast<int>(a), static_cast<int>(b), t});
    }
  return MolecularGraph(el, ch, bonds, x);
}

template <typename Fn> void parallel_for(int n, int workers, Fn fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (auto &t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

} // namespace

HeavyGraph heavy_atoms(const MolecularGraph &m) {
  HeavyGraph h;
  for (int i = 0; i < m.size(); ++i)
    if (m.element(i) != Element::kH)
      h.source.push_back(i);
  h.graph = induced(m, h.source);
  for (int i : h.source)
    h.h_count.push_back(m.hydrogen_count(i));
  return h;
}

std::vector<std::vector<bool>> ring_bonds(const MolecularGraph &m) {
  const int n = m.size();
  std::vector<std::vector<bool>> ring(n, std::vector<bool>(n, false));
  for (const auto &b : m.bond_list()) {
    // On a cycle iff j stays reachable from i without the bond itself.
    std::vector<bool> seen(n, false);
    std::vector<int> stack{b.i};
    seen[b.i] = true;
    while (!stack.empty() && !seen[b.j]) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : m.neighbors(u)) {
        if (seen[v] || (u == b.i && v == b.j))
          continue;
        seen[v] = true;
        stack.push_back(v);
      }
    }
    ring[b.i][b.j] = ring[b.j][b.i] = seen[b.j];
  }
  return ring;
}

uint64_t hash_combine(uint64_t seed, uint64_t value) {
  return mix(seed ^ (mix(value) + 0x9E3779B97F4A7C15ULL + (seed << 6) + (seed >> 2)));
}

uint64_t hash_sequence(const std::vector<uint64_t> &values) {
  uint64_t h = mix(values.size());
  for (uint64_t v : values)
    h = hash_combine(h, v);
  return h;
}

double tanimoto(const Fingerprint &a, const Fingerprint &b) {
  if (a.bits.empty() && b.bits.empty())
    return 1.0;
  std::vector<uint64_t> both;
  std::set_intersection(a.bits.begin(), a.bits.end(), b.bits.begin(), b.bits.end(),
                        std::back_inserter(both));
  const double inter = static_cast<double>(both.size());
  return inter / (static_cast<double>(a.bits.size() + b.bits.size()) - inter);
}

double cosine(const Fingerprint &a, const Fingerprint &b) {
  if (a.bits.empty() && b.bits.empty())
    return 1.0;
  if (a.bits.empty() || b.bits.empty())
    return 0.0;
  std::vector<uint64_t> both;
  std::set_intersection(a.bits.begin(), a.bits.end(), b.bits.begin(), b.bits.end(),
                        std::back_inserter(both));
  return static_cast<double>(both.size()) /
         std::sqrt(static_cast<double>(a.bits.size()) *
                   static_cast<double>(b.bits.size()));
}

namespace {

uint64_t atom_invariant(const HeavyGraph &h, const std::vector<std::vector<bool>> &ring,
                        int i) {
  const auto &g = h.graph;
  bool in_ring = false;
  for (int j : g.neighbors(i))
    in_ring = in_ring || ring[i][j];
  return hash_sequence({static_cast<uint64_t>(atomic_number(g.element(i))),
                        static_cast<uint64_t>(g.neighbors(i).size()),
                        static_cast<uint64_t>(h.h_count[i]), as_u64(g.charge(i)),
                        static_cast<uint64_t>(in_ring)});
}

Fingerprint make_fingerprint(std::vector<uint64_t> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return Fingerprint{std::move(ids)};
}

uint64_t atom_label(const MolecularGraph &g, int i) {
  return static_cast<uint64_t>(atomic_number(g.element(i))) * 16 +
         static_cast<uint64_t>(g.charge(i) + 8);
}

// Path identifiers over atoms with allowed[i] set.
std::vector<uint64_t> path_ids(const MolecularGraph &g, const std::vector<bool> &allowed,
                               int max_bonds) {
  std::vector<uint64_t> ids;
  std::vector<int> path;
  std::vector<bool> on_path(g.size(), false);
  std::function<void()> extend = [&]() {
    std::vector<uint64_t> fwd;
    for (std::size_t k = 0; k < path.size(); ++k) {
      if (k > 0)
        fwd.push_back(1000 + static_cast<uint64_t>(g.bond(path[k - 1], path[k])));
      fwd.push_back(atom_label(g, path[k]));
    }
    std::vector<uint64_t> rev(fwd.rbegin(), fwd.rend());
    ids.push_back(hash_sequence(std::min(fwd, rev)));
    if (static_cast<int>(path.size()) - 1 >= max_bonds)
      return;
    for (int v : g.neighbors(path.back())) {
      if (!allowed[v] || on_path[v])
        continue;
      path.push_back(v);
      on_path[v] = true;
      extend();
      on_path[v] = false;
      path.pop_back();
    }
  };
  for (int s = 0; s < g.size(); ++s) {
    if (!allowed[s])
      continue;
    path = {s};
    on_path[s] = true;
    extend();
    on_path[s] = false;
  }
  return ids;
}

} // namespace

uint64_t morgan_atom_invariant(const HeavyGraph &h, int i) {
  return atom_invariant(h, ring_bonds(h.graph), i);
}

Fingerprint morgan_fingerprint(const MolecularGraph &m, int radius, int n_bits) {
  if (radius < 0 || n_bits < 1)
    throw ConfigError("morgan_fingerprint: radius >= 0 and n_bits >= 1 required");
  const auto h = heavy_atoms(m);
  const auto &g = h.graph;
  const auto ring = ring_bonds(g);
  const int n = g.size();
  std::vector<uint64_t> id(n), all;
  for (int i = 0; i < n; ++i) {
    id[i] = atom_invariant(h, ring, i);
    all.push_back(id[i]);
  }
  for (int r = 1; r <= radius; ++r) {
    std::vector<uint64_t> next(n);
    for (int i = 0; i < n; ++i) {
      std::vector<std::pair<uint64_t, uint64_t>> env;
      for (int j : g.neighbors(i))
        env.emplace_back(static_cast<uint64_t>(g.bond(i, j)), id[j]);
      std::sort(env.begin(), env.end());
      std::vector<uint64_t> seq{static_cast<uint64_t>(r), id[i]};
      for (const auto &[b, nid] : env) {
        seq.push_back(b);
        seq.push_back(nid);
      }
      next[i] = hash_sequence(seq);
    }
    id = next;
    all.insert(all.end(), id.begin(), id.end());
  }
  for (auto &v : all)
    v %= static_cast<uint64_t>(n_bits);
  return make_fingerprint(std::move(all));
}

Fingerprint path_fingerprint(const MolecularGraph &m, int max_bonds) {
  const auto h = heavy_atoms(m);
  return make_fingerprint(
      path_ids(h.graph, std::vector<bool>(h.graph.size(), true), max_bonds));
}

std::vector<std::vector<int>> fraggle_fragments(const MolecularGraph &m,
                                                int min_atoms) {
  const auto g = heavy_atoms(m).graph;
  const int n = g.size();
  const auto ring = ring_bonds(g);
  std::vector<Bond> cuttable;
  for (const auto &b : g.bond_list())
    if (b.type == BondType::kSingle && !ring[b.i][b.j])
      cuttable.push_back(b);
  std::set<std::vector<int>> out;
  std::vector<std::vector<bool>> cut(n, std::vector<bool>(n, false));
  auto collect = [&]() {
    for (auto &c : components(g, cut))
      if (static_cast<int>(c.size()) >= min_atoms)
        out.insert(c);
  };
  auto flip = [&](const Bond &b, bool v) { cut[b.i][b.j] = cut[b.j][b.i] = v; };
  for (std::size_t a = 0; a < cuttable.size(); ++a) {
    flip(cuttable[a], true);
    collect();
    for (std::size_t b = a + 1; b < cuttable.size(); ++b) {
      flip(cuttable[b], true);
      collect();
      flip(cuttable[b], false);
    }
    flip(cuttable[a], false);
  }
  return {out.begin(), out.end()};
}

double fraggle_sim(const MolecularGraph &target, const MolecularGraph &candidate) {
  const auto tg = heavy_atoms(target).graph;
  const auto fp_c = path_fingerprint(candidate);
  double best =
      tanimoto(make_fingerprint(path_ids(tg, std::vector<bool>(tg.size(), true), 7)),
               fp_c);
  for (const auto &frag : fraggle_fragments(target)) {
    std::vector<bool> allowed(tg.size(), false);
    for (int i : frag)
      allowed[i] = true;
    best = std::max(best, tanimoto(make_fingerprint(path_ids(tg, allowed, 7)), fp_c));
  }
  return best;
}

// ---------------------------------------------------------------------------

std::string to_string(FunctionalGroup g) {
  static const char *names[] = {"alcohol",  "amine",    "carboxylic_acid",
                                "ester",    "ether",    "aldehyde",
                                "ketone",   "amide",    "nitrile",
                                "alkene",   "alkyne",   "aromatic_ring",
                                "fluoride", "n_o_motif", "alkane"};
  return names[static_cast<int>(g)];
}

std::set<FunctionalGroup> functional_groups(const MolecularGraph &m) {
  using FG = FunctionalGroup;
  const int n = m.size();
  // Hydrogens: explicit neighbours plus any unfilled valence.
  std::vector<int> hcount(n, 0);
  for (int i = 0; i < n; ++i) {
    hcount[i] = m.hydrogen_count(i);
    const auto &allowed = allowed_valences(m.element(i), m.charge(i));
    if (!allowed.empty() && m.element(i) != Element::kH) {
      const double missing = allowed.back() - valence_sum(m, i);
      if (missing > 0.5)
        hcount[i] += static_cast<int>(std::lround(missing));
    }
  }
  auto is = [&](int i, Element e) { return m.element(i) == e; };
  auto heavy_neighbors = [&](int i) {
    std::vector<int> out;
    for (int j : m.neighbors(i))
      if (!is(j, Element::kH))
        out.push_back(j);
    return out;
  };
  auto all_single = [&](int i) {
    for (int j : m.neighbors(i))
      if (m.bond(i, j) != BondType::kSingle)
        return false;
    return true;
  };
  // Carbonyl carbon: C=O. Returns the oxygen or -1.
  auto carbonyl_o = [&](int c) {
    if (!is(c, Element::kC))
      return -1;
    for (int j : m.neighbors(c))
      if (is(j, Element::kO) && m.bond(c, j) == BondType::kDouble)
        return j;
    return -1;
  };

  std::set<FG> out;
  for (int i = 0; i < n; ++i) {
    const auto hv = heavy_neighbors(i);
    if (is(i, Element::kF))
      out.insert(FG::kFluoride);
    if (is(i, Element::kC) && all_single(i) &&
        std::all_of(hv.begin(), hv.end(), [&](int j) { return is(j, Element::kC); }))
      out.insert(FG::kAlkane);
    if (is(i, Element::kO) && all_single(i)) {
      if (hv.size() == 1 && hcount[i] >= 1 && is(hv[0], Element::kC) &&
          carbonyl_o(hv[0]) < 0)
        out.insert(FG::kAlcohol);
      if (hv.size() == 2 && is(hv[0], Element::kC) && is(hv[1], Element::kC) &&
          carbonyl_o(hv[0]) < 0 && carbonyl_o(hv[1]) < 0)
        out.insert(FG::kEther);
    }
    if (is(i, Element::kN) && all_single(i) && m.charge(i) == 0 && !hv.empty() &&
        std::all_of(hv.begin(), hv.end(), [&](int j) {
          return is(j, Element::kC) && carbonyl_o(j) < 0;
        }))
      out.insert(FG::kAmine);
    if (is(i, Element::kN))
      for (int j : hv)
        if (is(j, Element::kO))
          out.insert(FG::kNitrogenOxygen);
    for (int j : hv) {
      if (j < i)
        continue;
      const auto b = m.bond(i, j);
      if (b == BondType::kAromatic)
        out.insert(FG::kAromaticRing);
      const bool cc = is(i, Element::kC) && is(j, Element::kC);
      if (cc && b == BondType::kDouble)
        out.insert(FG::kAlkene);
      if (cc && b == BondType::kTriple)
        out.insert(FG::kAlkyne);
      if (b == BondType::kTriple && ((is(i, Element::kC) && is(j, Element::kN)) ||
                                     (is(i, Element::kN) && is(j, Element::kC))))
        out.insert(FG::kNitrile);
    }
    const int o = carbonyl_o(i);
    if (o < 0)
      continue;
    bool hetero = false;
    int carbons = 0;
    for (int j : hv) {
      if (j == o)
        continue;
      if (m.bond(i, j) != BondType::kSingle) {
        hetero = true;
        continue;
      }
      if (is(j, Element::kO)) {
        hetero = true;
        const auto ohv = heavy_neighbors(j);
        if (hcount[j] >= 1 && ohv.size() == 1)
          out.insert(FG::kCarboxylicAcid);
        if (ohv.size() == 2 && all_single(j))
          out.insert(FG::kEster);
      } else if (is(j, Element::kN)) {
        hetero = true;
        out.insert(FG::kAmide);
      } else if (is(j, Element::kC)) {
        ++carbons;
      } else {
        hetero = true;
      }
    }
    if (!hetero && carbons == 2)
      out.insert(FG::kKetone);
    if (!hetero && carbons < 2 && hcount[i] >= 1)
      out.insert(FG::kAldehyde);
  }
  return out;
}

double fg_sim(const MolecularGraph &a, const MolecularGraph &b) {
  const auto fa = functional_groups(a), fb = functional_groups(b);
  if (fa.empty() && fb.empty())
    return 1.0;
  std::vector<FunctionalGroup> inter;
  std::set_intersection(fa.begin(), fa.end(), fb.begin(), fb.end(),
                        std::back_inserter(inter));
  return static_cast<double>(inter.size()) /
         static_cast<double>(fa.size() + fb.size() - inter.size());
}

// ---------------------------------------------------------------------------

namespace {

using Bits = std::vector<uint64_t>;

struct CliqueSearch {
  int n = 0;
  int words = 0;
  std::vector<Bits> adj;
  int best = 0;
  int current = 0;
  bool timed_out = false;
  std::chrono::steady_clock::time_point deadline;
  bool has_deadline = false;
  uint64_t ticks = 0;

  static bool test(const Bits &b, int v) { return (b[v >> 6] >> (v & 63)) & 1; }
  static void clear(Bits &b, int v) { b[v >> 6] &= ~(uint64_t{1} << (v & 63)); }
  static bool none(const Bits &b) {
    return std::all_of(b.begin(), b.end(), [](uint64_t w) { return w == 0; });
  }
  static int first(const Bits &b) {
    for (std::size_t w = 0; w < b.size(); ++w)
      if (b[w])
        return static_cast<int>(w * 64 + __builtin_ctzll(b[w]));
    return -1;
  }

  // Greedy colouring: vertices listed by colour class, colour = bound on
  // the clique size reachable from the prefix.
  void colour(const Bits &p, std::vector<int> &order, std::vector<int> &col) const {
    Bits uncoloured = p;
    int k = 0;
    while (!none(uncoloured)) {
      ++k;
      Bits q = uncoloured;
      while (!none(q)) {
        const int v = first(q);
        clear(q, v);
        clear(uncoloured, v);
        for (int w = 0; w < words; ++w)
          q[w] &= ~adj[v][w];
        order.push_back(v);
        col.push_back(k);
      }
    }
  }

  void expand(Bits p) {
    if (timed_out)
      return;
    if (has_deadline && (++ticks & 255) == 0 &&
        std::chrono::steady_clock::now() > deadline) {
      timed_out = true;
      return;
    }
    std::vector<int> order, col;
    colour(p, order, col);
    for (int k = static_cast<int>(order.size()) - 1; k >= 0; --k) {
      if (current + col[k] <= best || timed_out)
        return;
      const int v = order[k];
      ++current;
      Bits np(words);
      for (int w = 0; w < words; ++w)
        np[w] = p[w] & adj[v][w];
      if (none(np))
        best = std::max(best, current);
      else
        expand(np);
      --current;
      clear(p, v);
    }
  }
};

} // namespace

MCESResult mces(const MolecularGraph &g1, const MolecularGraph &g2, int64_t timeout_ms) {
  const auto e1 = g1.bond_list(), e2 = g2.bond_list();
  // Product node: edge a of g1 mapped onto edge b of g2 with an explicit
  // endpoint correspondence (x0 -> y0, x1 -> y1).
  struct Node {
    int a, b, x0, x1, y0, y1;
  };
  std::vector<Node> nodes;
  for (int a = 0; a < static_cast<int>(e1.size()); ++a)
    for (int b = 0; b < static_cast<int>(e2.size()); ++b) {
      if (e1[a].type != e2[b].type)
        continue;
      const int u1 = e1[a].i, v1 = e1[a].j, u2 = e2[b].i, v2 = e2[b].j;
      if (atom_label(g1, u1) == atom_label(g2, u2) && atom_label(g1, v1) == atom_label(g2, v2))
        nodes.push_back({a, b, u1, v1, u2, v2});
      if (atom_label(g1, u1) == atom_label(g2, v2) && atom_label(g1, v1) == atom_label(g2, u2))
        nodes.push_back({a, b, u1, v1, v2, u2});
    }
  CliqueSearch s;
  s.n = static_cast<int>(nodes.size());
  s.words = (s.n + 63) / 64;
  s.adj.assign(s.n, Bits(s.words, 0));
  // Compatible iff the union of both vertex correspondences is still a
  // partial bijection: x == x' exactly when y == y'.
  for (int p = 0; p < s.n; ++p)
    for (int q = p + 1; q < s.n; ++q) {
      const auto &P = nodes[p], &Q = nodes[q];
      if (P.a == Q.a || P.b == Q.b)
        continue;
      const int px[2] = {P.x0, P.x1}, py[2] = {P.y0, P.y1};
      const int qx[2] = {Q.x0, Q.x1}, qy[2] = {Q.y0, Q.y1};
      bool ok = true;
      for (int i = 0; i < 2 && ok; ++i)
        for (int j = 0; j < 2 && ok; ++j)
          ok = (px[i] == qx[j]) == (py[i] == qy[j]);
      if (ok) {
        s.adj[p][q >> 6] |= uint64_t{1} << (q & 63);
        s.adj[q][p >> 6] |= uint64_t{1} << (p & 63);
      }
    }
  if (timeout_ms > 0) {
    s.has_deadline = true;
    s.deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  }
  if (s.n > 0) {
    Bits all(s.words, 0);
    for (int v = 0; v < s.n; ++v)
      all[v >> 6] |= uint64_t{1} << (v & 63);
    s.expand(all);
  }
  MCESResult r;
  r.common_edges = s.best;
  r.distance = static_cast<int>(e1.size() + e2.size()) - 2 * s.best;
  r.exact = !s.timed_out;
  return r;
}

bool acc_at_k(const std::vector<MolecularGraph> &candidates,
              const MolecularGraph &target, int k) {
  const auto key = canonical_key(target);
  const int limit = std::min<int>(k, static_cast<int>(candidates.size()));
  for (int i = 0; i < limit; ++i)
    if (canonical_key(candidates[i]) == key)
      return true;
  return false;
}

bool is_valid(const MolecularGraph &m) {
  if (m.empty())
    return false;
  for (int i = 0; i < m.size(); ++i) {
    const auto &allowed = allowed_valences(m.element(i), m.charge(i));
    if (allowed.empty() || valence_sum(m, i) > allowed.back() + 1e-6)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

std::string to_string(GeometryFeature f) {
  switch (f) {
  case GeometryFeature::kBond:
    return "bond";
  case GeometryFeature::kAngle:
    return "angle";
  default:
    return "dihedral";
  }
}

std::vector<double> geometry_features(const MolecularGraph &m, GeometryFeature f) {
  using V = Eigen::Vector3d;
  const auto &x = m.coords();
  auto pos = [&](int i) -> V { return x.row(i).transpose(); };
  std::vector<double> out;
  if (f == GeometryFeature::kBond) {
    for (const auto &b : m.bond_list())
      out.push_back((pos(b.i) - pos(b.j)).norm());
  } else if (f == GeometryFeature::kAngle) {
    for (int j = 0; j < m.size(); ++j) {
      const auto nb = m.neighbors(j);
      for (std::size_t a = 0; a < nb.size(); ++a)
        for (std::size_t c = a + 1; c < nb.size(); ++c) {
          const V u = pos(nb[a]) - pos(j), v = pos(nb[c]) - pos(j);
          const double d = u.norm() * v.norm();
          if (d > 1e-12)
            out.push_back(std::acos(std::clamp(u.dot(v) / d, -1.0, 1.0)));
        }
    }
  } else {
    for (const auto &b : m.bond_list())
      for (int i : m.neighbors(b.i))
        for (int l : m.neighbors(b.j)) {
          if (i == b.j || l == b.i || i == l)
            continue;
          const V b1 = pos(b.i) - pos(i), b2 = pos(b.j) - pos(b.i),
                  b3 = pos(l) - pos(b.j);
          const V n1 = b1.cross(b2), n2 = b2.cross(b3);
          if (n1.norm() < 1e-12 || n2.norm() < 1e-12)
            continue;
          const double y = n1.cross(n2).dot(b2.normalized());
          out.push_back(std::abs(std::atan2(y, n1.dot(n2))));
        }
  }
  return out;
}

double mmd2(const std::vector<double> &x, const std::vector<double> &y,
            double bandwidth) {
  if (x.empty() || y.empty())
    throw NumericError("mmd2: empty population");
  double h = bandwidth;
  if (h <= 0) {
    std::vector<double> pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    std::vector<double> d;
    d.reserve(pooled.size() * (pooled.size() - 1) / 2);
    for (std::size_t i = 0; i < pooled.size(); ++i)
      for (std::size_t j = i + 1; j < pooled.size(); ++j)
        d.push_back(std::abs(pooled[i] - pooled[j]));
    if (!d.empty()) {
      auto mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
      std::nth_element(d.begin(), mid, d.end());
      h = *mid;
    }
    if (!(h > 0))
      h = 1.0; // all points coincide; any bandwidth gives the same value
  }
  const double inv = 1.0 / (2 * h * h);
  auto mean_k = [&](const std::vector<double> &a, const std::vector<double> &b) {
    double s = 0;
    for (double u : a)
      for (double v : b)
        s += std::exp(-(u - v) * (u - v) * inv);
    return s / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  return mean_k(x, x) + mean_k(y, y) - 2 * mean_k(x, y);
}

namespace {

std::vector<double> population(const std::vector<MolecularGraph> &mols,
                               GeometryFeature f, std::size_t max_points) {
  std::vector<double> all;
  for (const auto &m : mols) {
    const auto v = geometry_features(m, f);
    all.insert(all.end(), v.begin(), v.end());
  }
  if (all.size() <= max_points)
    return all;
  std::vector<double> thin;
  for (std::size_t k = 0; k < max_points; ++k)
    thin.push_back(all[k * all.size() / max_points]);
  return thin;
}

} // namespace

double geometry_mmd(const std::vector<MolecularGraph> &samples,
                    const std::vector<MolecularGraph> &refs, GeometryFeature f,
                    std::size_t max_points) {
  const auto x = population(samples, f, max_points);
  const auto y = population(refs, f, max_points);
  if (x.empty() || y.empty())
    return std::nan("");
  return mmd2(x, y);
}

// ---------------------------------------------------------------------------

void MetricReport::set_null(const std::string &name, const std::string &reason) {
  values[name] = std::nullopt;
  null_reasons[name] = reason;
}

void MetricReport::merge(const MetricReport &other) {
  for (const auto &[k, v] : other.values)
    values[k] = v;
  for (const auto &[k, v] : other.null_reasons)
    null_reasons[k] = v;
  for (const auto &d : other.details)
    details.push_back(d);
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto &[k, v] : values)
    m[k] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  return {{"metrics", m}, {"null_reasons", null_reasons}, {"details", details}};
}

const std::vector<std::string> &metric_names(const std::string &group) {
  static const std::map<std::string, std::vector<std::string>> names = {
      {"generation",
       {"validity", "v_and_c", "v_and_u", "v_and_u_and_n", "atom_stability",
        "mol_stability", "snn", "frag", "scaf", "fcd"}},
      {"geometry", {"bond_mmd", "angle_mmd", "dihedral_mmd"}},
      {"elucidation",
       {"acc", "mces", "tanisim_mg", "cossim_mg", "tanisim_ma", "fraggle_sim",
        "fg_sim"}},
  };
  static const std::vector<std::string> none;
  auto it = names.find(group);
  return it == names.end() ? none : it->second;
}

MetricSelection parse_metric_selection(const std::string &list) {
  MetricSelection sel;
  sel.items.clear();
  std::string item;
  std::stringstream ss(list);
  while (std::getline(ss, item, ',')) {
    if (item.empty())
      continue;
    bool known = item == "all" || !metric_names(item).empty();
    for (const char *g : {"generation", "geometry", "elucidation"})
      for (const auto &n : metric_names(g))
        known = known || n == item;
    if (!known)
      throw ConfigError("unknown metric or group '" + item + "'");
    sel.items.insert(item);
  }
  if (sel.items.empty())
    throw ConfigError("empty metric selection");
  return sel;
}

bool MetricSelection::wants(const std::string &group, const std::string &metric) const {
  return items.count("all") || items.count(group) || items.count(metric);
}

bool MetricSelection::wants_group(const std::string &group) const {
  if (items.count("all") || items.count(group))
    return true;
  for (const auto &n : metric_names(group))
    if (items.count(n))
      return true;
  return false;
}

namespace {

std::map<std::string, double> fragment_counts(const std::vector<MolecularGraph> &mols) {
  std::map<std::string, double> counts;
  for (const auto &m : mols) {
    const auto g = heavy_atoms(m).graph;
    const int n = g.size();
    const auto ring = ring_bonds(g);
    std::vector<std::vector<bool>> cut(n, std::vector<bool>(n, false));
    for (const auto &b : g.bond_list())
      if (b.type == BondType::kSingle && !ring[b.i][b.j])
        cut[b.i][b.j] = cut[b.j][b.i] = true;
    for (const auto &c : components(g, cut))
      counts[canonical_key(induced(g, c, &cut))] += 1;
  }
  return counts;
}

// Ring systems plus linkers: heavy atoms left after repeatedly stripping
// atoms of degree <= 1. Empty for acyclic molecules.
std::string scaffold_key(const MolecularGraph &m) {
  auto g = heavy_atoms(m).graph;
  std::vector<int> keep(g.size());
  std::iota(keep.begin(), keep.end(), 0);
  while (true) {
    std::vector<int> next;
    for (int i : keep) {
      int deg = 0;
      for (int j : keep)
        deg += j != i && is_bonded(g, i, j);
      if (deg >= 2)
        next.push_back(i);
    }
    if (next.size() == keep.size())
      break;
    keep = next;
  }
  return keep.empty() ? std::string() : canonical_key(induced(g, keep));
}

std::optional<double> count_cosine(const std::map<std::string, double> &a,
                                   const std::map<std::string, double> &b) {
  if (a.empty() || b.empty())
    return std::nullopt;
  double dot = 0, na = 0, nb = 0;
  for (const auto &[k, v] : a) {
    na += v * v;
    auto it = b.find(k);
    if (it != b.end())
      dot += v * it->second;
  }
  for (const auto &[k, v] : b)
    nb += v * v;
  return dot / std::sqrt(na * nb);
}

} // namespace

MetricReport generation_metrics(const std::vector<MolecularGraph> &samples,
                                const std::vector<MolecularGraph> &train_refs,
                                const std::vector<MolecularGraph> &test_refs,
                                const MetricSelection &sel) {
  MetricReport r;
  const std::string grp = "generation";
  auto want = [&](const char *m) { return sel.wants(grp, m); };
  if (samples.empty()) {
    for (const auto &n : metric_names(grp))
      if (want(n.c_str()))
        r.set_null(n, "no samples");
    return r;
  }
  const double n = static_cast<double>(samples.size());
  int valid = 0, vc = 0, mol_stable = 0;
  long atoms = 0, stable_atoms = 0;
  std::set<std::string> unique;
  std::unordered_set<std::string> train_keys;
  for (const auto &t : train_refs)
    train_keys.insert(canonical_key(t));
  for (const auto &m : samples) {
    const auto rep = check_valence(m);
    const bool ok = is_valid(m);
    valid += ok;
    vc += ok && rep.connected;
    mol_stable += rep.molecule_stable;
    atoms += m.size();
    stable_atoms += rep.stable_atoms;
    if (ok && rep.connected)
      unique.insert(canonical_key(m));
  }
  int novel = 0;
  for (const auto &k : unique)
    novel += !train_keys.count(k);
  if (want("validity"))
    r.set("validity", valid / n);
  if (want("v_and_c"))
    r.set("v_and_c", vc / n);
  if (want("v_and_u"))
    r.set("v_and_u", static_cast<double>(unique.size()) / n);
  if (want("v_and_u_and_n")) {
    if (train_refs.empty())
      r.set_null("v_and_u_and_n", "no training references");
    else
      r.set("v_and_u_and_n", novel / n);
  }
  if (want("atom_stability"))
    r.set("atom_stability",
          atoms ? static_cast<double>(stable_atoms) / static_cast<double>(atoms) : 0.0);
  if (want("mol_stability"))
    r.set("mol_stability", mol_stable / n);

  if (want("snn")) {
    if (test_refs.empty()) {
      r.set_null("snn", "no test references");
    } else {
      std::vector<Fingerprint> ref_fp;
      for (const auto &t : test_refs)
        ref_fp.push_back(morgan_fingerprint(t));
      double sum = 0;
      for (const auto &m : samples) {
        const auto fp = morgan_fingerprint(m);
        double best = 0;
        for (const auto &f : ref_fp)
          best = std::max(best, tanimoto(fp, f));
        sum += best;
      }
      r.set("snn", sum / n);
    }
  }
  if (want("frag")) {
    const auto v = count_cosine(fragment_counts(samples), fragment_counts(test_refs));
    if (v)
      r.set("frag", *v);
    else
      r.set_null("frag", "no test references");
  }
  if (want("scaf")) {
    std::map<std::string, double> a, b;
    for (const auto &m : samples)
      if (auto k = scaffold_key(m); !k.empty())
        a[k] += 1;
    for (const auto &m : test_refs)
      if (auto k = scaffold_key(m); !k.empty())
        b[k] += 1;
    if (a.empty() && b.empty())
      r.set_null("scaf", "no ring scaffolds in samples or references");
    else
      r.set("scaf", count_cosine(a, b).value_or(0.0));
  }
  if (want("fcd"))
    r.set_null("fcd", "requires a pretrained ChemNet model; not bundled");
  return r;
}

MetricReport geometry_metrics(const std::vector<MolecularGraph> &samples,
                              const std::vector<MolecularGraph> &test_refs,
                              const MetricSelection &sel) {
  MetricReport r;
  for (auto f : {GeometryFeature::kBond, GeometryFeature::kAngle,
                 GeometryFeature::kDihedral}) {
    const auto name = to_string(f) + "_mmd";
    if (!sel.wants("geometry", name))
      continue;
    const double v = geometry_mmd(samples, test_refs, f);
    if (std::isnan(v))
      r.set_null(name, "empty " + to_string(f) + " population");
    else
      r.set(name, v);
  }
  return r;
}

MetricReport elucidation_metrics(const std::vector<MolecularGraph> &targets,
                                 const std::vector<std::vector<MolecularGraph>> &candidates,
                                 const ElucidationOptions &opts,
                                 const MetricSelection &sel) {
  if (targets.size() != candidates.size())
    throw DataError("elucidation_metrics: one candidate list per target required");
  MetricReport r;
  const std::string grp = "elucidation";
  auto want = [&](const char *m) { return sel.wants(grp, m); };
  const int n = static_cast<int>(targets.size());
  if (n == 0) {
    for (const auto &name : metric_names(grp))
      if (want(name.c_str()))
        r.set_null(name, "no targets");
    return r;
  }
  std::size_t min_k = SIZE_MAX;
  for (int t = 0; t < n; ++t) {
    if (candidates[t].empty())
      throw DataError("target " + std::to_string(t) + " has no candidates");
    min_k = std::min(min_k, candidates[t].size());
  }

  struct Row {
    std::vector<bool> hit;
    MCESResult mces;
    double tani = 0, cos = 0, fraggle = 0, fg = 0;
    std::string key;
  };
  std::vector<Row> rows(n);
  parallel_for(n, opts.workers, [&](int t) {
    auto &row = rows[t];
    const auto &target = targets[t];
    const auto &top = candidates[t].front();
    row.key = canonical_key(target);
    std::vector<std::string> keys;
    for (const auto &c : candidates[t])
      keys.push_back(canonical_key(c));
    for (int k : opts.ks) {
      const int lim = std::min<int>(k, static_cast<int>(keys.size()));
      row.hit.push_back(std::find(keys.begin(), keys.begin() + lim, row.key) !=
                        keys.begin() + lim);
    }
    if (want("mces"))
      row.mces = mces(heavy_atoms(target).graph, heavy_atoms(top).graph,
                      opts.mces_timeout_ms);
    if (want("tanisim_mg") || want("cossim_mg")) {
      const auto a = morgan_fingerprint(target), b = morgan_fingerprint(top);
      row.tani = tanimoto(a, b);
      row.cos = cosine(a, b);
    }
    if (want("fraggle_sim"))
      row.fraggle = fraggle_sim(target, top);
    if (want("fg_sim"))
      row.fg = fg_sim(target, top);
  });

  auto mean = [&](auto fn) {
    double s = 0;
    for (const auto &row : rows)
      s += fn(row);
    return s / n;
  };
  if (want("acc"))
    for (std::size_t i = 0; i < opts.ks.size(); ++i) {
      const auto name = "acc@" + std::to_string(opts.ks[i]);
      if (static_cast<std::size_t>(opts.ks[i]) > min_k)
        r.set_null(name, "fewer than " + std::to_string(opts.ks[i]) +
                             " candidates for some target");
      else
        r.set(name, mean([&](const Row &row) { return row.hit[i] ? 1.0 : 0.0; }));
    }
  if (want("mces")) {
    r.set("mces_distance", mean([](const Row &row) { return row.mces.distance; }));
    r.set("mces_common_edges",
          mean([](const Row &row) { return row.mces.common_edges; }));
    r.set("mces_timeouts", mean([](const Row &row) { return row.mces.exact ? 0.0 : 1.0; }) * n);
  }
  if (want("tanisim_mg"))
    r.set("tanisim_mg", mean([](const Row &row) { return row.tani; }));
  if (want("cossim_mg"))
    r.set("cossim_mg", mean([](const Row &row) { return row.cos; }));
  if (want("tanisim_ma"))
    r.set_null("tanisim_ma", "MACCS keys need a SMARTS engine; no toolkit adapter enabled");
  if (want("fraggle_sim"))
    r.set("fraggle_sim", mean([](const Row &row) { return row.fraggle; }));
  if (want("fg_sim"))
    r.set("fg_sim", mean([](const Row &row) { return row.fg; }));

  for (int t = 0; t < n; ++t) {
    const auto &row = rows[t];
    nlohmann::json d{{"target", t}, {"key", row.key}};
    for (std::size_t i = 0; i < opts.ks.size(); ++i)
      d["hit@" + std::to_string(opts.ks[i])] = static_cast<bool>(row.hit[i]);
    if (want("mces")) {
      d["mces_distance"] = row.mces.distance;
      d["mces_exact"] = row.mces.exact;
    }
    if (want("tanisim_mg"))
      d["tanisim_mg"] = row.tani;
    if (want("cossim_mg"))
      d["cossim_mg"] = row.cos;
    if (want("fraggle_sim"))
      d["fraggle_sim"] = row.fraggle;
    if (want("fg_sim"))
      d["fg_sim"] = row.fg;
    r.details.push_back(d);
  }
  return r;
}

} // namespace diffspectra::metrics
