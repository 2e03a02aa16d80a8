#!/usr/bin/env python3
#
# diffspectra - Copyright 2026 The diffspectra Authors.
# SPDX-License-Identifier: Apache-2.0
#
"""Recomputes a subset of an evaluate report with networkx.

Usage: crosscheck_metrics.py SAMPLES REFERENCES REPORT

Validity, connectivity, stability, uniqueness, ACC@K and MCES are derived
here from graph isomorphism and subgraph monomorphism tests, independently
of the C++ implementation, and compared with REPORT. Exit status 0 when
every recomputed value matches to 1e-9.
"""

import itertools
import json
import sys

import networkx as nx
from networkx.algorithms import isomorphism as iso

MAX_VALENCE = {("H", 0): 1, ("C", 0): 4, ("N", 0): 3, ("N", 1): 4,
               ("O", 0): 2, ("O", -1): 1, ("F", 0): 1}
ORDER = {1: 1.0, 2: 2.0, 3: 3.0, "ar": 1.5}


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def to_graph(rec, heavy_only=False):
    g = nx.Graph()
    charges = rec.get("charges", [0] * len(rec["atoms"]))
    for i, (el, q) in enumerate(zip(rec["atoms"], charges)):
        if heavy_only and el == "H":
            continue
        g.add_node(i, label=(el, q))
    for i, j, o in rec.get("bonds", []):
        if i in g and j in g:
            g.add_edge(i, j, order=str(o))
    return g


def valence(rec, i):
    return sum(ORDER[o] for a, b, o in rec.get("bonds", []) if i in (a, b))


def same(g1, g2):
    return nx.is_isomorphic(g1, g2, node_match=iso.categorical_node_match("label", None),
                            edge_match=iso.categorical_edge_match("order", None))


def mces_common_edges(g1, g2):
    """Largest edge subset of the smaller graph that embeds in the other."""
    if g1.number_of_edges() > g2.number_of_edges():
        g1, g2 = g2, g1
    edges = list(g1.edges())
    nm = iso.categorical_node_match("label", None)
    em = iso.categorical_edge_match("order", None)
    for size in range(len(edges), 0, -1):
        for subset in itertools.combinations(edges, size):
            sub = g1.edge_subgraph(subset)
            if iso.GraphMatcher(g2, sub, node_match=nm, edge_match=em).subgraph_is_monomorphic():
                return size
    return 0


def main(argv):
    samples, refs = read_jsonl(argv[1]), read_jsonl(argv[2])
    with open(argv[3]) as f:
        report = json.load(f)["metrics"]
    n = len(samples)
    got = {}

    valid = [len(s["atoms"]) > 0 and all(
        (el, q) in MAX_VALENCE and valence(s, i) <= MAX_VALENCE[(el, q)] + 1e-6
        for i, (el, q) in enumerate(zip(s["atoms"], s.get("charges", [0] * len(s["atoms"])))))
        for s in samples]
    graphs = [to_graph(s) for s in samples]
    connected = [g.number_of_nodes() > 0 and nx.is_connected(g) for g in graphs]
    stable_atoms, total_atoms, stable_mols = 0, 0, 0
    for s in samples:
        ok = 0
        for i, (el, q) in enumerate(zip(s["atoms"], s.get("charges", [0] * len(s["atoms"])))):
            ok += (el, q) in MAX_VALENCE and abs(valence(s, i) - MAX_VALENCE[(el, q)]) < 1e-6
        stable_atoms += ok
        total_atoms += len(s["atoms"])
        stable_mols += ok == len(s["atoms"])
    got["validity"] = sum(valid) / n
    got["v_and_c"] = sum(v and c for v, c in zip(valid, connected)) / n
    got["atom_stability"] = stable_atoms / total_atoms
    got["mol_stability"] = stable_mols / n
    classes = []
    for g, v, c in zip(graphs, valid, connected):
        if v and c and not any(same(g, h) for h in classes):
            classes.append(g)
    got["v_and_u"] = len(classes) / n

    by_ref = {}
    for s in samples:
        by_ref.setdefault(s["source_index"], []).append(s)
    targets = [r for r in refs if r["source_index"] in by_ref]
    if targets:
        ks = [int(key[4:]) for key, v in report.items()
              if key.startswith("acc@") and v is not None]
        for k in ks:
            hits = 0
            for r in targets:
                cands = sorted(by_ref[r["source_index"]], key=lambda s: s["candidate"])[:k]
                hits += any(same(to_graph(r), to_graph(c)) for c in cands)
            got[f"acc@{k}"] = hits / len(targets)
        common, dist = [], []
        for r in targets:
            first = min(by_ref[r["source_index"]], key=lambda s: s["candidate"])
            a, b = to_graph(r, True), to_graph(first, True)
            e = mces_common_edges(a, b)
            common.append(e)
            dist.append(a.number_of_edges() + b.number_of_edges() - 2 * e)
        got["mces_common_edges"] = sum(common) / len(common)
        got["mces_distance"] = sum(dist) / len(dist)

    bad = 0
    for key, value in sorted(got.items()):
        theirs = report.get(key)
        match = theirs is not None and abs(theirs - value) <= 1e-9
        bad += not match
        print(f"{key:20s} networkx {value:.6f}  report {theirs}  {'ok' if match else 'MISMATCH'}")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
