//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_TOY_CORPUS_HPP_
#define DIFFSPECTRA_TOY_CORPUS_HPP_

#include <cstdint>
#include <vector>

#include "diffspectra/molgraph.hpp"
#include "diffspectra/spectra.hpp"

namespace diffspectra {

// Builds a neutral molecule from a heavy-atom skeleton, saturating every
// heavy atom with hydrogens (C 4, N 3, O 2, F 1). Hydrogens are appended
// after the heavy atoms; coordinates are zero. Throws DataError when a
// heavy atom is over-valent.
MolecularGraph saturate(const std::vector<Element> &heavy,
                        const std::vector<Bond> &bonds);

// Rough 3D coordinates from bond-length and bond-angle targets with soft
// non-bonded repulsion, minimised by gradient descent from seeded random
// starts. Result is centred.
Coords embed_coordinates(const MolecularGraph &m, uint64_t seed);

// All neutral saturated molecules with 1..max_heavy heavy atoms from
// {C, N, O, F} (no O-O, F-F, O-F or N-F bonds; rings of single bonds
// allowed), deduplicated by canonical key and sorted by it.
std::vector<MolecularGraph> enumerate_molecules(int max_heavy);

// `count` molecules with pairwise-distinct normalised surrogate spectra,
// drawn deterministically from enumerate_molecules(max_heavy), with
// embedded coordinates and surrogate spectra. Throws ConfigError if fewer
// than `count` spectrally distinct molecules exist.
std::vector<MoleculeRecord> make_toy_corpus(int count, int max_heavy,
                                            uint64_t seed);

} // namespace diffspectra

#endif // DIFFSPECTRA_TOY_CORPUS_HPP_
