//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_SPECTRA_HPP_
#define DIFFSPECTRA_SPECTRA_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffspectra/molgraph.hpp"

namespace diffspectra {

// UV-Vis: 1.5-13.5 eV at 0.02 eV. IR and Raman: 500-4000 cm^-1 at 1 cm^-1.
inline constexpr int kUvLength = 601;
inline constexpr int kIrLength = 3501;
inline constexpr int kRamanLength = 3501;
inline constexpr double kUvStart = 1.5, kUvStep = 0.02;
inline constexpr double kVibStart = 500.0, kVibStep = 1.0;

struct SpectraSet {
  std::vector<double> uv;
  std::vector<double> ir;
  std::vector<double> raman;

  // Throws DataError on wrong lengths, negative or non-finite entries.
  void validate() const;
  friend bool operator==(const SpectraSet &, const SpectraSet &) = default;
};

// Per-spectrum min-max scaling to [0, 1]; constant spectra map to zeros.
SpectraSet normalize_minmax(const SpectraSet &s);

// One vibrational band of the surrogate generator.
struct BandEntry {
  Element a;
  Element b;
  BondType type;
  double center;          // cm^-1
  double raman_intensity; // relative to the IR height
};

// Listed bands; bond classes not listed get a fallback centre in the
// 505-860 cm^-1 window (see band_for).
const std::vector<BandEntry> &band_table();
BandEntry band_for(Element a, Element b, BondType type);

inline constexpr double kIrBandWidth = 20.0; // Gaussian sigma, cm^-1
inline constexpr double kUvBandWidth = 0.5;  // Gaussian sigma, eV
inline constexpr double kUvBaseEnergy = 9.0;
inline constexpr double kUvShiftPerPiBond = 0.4;

// Deterministic stand-in spectra that depend only on the bond-class
// multiset: Gaussian IR/Raman bands per bond class, height = bond count
// (times the Raman intensity), and one UV band at
// 9.0 - 0.4 * (#double + #aromatic) eV clipped to the grid.
SpectraSet surrogate_spectra(const MolecularGraph &m);

struct MoleculeRecord {
  MolecularGraph graph;
  std::optional<SpectraSet> spectra;
  nlohmann::json extra; // unrecognised keys carried through (may be null)
};

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

// Deterministic 90/5/5 split (val and test each floor(5%), train the rest).
DatasetSplit make_split(int n, uint64_t seed);
nlohmann::json split_to_json(const DatasetSplit &s);

struct LineDiagnostic {
  int line; // 1-based
  std::string message;
};

struct Corpus {
  std::vector<MoleculeRecord> records;
  DatasetSplit split;
  std::vector<LineDiagnostic> rejected;
};

// The "uv", "ir" and "raman" arrays of a record; throws DataError.
SpectraSet parse_spectra(const nlohmann::json &j);

// Parses one JSONL record. Throws DataError on schema violations.
MoleculeRecord parse_record(const nlohmann::json &j, bool require_spectra);
nlohmann::json record_to_json(const MoleculeRecord &r, bool include_spectra);

// Reads a JSON-lines corpus. Malformed records are skipped and reported
// with their line numbers; the split is computed over accepted records.
Corpus load_corpus(const std::string &path, uint64_t split_seed,
                   bool require_spectra = true);

// Records without spectra requirement, no split (sample files).
std::vector<MoleculeRecord> load_records(const std::string &path,
                                         std::vector<LineDiagnostic> *rejected =
                                             nullptr);

void write_records(const std::string &path,
                   const std::vector<MoleculeRecord> &records,
                   bool include_spectra);

} // namespace diffspectra

#endif // DIFFSPECTRA_SPECTRA_HPP_
