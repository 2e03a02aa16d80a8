//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <tuple>

namespace diffspectra {

void SpectraSet::validate() const {
  auto check = [](const std::vector<double> &v, std::size_t len,
                  const char *name) {
    if (v.size() != len)
      throw DataError(std::string(name) + " spectrum has length " +
                      std::to_string(v.size()) + ", expected " +
                      std::to_string(len));
    for (double x : v)
      if (!std::isfinite(x) || x < 0)
        throw DataError(std::string(name) +
                        " spectrum has a negative or non-finite intensity");
  };
  check(uv, kUvLength, "uv");
  check(ir, kIrLength, "ir");
  check(raman, kRamanLength, "raman");
}

namespace {

std::vector<double> minmax(const std::vector<double> &v) {
  if (v.empty())
    return v;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, range = *hi - *lo;
  std::vector<double> out(v.size(), 0.0);
  if (range > 0)
    for (std::size_t i = 0; i < v.size(); ++i)
      out[i] = (v[i] - a) / range;
  return out;
}

void add_gaussian(std::vector<double> &s, double start, double step,
                  double center, double sigma, double height) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double z = (start + step * static_cast<double>(i) - center) / sigma;
    if (std::abs(z) < 10.0)
      s[i] += height * std::exp(-0.5 * z * z);
  }
}

} // namespace

SpectraSet normalize_minmax(const SpectraSet &s) {
  return {minmax(s.uv), minmax(s.ir), minmax(s.raman)};
}

const std::vector<BandEntry> &band_table() {
  using E = Element;
  using B = BondType;
  static const std::vector<BandEntry> table = {
      {E::kC, E::kH, B::kSingle, 2950, 0.6},
      {E::kN, E::kH, B::kSingle, 3300, 0.3},
      {E::kO, E::kH, B::kSingle, 3400, 0.2},
      {E::kF, E::kH, B::kSingle, 3950, 0.1},
      {E::kH, E::kH, B::kSingle, 3980, 1.0},
      {E::kC, E::kC, B::kSingle, 1000, 1.0},
      {E::kC, E::kC, B::kDouble, 1650, 1.2},
      {E::kC, E::kC, B::kTriple, 2150, 1.5},
      {E::kC, E::kC, B::kAromatic, 1600, 0.9},
      {E::kC, E::kN, B::kSingle, 1200, 0.5},
      {E::kC, E::kN, B::kDouble, 1620, 0.6},
      {E::kC, E::kN, B::kTriple, 2250, 0.8},
      {E::kC, E::kN, B::kAromatic, 1550, 0.7},
      {E::kC, E::kO, B::kSingle, 1100, 0.4},
      {E::kC, E::kO, B::kDouble, 1700, 0.5},
      {E::kC, E::kO, B::kTriple, 2100, 0.7},
      {E::kC, E::kO, B::kAromatic, 1250, 0.5},
      {E::kC, E::kF, B::kSingle, 1150, 0.3},
      {E::kN, E::kN, B::kSingle, 1050, 0.8},
      {E::kN, E::kN, B::kDouble, 1575, 1.1},
      {E::kN, E::kN, B::kTriple, 2330, 1.0},
      {E::kN, E::kN, B::kAromatic, 1450, 0.6},
      {E::kN, E::kO, B::kSingle, 900, 0.7},
      {E::kN, E::kO, B::kDouble, 1500, 0.6},
      {E::kN, E::kO, B::kAromatic, 1350, 0.5},
      {E::kO, E::kO, B::kSingle, 880, 0.9},
  };
  return table;
}

BandEntry band_for(Element a, Element b, BondType type) {
  if (static_cast<int>(a) > static_cast<int>(b))
    std::swap(a, b);
  for (const auto &e : band_table()) {
    auto ea = e.a, eb = e.b;
    if (static_cast<int>(ea) > static_cast<int>(eb))
      std::swap(ea, eb);
    if (ea == a && eb == b && e.type == type)
      return e;
  }
  // Fallback: unique centre per (pair, order) in the low-frequency window.
  const int ia = static_cast<int>(a), ib = static_cast<int>(b);
  const int pair = ia * kNumElements - ia * (ia - 1) / 2 + (ib - ia);
  const int k = pair * 4 + (static_cast<int>(type) - 1);
  return {a, b, type, 505.0 + 6.0 * k, 0.5};
}

SpectraSet surrogate_spectra(const MolecularGraph &m) {
  SpectraSet s{std::vector<double>(kUvLength, 0.0),
               std::vector<double>(kIrLength, 0.0),
               std::vector<double>(kRamanLength, 0.0)};
  std::map<std::tuple<int, int, int>, int> counts;
  int pi_bonds = 0;
  for (const auto &b : m.bond_list()) {
    int ea = static_cast<int>(m.element(b.i)), eb = static_cast<int>(m.element(b.j));
    if (ea > eb)
      std::swap(ea, eb);
    ++counts[{ea, eb, static_cast<int>(b.type)}];
    pi_bonds += b.type == BondType::kDouble || b.type == BondType::kAromatic;
  }
  for (const auto &[key, count] : counts) {
    const auto band = band_for(static_cast<Element>(std::get<0>(key)),
                               static_cast<Element>(std::get<1>(key)),
                               static_cast<BondType>(std::get<2>(key)));
    add_gaussian(s.ir, kVibStart, kVibStep, band.center, kIrBandWidth, count);
    add_gaussian(s.raman, kVibStart, kVibStep, band.center, kIrBandWidth,
                 count * band.raman_intensity);
  }
  const double e_max = kUvStart + kUvStep * (kUvLength - 1);
  const double energy =
      std::clamp(kUvBaseEnergy - kUvShiftPerPiBond * pi_bonds, kUvStart, e_max);
  add_gaussian(s.uv, kUvStart, kUvStep, energy, kUvBandWidth, 1.0);
  return s;
}

// ---------------------------------------------------------------------------

DatasetSplit make_split(int n, uint64_t seed) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i)
    idx[i] = i;
  std::mt19937_64 rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  const int n_val = n / 20, n_test = n / 20;
  DatasetSplit s;
  s.val.assign(idx.begin(), idx.begin() + n_val);
  s.test.assign(idx.begin() + n_val, idx.begin() + n_val + n_test);
  s.train.assign(idx.begin() + n_val + n_test, idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

nlohmann::json split_to_json(const DatasetSplit &s) {
  return {{"train", s.train}, {"val", s.val}, {"test", s.test}};
}

namespace {

std::vector<double> read_spectrum(const nlohmann::json &j, const char *key,
                                  std::size_t len) {
  if (!j.contains(key) || !j[key].is_array())
    throw DataError(std::string("missing spectrum '") + key + "'");
  const auto &arr = j[key];
  if (arr.size() != len)
    throw DataError(std::string(key) + " spectrum has length " +
                    std::to_string(arr.size()) + ", expected " +
                    std::to_string(len));
  std::vector<double> v;
  v.reserve(len);
  for (const auto &x : arr) {
    if (!x.is_number())
      throw DataError(std::string(key) + " spectrum has a non-numeric entry");
    v.push_back(x.get<double>());
  }
  return v;
}

BondType parse_order(const nlohmann::json &o) {
  if (o.is_string()) {
    if (o.get<std::string>() == "ar")
      return BondType::kAromatic;
  } else if (o.is_number_integer()) {
    switch (o.get<int>()) {
    case 1:
      return BondType::kSingle;
    case 2:
      return BondType::kDouble;
    case 3:
      return BondType::kTriple;
    default:
      break;
    }
  }
  throw DataError("bond order must be 1, 2, 3 or \"ar\", got " + o.dump());
}

nlohmann::json order_to_json(BondType b) {
  if (b == BondType::kAromatic)
    return "ar";
  return static_cast<int>(b);
}

} // namespace

SpectraSet parse_spectra(const nlohmann::json &j) {
  if (!j.is_object())
    throw DataError("record is not a JSON object");
  SpectraSet s{read_spectrum(j, "uv", kUvLength), read_spectrum(j, "ir", kIrLength),
               read_spectrum(j, "raman", kRamanLength)};
  s.validate();
  return s;
}

MoleculeRecord parse_record(const nlohmann::json &j, bool require_spectra) {
  if (!j.is_object())
    throw DataError("record is not a JSON object");
  if (!j.contains("atoms") || !j["atoms"].is_array() || j["atoms"].empty())
    throw DataError("record has no atoms");
  std::vector<Element> elements;
  for (const auto &a : j["atoms"]) {
    if (!a.is_string())
      throw DataError("atom symbols must be strings");
    elements.push_back(element_from_symbol(a.get<std::string>()));
  }
  const int n = static_cast<int>(elements.size());
  std::vector<int> charges(n, 0);
  if (j.contains("charges")) {
    if (!j["charges"].is_array() || static_cast<int>(j["charges"].size()) != n)
      throw DataError("charges must have one entry per atom");
    for (int i = 0; i < n; ++i)
      charges[i] = j["charges"][i].get<int>();
  }
  std::vector<Bond> bonds;
  if (j.contains("bonds")) {
    for (const auto &b : j["bonds"]) {
      if (!b.is_array() || b.size() != 3)
        throw DataError("bond entries must be [i, j, order]");
      bonds.push_back({b[0].get<int>(), b[1].get<int>(), parse_order(b[2])});
    }
  }
  Coords coords = Coords::Zero(n, 3);
  if (j.contains("coords")) {
    const auto &c = j["coords"];
    if (!c.is_array() || static_cast<int>(c.size()) != n)
      throw DataError("coords must have one [x, y, z] per atom");
    for (int i = 0; i < n; ++i) {
      if (!c[i].is_array() || c[i].size() != 3)
        throw DataError("coords must have one [x, y, z] per atom");
      for (int d = 0; d < 3; ++d) {
        coords(i, d) = c[i][d].get<double>();
        if (!std::isfinite(coords(i, d)))
          throw DataError("non-finite coordinate");
      }
    }
  }
  MoleculeRecord r{MolecularGraph(std::move(elements), std::move(charges),
                                  bonds, std::move(coords)),
                   std::nullopt, nullptr};
  const bool has_any = j.contains("uv") || j.contains("ir") || j.contains("raman");
  if (require_spectra || has_any) {
    r.spectra = parse_spectra(j);
  }
  for (const auto &[key, value] : j.items())
    if (key != "atoms" && key != "charges" && key != "bonds" &&
        key != "coords" && key != "uv" && key != "ir" && key != "raman")
      r.extra[key] = value;
  return r;
}

nlohmann::json record_to_json(const MoleculeRecord &r, bool include_spectra) {
  const auto &m = r.graph;
  nlohmann::json j;
  auto atoms = nlohmann::json::array();
  for (auto e : m.elements())
    atoms.push_back(std::string(element_symbol(e)));
  j["atoms"] = atoms;
  j["charges"] = m.charges();
  auto bonds = nlohmann::json::array();
  for (const auto &b : m.bond_list())
    bonds.push_back({b.i, b.j, order_to_json(b.type)});
  j["bonds"] = bonds;
  auto coords = nlohmann::json::array();
  for (int i = 0; i < m.size(); ++i)
    coords.push_back(
        {m.coords()(i, 0), m.coords()(i, 1), m.coords()(i, 2)});
  j["coords"] = coords;
  if (include_spectra && r.spectra) {
    j["ir"] = r.spectra->ir;
    j["raman"] = r.spectra->raman;
    j["uv"] = r.spectra->uv;
  }
  if (r.extra.is_object())
    for (const auto &[key, value] : r.extra.items())
      j[key] = value;
  return j;
}

namespace {

std::vector<MoleculeRecord> read_lines(const std::string &path,
                                       bool require_spectra,
                                       std::vector<LineDiagnostic> &rejected) {
  std::ifstream in(path);
  if (!in)
    throw DataError("cannot open '" + path + "'");
  std::vector<MoleculeRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    try {
      out.push_back(parse_record(nlohmann::json::parse(line), require_spectra));
    } catch (const nlohmann::json::exception &e) {
      rejected.push_back({lineno, std::string("malformed JSON: ") + e.what()});
    } catch (const DataError &e) {
      rejected.push_back({lineno, e.what()});
    }
  }
  return out;
}

} // namespace

Corpus load_corpus(const std::string &path, uint64_t split_seed,
                   bool require_spectra) {
  Corpus c;
  c.records = read_lines(path, require_spectra, c.rejected);
  c.split = make_split(static_cast<int>(c.records.size()), split_seed);
  return c;
}

std::vector<MoleculeRecord> load_records(const std::string &path,
                                         std::vector<LineDiagnostic> *rejected) {
  std::vector<LineDiagnostic> local;
  auto out = read_lines(path, false, rejected ? *rejected : local);
  return out;
}

void write_records(const std::string &path,
                   const std::vector<MoleculeRecord> &records,
                   bool include_spectra) {
  std::ofstream out(path);
  if (!out)
    throw DataError("cannot write '" + path + "'");
  for (const auto &r : records)
    out << record_to_json(r, include_spectra).dump() << '\n';
}

} // namespace diffspectra
