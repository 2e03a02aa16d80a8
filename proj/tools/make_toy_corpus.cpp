//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

// Writes a JSONL corpus of small saturated molecules with surrogate spectra.

#include <iostream>

#include <CLI11.hpp>

#include "diffspectra/error.hpp"
#include "diffspectra/spectra.hpp"
#include "diffspectra/toy_corpus.hpp"

int main(int argc, char **argv) {
  CLI::App app{"toy corpus writer"};
  std::string out;
  int count = 32, max_heavy = 3;
  uint64_t seed = 0;
  app.add_option("output", out, "output JSONL path")->required();
  app.add_option("--count", count, "number of molecules");
  app.add_option("--max-heavy", max_heavy, "heavy atoms per molecule, at most");
  app.add_option("--seed", seed, "selection and embedding seed");
  CLI11_PARSE(app, argc, argv);
  try {
    diffspectra::write_records(out, diffspectra::make_toy_corpus(count, max_heavy, seed),
                               true);
  } catch (const diffspectra::ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const diffspectra::DataError &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
