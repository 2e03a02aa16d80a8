//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_CHECKPOINT_HPP_
#define DIFFSPECTRA_CHECKPOINT_HPP_

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace diffspectra {

// Archive layout: one sub-archive per named module holding its parameters
// and buffers by qualified name, an optional "optimizer" sub-archive, and a
// "metadata" JSON string (config, schedule, seed, git-describe, ...).
using NamedModules = std::vector<std::pair<std::string, torch::nn::Module *>>;

void save_checkpoint(const std::string &path, const NamedModules &modules,
                     const nlohmann::json &metadata,
                     torch::optim::Optimizer *optimizer = nullptr);

// Restores every listed module (all must be present) and, when given, the
// optimizer state. Returns the metadata. Throws DataError on a missing or
// mismatched archive.
nlohmann::json load_checkpoint(const std::string &path, const NamedModules &modules,
                               torch::optim::Optimizer *optimizer = nullptr);

nlohmann::json read_checkpoint_metadata(const std::string &path);

// `git describe` of the source tree at configure time ("unknown" outside git).
std::string build_version();

} // namespace diffspectra

#endif // DIFFSPECTRA_CHECKPOINT_HPP_
