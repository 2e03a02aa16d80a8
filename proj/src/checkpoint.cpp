//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/checkpoint.hpp"

#include <filesystem>

#include "diffspectra/error.hpp"

#ifndef DIFFSPECTRA_GIT_DESCRIBE
#define DIFFSPECTRA_GIT_DESCRIBE "unknown"
#endif

namespace diffspectra {

std::string build_version() { return DIFFSPECTRA_GIT_DESCRIBE; }

void save_checkpoint(const std::string &path, const NamedModules &modules,
                     const nlohmann::json &metadata,
                     torch::optim::Optimizer *optimizer) {
  torch::serialize::OutputArchive root;
  for (const auto &[name, module] : modules) {
    torch::serialize::OutputArchive sub;
    for (const auto &p : module->named_parameters(true))
      sub.write(p.key(), p.value().detach());
    for (const auto &b : module->named_buffers(true))
      sub.write(b.key(), b.value(), /*is_buffer=*/true);
    root.write(name, sub);
  }
  if (optimizer) {
    torch::serialize::OutputArchive sub;
    optimizer->save(sub);
    root.write("optimizer", sub);
  }
  root.write("metadata", c10::IValue(metadata.dump()));
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty())
    std::filesystem::create_directories(parent);
  // Write then rename so an interrupted save never clobbers the old file.
  const std::string tmp = path + ".tmp";
  root.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

namespace {

torch::serialize::InputArchive open_archive(const std::string &path) {
  if (!std::filesystem::exists(path))
    throw DataError("checkpoint not found: " + path);
  torch::serialize::InputArchive root;
  try {
    root.load_from(path);
  } catch (const c10::Error &e) {
    throw DataError("cannot read checkpoint " + path + ": " + e.what_without_backtrace());
  }
  return root;
}

nlohmann::json metadata_of(torch::serialize::InputArchive &root,
                           const std::string &path) {
  c10::IValue meta;
  if (!root.try_read("metadata", meta) || !meta.isString())
    throw DataError("checkpoint " + path + " has no metadata");
  return nlohmann::json::parse(meta.toStringRef());
}

} // namespace

nlohmann::json read_checkpoint_metadata(const std::string &path) {
  auto root = open_archive(path);
  return metadata_of(root, path);
}

nlohmann::json load_checkpoint(const std::string &path, const NamedModules &modules,
                               torch::optim::Optimizer *optimizer) {
  auto root = open_archive(path);
  const auto meta = metadata_of(root, path);
  torch::NoGradGuard guard;
  for (const auto &[name, module] : modules) {
    torch::serialize::InputArchive sub;
    if (!root.try_read(name, sub))
      throw DataError("checkpoint " + path + " lacks module '" + name + "'");
    auto copy = [&](const std::string &key, torch::Tensor &dst, bool buffer) {
      torch::Tensor src;
      if (!sub.try_read(key, src, buffer))
        throw DataError("checkpoint " + path + ": '" + name + "' lacks " + key);
      if (src.sizes() != dst.sizes())
        throw DataError("checkpoint " + path + ": shape mismatch for " + name +
                        "." + key);
      dst.copy_(src);
    };
    for (auto &p : module->named_parameters(true))
      copy(p.key(), p.value(), false);
    for (auto &b : module->named_buffers(true))
      copy(b.key(), b.value(), true);
  }
  if (optimizer) {
    torch::serialize::InputArchive sub;
    if (!root.try_read("optimizer", sub))
      throw DataError("checkpoint " + path + " has no optimizer state");
    optimizer->load(sub);
  }
  return meta;
}

} // namespace diffspectra
