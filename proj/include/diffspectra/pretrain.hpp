//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_PRETRAIN_HPP_
#define DIFFSPECTRA_PRETRAIN_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "diffspectra/specformer.hpp"
#include "diffspectra/spectra.hpp"

namespace diffspectra::specformer {

struct PretrainOptions {
  int stage = 2; // 1: denoising only; 2: joint objective
  double beta_denoise = 1.0;
  double beta_mpr = 1.0;
  double beta_contrast = 0.1;
  int64_t steps = 1000;
  int batch_size = 32;
  double learning_rate = 3e-4;
  double grad_clip = 1.0;
  int64_t eval_every = 100;
  uint64_t seed = 0;
  std::string out_dir;   // checkpoints and CSV log; empty: keep in memory
  bool resume = false;   // continue from out_dir/last.pt if present
};

void to_json(nlohmann::json &j, const PretrainOptions &o);
void from_json(const nlohmann::json &j, PretrainOptions &o);

struct LossParts {
  torch::Tensor total;
  torch::Tensor denoise;
  torch::Tensor mpr;      // undefined in stage 1
  torch::Tensor contrast; // undefined in stage 1 or for a batch of one
};

// Objective on one batch of records. Randomness (coordinate noise first,
// then patch masks) is drawn from `gen` in that order.
LossParts pretrain_loss(SpecFormer &spec, StructureEncoder &structure,
                        const std::vector<const MoleculeRecord *> &batch,
                        const PretrainOptions &opts, torch::Generator &gen);

struct PretrainResult {
  std::vector<double> train_loss; // per step, this run only
  std::vector<double> val_loss;   // per evaluation
  double best_val = 0;
  int64_t first_step = 0; // > 0 after resume
  int64_t last_step = 0;
  std::string best_checkpoint;
};

// Trains on `train` only; `val` drives best-checkpoint selection. The
// checkpoint holds modules "specformer" and "structure".
PretrainResult pretrain(SpecFormer &spec, StructureEncoder &structure,
                        const std::vector<MoleculeRecord> &train,
                        const std::vector<MoleculeRecord> &val,
                        const PretrainOptions &opts,
                        const nlohmann::json &metadata = nlohmann::json::object());

double validation_loss(SpecFormer &spec, StructureEncoder &structure,
                       const std::vector<MoleculeRecord> &val,
                       const PretrainOptions &opts);

// Frozen spectral embeddings (eval mode, no masking), one row per record.
torch::Tensor embed_spectra(SpecFormer &spec, const std::vector<const SpectraSet *> &s,
                            int batch_size = 64);

} // namespace diffspectra::specformer

#endif // DIFFSPECTRA_PRETRAIN_HPP_
