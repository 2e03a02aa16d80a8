//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_HARNESS_HPP_
#define DIFFSPECTRA_HARNESS_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffspectra/diffusion.hpp"
#include "diffspectra/dmt.hpp"
#include "diffspectra/metrics.hpp"
#include "diffspectra/pretrain.hpp"
#include "diffspectra/specformer.hpp"
#include "diffspectra/spectra.hpp"

namespace diffspectra::harness {

struct TrainSettings {
  double learning_rate = 3e-4;
  int batch_size = 32;
  int64_t steps = 1000;
  double grad_clip = 1.0;
  double self_cond_prob = 0.5;
  bool finetune_specformer = false; // SpecFormer frozen unless set
  bool use_pretrained = true;       // false: randomly initialised SpecFormer
  int64_t checkpoint_every = 500;
};

struct PretrainSettings {
  int64_t stage1_steps = 500;
  int64_t stage2_steps = 1000;
  int stages = 0; // 0: both; 1 or 2: that stage only
  bool resume = false;
  // Betas, batch size, learning rate and the like. `stage`, `steps`,
  // `seed` and `out_dir` are filled in per stage.
  specformer::PretrainOptions options;
};

// Number of atoms of each sampled molecule:
//   "fixed:K"   every sample has K atoms
//   "empirical" drawn from the training-set atom-count histogram
//   "reference" the atom count of the input record (inputs need atoms)
struct NAtomsPolicy {
  enum class Kind { kFixed, kEmpirical, kReference } kind = Kind::kEmpirical;
  int fixed = 0;
};
NAtomsPolicy parse_n_atoms_policy(const std::string &s);
std::string to_string(const NAtomsPolicy &p);

struct SamplingSettings {
  int steps = 1000;
  double tau = 1.0;
  int k = 1;
  std::string n_atoms_policy = "empirical";
  int batch_size = 64;
  std::string input;           // spectra JSONL; empty: dataset subset below
  std::string subset = "test"; // train | val | test | all
  std::string output;          // empty: <output_dir>/samples.jsonl
};

struct EvaluationSettings {
  std::string samples;    // empty: <output_dir>/samples.jsonl
  std::string references; // empty: <output_dir>/sample_references.jsonl
  std::vector<int> ks{1, 5, 10};
  bool plots = false; // histogram and ACC@K curve tables under plots/
};

struct ExperimentConfig {
  std::string dataset;
  uint64_t split_seed = 0;
  std::string split_mode = "standard"; // standard | all_train
  dmt::DMTConfig dmt;
  specformer::SpecFormerConfig specformer;
  double schedule_offset = 0.008;
  double schedule_clip = 1e-4;
  diffusion::LossWeights loss;
  diffusion::LossWeighting weighting = diffusion::LossWeighting::kSqrtAlphaOverSigma;
  TrainSettings train;
  PretrainSettings pretrain;
  SamplingSettings sampling;
  EvaluationSettings evaluation;
  std::string metrics = "all";
  int64_t mces_timeout_ms = 2000;
  int workers = 1;
  std::string output_dir = "run";
  std::string specformer_checkpoint; // empty: pretraining output
  std::string dmt_checkpoint;        // empty: <output_dir>/dmt/last.pt
  uint64_t seed = 0;

  diffusion::NoiseSchedule schedule() const {
    return diffusion::NoiseSchedule(schedule_offset, schedule_clip);
  }
  std::string specformer_checkpoint_path() const;
  std::string dmt_checkpoint_path() const;
  void validate() const;
};

void to_json(nlohmann::json &j, const ExperimentConfig &c);
// Unknown top-level keys are rejected (ConfigError).
void from_json(const nlohmann::json &j, ExperimentConfig &c);

ExperimentConfig load_config(const std::string &path);
// Writes <output_dir>/config.<command>.json.
void write_resolved_config(const ExperimentConfig &c, const std::string &command);

// Independent seed for (base, a, b) triples.
uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b);

// Records used for training: the train split, or everything in
// "all_train" mode.
std::vector<MoleculeRecord> training_records(const ExperimentConfig &c,
                                             const Corpus &corpus);

struct TrainResult {
  std::vector<double> loss; // per step
  std::string checkpoint;
};

// Two-stage SpecFormer pretraining. Returns the path of the checkpoint
// that training should start from.
std::string cmd_pretrain_spec(const ExperimentConfig &c);

// Conditional DMT training on frozen (or fine-tuned) SpecFormer
// embeddings. The checkpoint stores modules "dmt" and "specformer" plus the
// atom-count histogram, so sampling needs nothing else.
TrainResult cmd_train(const ExperimentConfig &c);

// K candidates per input; returns the samples path.
std::string cmd_sample(const ExperimentConfig &c);

// Metric report over a samples file; returns the report path.
std::string cmd_evaluate(const ExperimentConfig &c);

// Markdown table of <output_dir>/report.json; returns the text.
std::string cmd_report(const ExperimentConfig &c);

} // namespace diffspectra::harness

#endif // DIFFSPECTRA_HARNESS_HPP_
