//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "diffspectra/error.hpp"
#include "diffspectra/harness.hpp"

using namespace diffspectra;

namespace {

std::vector<double> parse_betas(const std::string &s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size())
        throw std::invalid_argument(item);
    } catch (const std::exception &) {
      throw ConfigError("--betas expects three comma-separated numbers");
    }
  }
  if (out.size() != 3)
    throw ConfigError("--betas expects three comma-separated numbers");
  return out;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"diffspectra: spectra-conditioned molecular structure generation"};
  std::string command;
  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<double> tau;
  std::optional<int> k;
  std::optional<std::string> modalities, metrics_list, betas, output, input, samples,
      references, checkpoint, policy;
  std::optional<int64_t> mces_timeout;
  std::optional<int> workers, stage;
  std::optional<double> mask_ratio;
  bool no_pretrain = false, resume = false, plots = false;

  app.add_option("command", command, "pretrain-spec | train | sample | evaluate | report")
      ->required()
      ->check(CLI::IsMember({"pretrain-spec", "train", "sample", "evaluate", "report"}));
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  app.add_option("--seed", seed, "global seed");
  app.add_option("--tau", tau, "sampling temperature");
  app.add_option("--k", k, "candidates per input");
  app.add_option("--modalities", modalities, "comma-separated subset of uv,ir,raman");
  app.add_flag("--no-pretrain", no_pretrain, "train with an untrained SpecFormer");
  app.add_option("--metrics", metrics_list, "metric groups or names, comma-separated");
  app.add_option("--mces-timeout-ms", mces_timeout, "per-pair MCES time limit");
  app.add_option("--workers", workers, "evaluation worker threads");
  app.add_option("--stage", stage, "pretraining stage to run (1 or 2; default both)");
  app.add_option("--mask-ratio", mask_ratio, "SpecFormer patch mask ratio");
  app.add_option("--betas", betas, "pretraining loss weights: denoise,mpr,contrast");
  app.add_flag("--resume", resume, "resume pretraining from the last checkpoint");
  app.add_option("--output", output, "output directory");
  app.add_option("--input", input, "spectra file to sample from");
  app.add_option("--samples", samples, "samples file to evaluate");
  app.add_option("--references", references, "reference molecules for evaluate");
  app.add_option("--checkpoint", checkpoint, "DMT checkpoint for sample");
  app.add_option("--n-atoms", policy, "fixed:K | empirical | reference");
  app.add_flag("--plots", plots, "write histogram and ACC@K tables");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto c = harness::load_config(config_path);
    if (seed)
      c.seed = *seed;
    if (tau)
      c.sampling.tau = *tau;
    if (k)
      c.sampling.k = *k;
    if (modalities)
      c.specformer.modalities = specformer::parse_modalities(*modalities);
    if (no_pretrain)
      c.train.use_pretrained = false;
    if (metrics_list)
      c.metrics = *metrics_list;
    if (mces_timeout)
      c.mces_timeout_ms = *mces_timeout;
    if (workers)
      c.workers = *workers;
    if (stage) {
      if (*stage != 1 && *stage != 2)
        throw ConfigError("--stage must be 1 or 2");
      c.pretrain.stages = *stage;
    }
    if (mask_ratio)
      c.specformer.mask_ratio = *mask_ratio;
    if (betas) {
      const auto b = parse_betas(*betas);
      c.pretrain.options.beta_denoise = b[0];
      c.pretrain.options.beta_mpr = b[1];
      c.pretrain.options.beta_contrast = b[2];
    }
    if (resume)
      c.pretrain.resume = true;
    if (output)
      c.output_dir = *output;
    if (input)
      c.sampling.input = *input;
    if (samples)
      c.evaluation.samples = *samples;
    if (references)
      c.evaluation.references = *references;
    if (checkpoint)
      c.dmt_checkpoint = *checkpoint;
    if (policy)
      c.sampling.n_atoms_policy = *policy;
    if (plots)
      c.evaluation.plots = true;

    if (command == "pretrain-spec") {
      std::cout << harness::cmd_pretrain_spec(c) << '\n';
    } else if (command == "train") {
      const auto r = harness::cmd_train(c);
      if (!r.loss.empty())
        std::cout << "final loss " << r.loss.back() << '\n';
      std::cout << r.checkpoint << '\n';
    } else if (command == "sample") {
      std::cout << harness::cmd_sample(c) << '\n';
    } else if (command == "evaluate") {
      std::cout << harness::cmd_evaluate(c) << '\n';
    } else {
      std::cout << harness::cmd_report(c);
    }
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const DataError &e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
