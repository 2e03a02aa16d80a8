//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "diffspectra/checkpoint.hpp"
#include "diffspectra/diffusion.hpp"
#include "diffspectra/error.hpp"
#include "diffspectra/graph_tensor.hpp"

namespace diffspectra::specformer {

void to_json(nlohmann::json &j, const PretrainOptions &o) {
  j = nlohmann::json{{"stage", o.stage},
                     {"betas", {o.beta_denoise, o.beta_mpr, o.beta_contrast}},
                     {"steps", o.steps},
                     {"batch_size", o.batch_size},
                     {"learning_rate", o.learning_rate},
                     {"grad_clip", o.grad_clip},
                     {"eval_every", o.eval_every},
                     {"seed", o.seed}};
}

void from_json(const nlohmann::json &j, PretrainOptions &o) {
  PretrainOptions d;
  o.stage = j.value("stage", d.stage);
  if (j.contains("betas")) {
    const auto &b = j["betas"];
    if (!b.is_array() || b.size() != 3)
      throw ConfigError("pretrain betas must be a list of three numbers");
    o.beta_denoise = b[0];
    o.beta_mpr = b[1];
    o.beta_contrast = b[2];
  }
  o.steps = j.value("steps", d.steps);
  o.batch_size = j.value("batch_size", d.batch_size);
  o.learning_rate = j.value("learning_rate", d.learning_rate);
  o.grad_clip = j.value("grad_clip", d.grad_clip);
  o.eval_every = j.value("eval_every", d.eval_every);
  o.seed = j.value("seed", d.seed);
}

namespace {

void check_options(const PretrainOptions &o) {
  if (o.stage != 1 && o.stage != 2)
    throw ConfigError("pretrain stage must be 1 or 2");
  if (o.batch_size < 1 || o.steps < 0 || o.eval_every < 1)
    throw ConfigError("pretrain: batch_size and eval_every must be positive");
  if (!(o.learning_rate > 0) || !(o.grad_clip > 0))
    throw ConfigError("pretrain: learning rate and grad clip must be positive");
}

// Structure pass bucketed by atom count; returns (size-weighted mean
// denoising loss, z_x in batch order).
std::pair<torch::Tensor, torch::Tensor>
structure_pass(StructureEncoder &structure,
               const std::vector<const MoleculeRecord *> &batch, double sigma,
               torch::Generator &gen) {
  std::map<int, std::vector<int>> buckets;
  for (int k = 0; k < static_cast<int>(batch.size()); ++k)
    buckets[batch[k]->graph.size()].push_back(k);
  torch::Tensor loss = torch::zeros({});
  std::vector<torch::Tensor> parts;
  std::vector<int64_t> order;
  for (const auto &[n, idx] : buckets) {
    std::vector<MolecularGraph> mols;
    for (int k : idx)
      mols.push_back(batch[k]->graph);
    const auto out = denoising_loss(structure, to_continuous(mols), sigma, gen);
    loss = loss + out.loss * static_cast<double>(idx.size());
    parts.push_back(out.z_x);
    order.insert(order.end(), idx.begin(), idx.end());
  }
  loss = loss / static_cast<double>(batch.size());
  // Undo the bucketing: row r of the stacked tensor belongs to batch[order[r]].
  std::vector<int64_t> inverse(order.size());
  for (std::size_t r = 0; r < order.size(); ++r)
    inverse[order[r]] = static_cast<int64_t>(r);
  const auto z_x = torch::cat(parts, 0).index_select(0, torch::tensor(inverse));
  return {loss, z_x};
}

std::vector<const SpectraSet *>
spectra_of(const std::vector<const MoleculeRecord *> &batch) {
  std::vector<const SpectraSet *> out;
  for (const auto *r : batch) {
    if (!r->spectra)
      throw DataError("joint pretraining needs spectra for every record");
    out.push_back(&*r->spectra);
  }
  return out;
}

} // namespace

LossParts pretrain_loss(SpecFormer &spec, StructureEncoder &structure,
                        const std::vector<const MoleculeRecord *> &batch,
                        const PretrainOptions &opts, torch::Generator &gen) {
  if (batch.empty())
    throw NumericError("pretrain_loss: empty batch");
  const auto &cfg = spec->config();
  LossParts out;
  auto [denoise, z_x] = structure_pass(structure, batch, cfg.coord_noise, gen);
  out.denoise = denoise;
  out.total = opts.beta_denoise * denoise;
  if (opts.stage == 1)
    return out;

  const auto sb = spectra_batch(spectra_of(batch));
  const auto patches = spec->patchify_batch(sb);
  std::vector<torch::Tensor> masked, masks;
  for (const auto &p : patches) {
    auto m = mask_patches(p, cfg.mask_ratio, gen);
    masked.push_back(m.patches);
    masks.push_back(m.mask);
  }
  const auto enc = spec->encode_patches(masked);
  out.mpr = mpr_loss(spec->reconstruct(enc.tokens), patches, masks);
  out.total = out.total + opts.beta_mpr * out.mpr;
  if (batch.size() >= 2) {
    // Alignment uses the embedding of the unmasked spectra, the same input
    // the generator is conditioned on.
    const auto z_s = spec->encode_patches(patches).z_s;
    out.contrast = contrastive_loss(z_x, z_s);
    out.total = out.total + opts.beta_contrast * out.contrast;
  }
  return out;
}

double validation_loss(SpecFormer &spec, StructureEncoder &structure,
                       const std::vector<MoleculeRecord> &val,
                       const PretrainOptions &opts) {
  if (val.empty())
    return std::nan("");
  const bool spec_training = spec->is_training();
  const bool struct_training = structure->is_training();
  spec->eval();
  structure->eval();
  torch::NoGradGuard guard;
  auto gen = diffusion::make_generator(opts.seed + 0x5eed);
  double sum = 0;
  for (std::size_t start = 0; start < val.size(); start += opts.batch_size) {
    std::vector<const MoleculeRecord *> batch;
    for (std::size_t k = start; k < std::min(val.size(), start + opts.batch_size); ++k)
      batch.push_back(&val[k]);
    sum += pretrain_loss(spec, structure, batch, opts, gen).total.item<double>() *
           static_cast<double>(batch.size());
  }
  spec->train(spec_training);
  structure->train(struct_training);
  return sum / static_cast<double>(val.size());
}

torch::Tensor embed_spectra(SpecFormer &spec, const std::vector<const SpectraSet *> &s,
                            int batch_size) {
  const bool training = spec->is_training();
  spec->eval();
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> parts;
  for (std::size_t start = 0; start < s.size(); start += batch_size) {
    std::vector<const SpectraSet *> chunk(
        s.begin() + start, s.begin() + std::min(s.size(), start + batch_size));
    parts.push_back(spec->encode(spectra_batch(chunk)).z_s);
  }
  spec->train(training);
  if (parts.empty())
    return torch::zeros({0, spec->config().d_model});
  return torch::cat(parts, 0);
}

namespace {

// Epoch-wise reshuffled order, reproducible from (seed, epoch) alone so a
// resumed run draws the same batches as an uninterrupted one.
std::vector<const MoleculeRecord *>
batch_for_step(const std::vector<MoleculeRecord> &train, int64_t step,
               int batch_size, uint64_t seed) {
  const int64_t n = static_cast<int64_t>(train.size());
  const int64_t bs = std::min<int64_t>(batch_size, n);
  const int64_t per_epoch = std::max<int64_t>(1, n / bs);
  const int64_t epoch = step / per_epoch;
  const int64_t slot = step % per_epoch;
  std::vector<int64_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch));
  for (int64_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int64_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  std::vector<const MoleculeRecord *> out;
  for (int64_t k = 0; k < bs; ++k)
    out.push_back(&train[perm[slot * bs + k]]);
  return out;
}

// Empty CSV field for a loss term the stage does not compute.
std::string field(const torch::Tensor &t) {
  if (!t.defined())
    return "";
  std::ostringstream s;
  s << t.item<double>();
  return s.str();
}

std::string field(double v) {
  if (std::isnan(v))
    return "";
  std::ostringstream s;
  s << v;
  return s.str();
}

} // namespace

PretrainResult pretrain(SpecFormer &spec, StructureEncoder &structure,
                        const std::vector<MoleculeRecord> &train,
                        const std::vector<MoleculeRecord> &val,
                        const PretrainOptions &opts, const nlohmann::json &metadata) {
  check_options(opts);
  if (train.empty())
    throw DataError("pretrain: empty training split");
  std::vector<torch::Tensor> params = spec->parameters();
  for (const auto &p : structure->parameters())
    params.push_back(p);
  torch::optim::Adam optim(params, torch::optim::AdamOptions(opts.learning_rate));

  PretrainResult res;
  res.best_val = std::numeric_limits<double>::infinity();
  const bool persist = !opts.out_dir.empty();
  const std::string last_path = opts.out_dir + "/last.pt";
  const std::string best_path = opts.out_dir + "/best.pt";
  const std::string log_path = opts.out_dir + "/pretrain_log.csv";
  const NamedModules modules{{"specformer", spec.ptr().get()},
                             {"structure", structure.ptr().get()}};
  if (persist)
    std::filesystem::create_directories(opts.out_dir);
  if (persist && opts.resume && std::filesystem::exists(last_path)) {
    const auto meta = load_checkpoint(last_path, modules, &optim);
    res.first_step = meta.at("step").get<int64_t>();
    res.best_val = meta.value("best_val", res.best_val);
    if (std::filesystem::exists(best_path))
      res.best_checkpoint = best_path;
  }

  std::ofstream log;
  if (persist) {
    const bool fresh = !(opts.resume && std::filesystem::exists(log_path));
    log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
    if (fresh)
      log << "step,stage,loss,denoise,mpr,contrast,val_loss\n";
  }

  auto metadata_for = [&](int64_t step) {
    nlohmann::json m = metadata;
    m["kind"] = "specformer";
    m["specformer"] = spec->config();
    m["pretrain"] = opts;
    m["step"] = step;
    m["best_val"] = std::isfinite(res.best_val) ? nlohmann::json(res.best_val)
                                                 : nlohmann::json(nullptr);
    m["git_describe"] = build_version();
    return m;
  };

  spec->train();
  structure->train();
  int64_t step = res.first_step;
  for (; step < opts.steps; ++step) {
    auto gen = diffusion::make_generator(opts.seed * 1000003ULL + step);
    const auto batch = batch_for_step(train, step, opts.batch_size, opts.seed);
    optim.zero_grad();
    const auto parts = pretrain_loss(spec, structure, batch, opts, gen);
    const double loss = parts.total.item<double>();
    if (!std::isfinite(loss))
      throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
    parts.total.backward();
    torch::nn::utils::clip_grad_norm_(params, opts.grad_clip);
    optim.step();
    res.train_loss.push_back(loss);

    const bool eval_now = (step + 1) % opts.eval_every == 0 || step + 1 == opts.steps;
    double val_loss = std::nan("");
    if (eval_now && !val.empty()) {
      val_loss = validation_loss(spec, structure, val, opts);
      res.val_loss.push_back(val_loss);
      if (val_loss < res.best_val) {
        res.best_val = val_loss;
        if (persist) {
          save_checkpoint(best_path, modules, metadata_for(step + 1));
          res.best_checkpoint = best_path;
        }
      }
    }
    if (persist) {
      log << step << ',' << opts.stage << ',' << loss << ','
          << field(parts.denoise) << ',' << field(parts.mpr) << ','
          << field(parts.contrast) << ',' << field(val_loss) << '\n';
      if (eval_now) {
        log.flush();
        save_checkpoint(last_path, modules, metadata_for(step + 1), &optim);
      }
    }
  }
  res.last_step = step;
  if (persist && val.empty()) {
    save_checkpoint(best_path, modules, metadata_for(step));
    res.best_checkpoint = best_path;
  }
  return res;
}

} // namespace diffspectra::specformer
