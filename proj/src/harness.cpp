//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "diffspectra/checkpoint.hpp"
#include "diffspectra/error.hpp"
#include "diffspectra/graph_tensor.hpp"

namespace fs = std::filesystem;

namespace diffspectra::harness {

NAtomsPolicy parse_n_atoms_policy(const std::string &s) {
  NAtomsPolicy p;
  if (s == "empirical") {
    p.kind = NAtomsPolicy::Kind::kEmpirical;
  } else if (s == "reference") {
    p.kind = NAtomsPolicy::Kind::kReference;
  } else if (s.rfind("fixed:", 0) == 0) {
    p.kind = NAtomsPolicy::Kind::kFixed;
    try {
      std::size_t used = 0;
      p.fixed = std::stoi(s.substr(6), &used);
      if (used != s.size() - 6)
        throw std::invalid_argument(s);
    } catch (const std::exception &) {
      throw ConfigError("bad n_atoms_policy '" + s + "'");
    }
    if (p.fixed < 1)
      throw ConfigError("n_atoms_policy fixed:K needs K >= 1");
  } else {
    throw ConfigError("n_atoms_policy must be fixed:K, empirical or reference, got '" +
                      s + "'");
  }
  return p;
}

std::string to_string(const NAtomsPolicy &p) {
  switch (p.kind) {
  case NAtomsPolicy::Kind::kFixed:
    return "fixed:" + std::to_string(p.fixed);
  case NAtomsPolicy::Kind::kEmpirical:
    return "empirical";
  case NAtomsPolicy::Kind::kReference:
    return "reference";
  }
  return "empirical";
}

std::string ExperimentConfig::specformer_checkpoint_path() const {
  if (!specformer_checkpoint.empty())
    return specformer_checkpoint;
  const std::string stage2 = output_dir + "/specformer/stage2/best.pt";
  if (fs::exists(stage2))
    return stage2;
  return output_dir + "/specformer/stage1/best.pt";
}

std::string ExperimentConfig::dmt_checkpoint_path() const {
  return dmt_checkpoint.empty() ? output_dir + "/dmt/last.pt" : dmt_checkpoint;
}

void ExperimentConfig::validate() const {
  dmt.validate();
  specformer.validate();
  if (split_mode != "standard" && split_mode != "all_train")
    throw ConfigError("split_mode must be 'standard' or 'all_train'");
  if (!(schedule_offset > 0) || !(schedule_clip > 0) || schedule_clip >= 0.5)
    throw ConfigError("schedule offset and clip must be positive (clip < 0.5)");
  if (!(train.learning_rate > 0) || train.batch_size < 1 || train.steps < 0 ||
      !(train.grad_clip > 0) || train.checkpoint_every < 1)
    throw ConfigError("train: learning_rate, batch_size, grad_clip and "
                      "checkpoint_every must be positive, steps >= 0");
  if (train.self_cond_prob < 0 || train.self_cond_prob > 1)
    throw ConfigError("train.self_cond_prob must lie in [0, 1]");
  if (pretrain.stages < 0 || pretrain.stages > 2)
    throw ConfigError("pretrain.stages must be 0, 1 or 2");
  if (pretrain.stage1_steps < 0 || pretrain.stage2_steps < 0)
    throw ConfigError("pretrain step counts must be >= 0");
  if (sampling.steps < 1 || sampling.k < 1 || sampling.batch_size < 1)
    throw ConfigError("sampling: steps, k and batch_size must be positive");
  if (!(sampling.tau >= 0) || !std::isfinite(sampling.tau))
    throw ConfigError("sampling.tau must be finite and >= 0");
  parse_n_atoms_policy(sampling.n_atoms_policy);
  static const std::set<std::string> subsets{"train", "val", "test", "all"};
  if (!subsets.count(sampling.subset))
    throw ConfigError("sampling.subset must be train, val, test or all");
  for (int k : evaluation.ks)
    if (k < 1)
      throw ConfigError("evaluation.ks entries must be positive");
  metrics::parse_metric_selection(metrics);
  if (workers < 1)
    throw ConfigError("workers must be >= 1");
  if (output_dir.empty())
    throw ConfigError("output_dir must not be empty");
}

void to_json(nlohmann::json &j, const ExperimentConfig &c) {
  nlohmann::json spec = c.specformer;
  nlohmann::json pre = c.pretrain.options;
  pre.erase("stage");
  pre.erase("steps");
  pre.erase("seed");
  pre["stage1_steps"] = c.pretrain.stage1_steps;
  pre["stage2_steps"] = c.pretrain.stage2_steps;
  pre["stages"] = c.pretrain.stages;
  pre["resume"] = c.pretrain.resume;
  j = nlohmann::json{
      {"dataset", c.dataset},
      {"split_seed", c.split_seed},
      {"split_mode", c.split_mode},
      {"dmt", c.dmt},
      {"specformer", spec},
      {"schedule", {{"offset", c.schedule_offset}, {"clip", c.schedule_clip}}},
      {"loss",
       {{"lambda_a", c.loss.lambda_a},
        {"lambda_x", c.loss.lambda_x},
        {"lambda_h", c.loss.lambda_h},
        {"weighting", diffusion::to_string(c.weighting)}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"batch_size", c.train.batch_size},
        {"steps", c.train.steps},
        {"grad_clip", c.train.grad_clip},
        {"self_cond_prob", c.train.self_cond_prob},
        {"finetune_specformer", c.train.finetune_specformer},
        {"use_pretrained", c.train.use_pretrained},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"pretrain", pre},
      {"sampling",
       {{"steps", c.sampling.steps},
        {"tau", c.sampling.tau},
        {"k", c.sampling.k},
        {"n_atoms_policy", c.sampling.n_atoms_policy},
        {"batch_size", c.sampling.batch_size},
        {"input", c.sampling.input},
        {"subset", c.sampling.subset},
        {"output", c.sampling.output}}},
      {"evaluation",
       {{"samples", c.evaluation.samples},
        {"references", c.evaluation.references},
        {"ks", c.evaluation.ks},
        {"plots", c.evaluation.plots}}},
      {"metrics", c.metrics},
      {"mces_timeout_ms", c.mces_timeout_ms},
      {"workers", c.workers},
      {"output_dir", c.output_dir},
      {"specformer_checkpoint", c.specformer_checkpoint},
      {"dmt_checkpoint", c.dmt_checkpoint},
      {"seed", c.seed}};
}

namespace {

template <class T>
void read(const nlohmann::json &j, const char *key, T &out) {
  if (j.contains(key))
    out = j.at(key).get<T>();
}

void check_keys(const nlohmann::json &j, const std::set<std::string> &known,
                const std::string &where) {
  if (!j.is_object())
    throw ConfigError(where + " must be a JSON object");
  for (const auto &[key, value] : j.items())
    if (!known.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
}

} // namespace

void from_json(const nlohmann::json &j, ExperimentConfig &c) {
  check_keys(j,
             {"dataset", "split_seed", "split_mode", "dmt", "specformer", "schedule",
              "loss", "train", "pretrain", "sampling", "evaluation", "metrics",
              "mces_timeout_ms", "workers", "output_dir", "specformer_checkpoint",
              "dmt_checkpoint", "seed"},
             "config");
  try {
    c = ExperimentConfig{};
    read(j, "dataset", c.dataset);
    read(j, "split_seed", c.split_seed);
    read(j, "split_mode", c.split_mode);
    if (j.contains("dmt"))
      c.dmt = j["dmt"].get<dmt::DMTConfig>();
    if (j.contains("specformer"))
      c.specformer = j["specformer"].get<specformer::SpecFormerConfig>();
    if (j.contains("schedule")) {
      const auto &s = j["schedule"];
      check_keys(s, {"offset", "clip"}, "schedule");
      read(s, "offset", c.schedule_offset);
      read(s, "clip", c.schedule_clip);
    }
    if (j.contains("loss")) {
      const auto &l = j["loss"];
      check_keys(l, {"lambda_a", "lambda_x", "lambda_h", "weighting"}, "loss");
      read(l, "lambda_a", c.loss.lambda_a);
      read(l, "lambda_x", c.loss.lambda_x);
      read(l, "lambda_h", c.loss.lambda_h);
      if (l.contains("weighting"))
        c.weighting = diffusion::parse_loss_weighting(l["weighting"].get<std::string>());
    }
    if (j.contains("train")) {
      const auto &t = j["train"];
      check_keys(t,
                 {"learning_rate", "batch_size", "steps", "grad_clip", "self_cond_prob",
                  "finetune_specformer", "use_pretrained", "checkpoint_every"},
                 "train");
      read(t, "learning_rate", c.train.learning_rate);
      read(t, "batch_size", c.train.batch_size);
      read(t, "steps", c.train.steps);
      read(t, "grad_clip", c.train.grad_clip);
      read(t, "self_cond_prob", c.train.self_cond_prob);
      read(t, "finetune_specformer", c.train.finetune_specformer);
      read(t, "use_pretrained", c.train.use_pretrained);
      read(t, "checkpoint_every", c.train.checkpoint_every);
    }
    if (j.contains("pretrain")) {
      auto p = j["pretrain"];
      check_keys(p,
                 {"stage1_steps", "stage2_steps", "stages", "resume", "betas",
                  "batch_size", "learning_rate", "grad_clip", "eval_every"},
                 "pretrain");
      read(p, "stage1_steps", c.pretrain.stage1_steps);
      read(p, "stage2_steps", c.pretrain.stage2_steps);
      read(p, "stages", c.pretrain.stages);
      read(p, "resume", c.pretrain.resume);
      for (const char *k : {"stage1_steps", "stage2_steps", "stages", "resume"})
        p.erase(k);
      c.pretrain.options = p.get<specformer::PretrainOptions>();
    }
    if (j.contains("sampling")) {
      const auto &s = j["sampling"];
      check_keys(s,
                 {"steps", "tau", "k", "n_atoms_policy", "batch_size", "input",
                  "subset", "output"},
                 "sampling");
      read(s, "steps", c.sampling.steps);
      read(s, "tau", c.sampling.tau);
      read(s, "k", c.sampling.k);
      read(s, "n_atoms_policy", c.sampling.n_atoms_policy);
      read(s, "batch_size", c.sampling.batch_size);
      read(s, "input", c.sampling.input);
      read(s, "subset", c.sampling.subset);
      read(s, "output", c.sampling.output);
    }
    if (j.contains("evaluation")) {
      const auto &e = j["evaluation"];
      check_keys(e, {"samples", "references", "ks", "plots"}, "evaluation");
      read(e, "samples", c.evaluation.samples);
      read(e, "references", c.evaluation.references);
      read(e, "ks", c.evaluation.ks);
      read(e, "plots", c.evaluation.plots);
    }
    read(j, "metrics", c.metrics);
    read(j, "mces_timeout_ms", c.mces_timeout_ms);
    read(j, "workers", c.workers);
    read(j, "output_dir", c.output_dir);
    read(j, "specformer_checkpoint", c.specformer_checkpoint);
    read(j, "dmt_checkpoint", c.dmt_checkpoint);
    read(j, "seed", c.seed);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return j.get<ExperimentConfig>();
}

void write_resolved_config(const ExperimentConfig &c, const std::string &command) {
  fs::create_directories(c.output_dir);
  std::ofstream out(c.output_dir + "/config." + command + ".json");
  out << nlohmann::json(c).dump(2) << '\n';
}

uint64_t derive_seed(uint64_t base, uint64_t a, uint64_t b) {
  return metrics::hash_sequence({base, a, b});
}

std::vector<MoleculeRecord> training_records(const ExperimentConfig &c,
                                             const Corpus &corpus) {
  if (c.split_mode == "all_train")
    return corpus.records;
  std::vector<MoleculeRecord> out;
  for (int i : corpus.split.train)
    out.push_back(corpus.records[i]);
  return out;
}

namespace {

Corpus load_dataset(const ExperimentConfig &c, bool require_spectra) {
  if (c.dataset.empty())
    throw ConfigError("config has no dataset");
  Corpus corpus = load_corpus(c.dataset, c.split_seed, require_spectra);
  if (corpus.records.empty())
    throw DataError("dataset '" + c.dataset + "' has no usable records");
  return corpus;
}

std::vector<MoleculeRecord> subset(const Corpus &corpus, const std::vector<int> &idx) {
  std::vector<MoleculeRecord> out;
  for (int i : idx)
    out.push_back(corpus.records[i]);
  return out;
}

std::string modality_list(const std::vector<specformer::Modality> &m) {
  std::string out;
  for (auto x : m)
    out += (out.empty() ? "" : ",") + specformer::to_string(x);
  return out;
}

} // namespace

std::string cmd_pretrain_spec(const ExperimentConfig &c) {
  c.validate();
  write_resolved_config(c, "pretrain-spec");
  const Corpus corpus = load_dataset(c, true);
  const auto train = training_records(c, corpus);
  const auto val = subset(corpus, corpus.split.val);

  torch::manual_seed(c.seed);
  specformer::SpecFormer spec(c.specformer);
  specformer::StructureEncoder structure(c.specformer);
  const nlohmann::json meta{{"config", c}};

  const std::string stage1_dir = c.output_dir + "/specformer/stage1";
  const std::string stage2_dir = c.output_dir + "/specformer/stage2";
  std::string result;
  if (c.pretrain.stages != 2) {
    auto opts = c.pretrain.options;
    opts.stage = 1;
    opts.steps = c.pretrain.stage1_steps;
    opts.seed = c.seed;
    opts.out_dir = stage1_dir;
    opts.resume = c.pretrain.resume;
    result = specformer::pretrain(spec, structure, train, val, opts, meta)
                 .best_checkpoint;
  }
  if (c.pretrain.stages != 1) {
    // Stage 2 starts from the final stage-1 weights when they exist.
    const std::string init = stage1_dir + "/last.pt";
    if (fs::exists(init))
      load_checkpoint(init, {{"specformer", spec.ptr().get()},
                             {"structure", structure.ptr().get()}});
    auto opts = c.pretrain.options;
    opts.stage = 2;
    opts.steps = c.pretrain.stage2_steps;
    opts.seed = c.seed + 1;
    opts.out_dir = stage2_dir;
    opts.resume = c.pretrain.resume;
    result = specformer::pretrain(spec, structure, train, val, opts, meta)
                 .best_checkpoint;
  }
  return result;
}

namespace {

// Same-size buckets, each reshuffled per epoch and cut into batches; the
// batch order is shuffled too. Reproducible from (seed, epoch).
class BucketSampler {
public:
  BucketSampler(const std::vector<MoleculeRecord> &records, int batch_size,
                uint64_t seed)
      : batch_size_(batch_size), seed_(seed) {
    for (int i = 0; i < static_cast<int>(records.size()); ++i)
      buckets_[records[i].graph.size()].push_back(i);
    per_epoch_ = 0;
    for (const auto &[n, idx] : buckets_)
      per_epoch_ += (static_cast<int64_t>(idx.size()) + batch_size - 1) / batch_size;
  }

  std::vector<int> batch(int64_t step) {
    const int64_t epoch = step / per_epoch_;
    if (epoch != cached_epoch_) {
      build(epoch);
      cached_epoch_ = epoch;
    }
    return batches_[step % per_epoch_];
  }

private:
  void build(int64_t epoch) {
    std::mt19937_64 rng(derive_seed(seed_, 0xba7c4, static_cast<uint64_t>(epoch)));
    auto shuffle = [&](auto &v) {
      for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
        std::uniform_int_distribution<int64_t> pick(0, i);
        std::swap(v[i], v[pick(rng)]);
      }
    };
    batches_.clear();
    for (auto [n, idx] : buckets_) {
      shuffle(idx);
      for (std::size_t s = 0; s < idx.size(); s += batch_size_)
        batches_.emplace_back(idx.begin() + s,
                              idx.begin() + std::min(idx.size(), s + batch_size_));
    }
    shuffle(batches_);
  }

  std::size_t batch_size_;
  uint64_t seed_;
  std::map<int, std::vector<int>> buckets_;
  int64_t per_epoch_ = 1;
  int64_t cached_epoch_ = -1;
  std::vector<std::vector<int>> batches_;
};

// Per-dimension affine map applied to z_s before it reaches the DMT. Fit
// on the training embeddings: the inner-product contrastive objective lets
// pretrained embedding norms grow without bound, so raw scales vary by
// orders of magnitude between pretrained and untrained encoders.
struct ConditionScaler {
  torch::Tensor mean, inv_std;

  static ConditionScaler fit(const torch::Tensor &z) {
    ConditionScaler s;
    s.mean = z.mean(0);
    const auto std = z.size(0) > 1 ? z.std(0, false) : torch::ones_like(s.mean);
    s.inv_std = 1.0 / std.clamp_min(1e-6);
    return s;
  }
  torch::Tensor apply(const torch::Tensor &z) const { return (z - mean) * inv_std; }

  nlohmann::json to_json() const {
    auto vec = [](const torch::Tensor &t) {
      const auto c = t.to(torch::kFloat64).contiguous();
      return std::vector<double>(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
    };
    return {{"mean", vec(mean)}, {"inv_std", vec(inv_std)}};
  }
  static ConditionScaler from_json(const nlohmann::json &j) {
    ConditionScaler s;
    s.mean = torch::tensor(j.at("mean").get<std::vector<double>>()).to(torch::kFloat32);
    s.inv_std = torch::tensor(j.at("inv_std").get<std::vector<double>>()).to(torch::kFloat32);
    return s;
  }
};

nlohmann::json size_histogram(const std::vector<MoleculeRecord> &records) {
  std::map<int, int> counts;
  for (const auto &r : records)
    ++counts[r.graph.size()];
  auto out = nlohmann::json::array();
  for (const auto &[n, k] : counts)
    out.push_back({n, k});
  return out;
}

std::vector<const SpectraSet *> spectra_of(const std::vector<MoleculeRecord> &records) {
  std::vector<const SpectraSet *> out;
  for (const auto &r : records) {
    if (!r.spectra)
      throw DataError("record without spectra");
    out.push_back(&*r.spectra);
  }
  return out;
}

} // namespace

TrainResult cmd_train(const ExperimentConfig &c) {
  c.validate();
  write_resolved_config(c, "train");
  const Corpus corpus = load_dataset(c, true);
  const auto train = training_records(c, corpus);
  if (train.empty())
    throw DataError("train: empty training split");

  torch::manual_seed(c.seed);
  auto spec_cfg = c.specformer;
  std::string spec_source = "untrained";
  if (c.train.use_pretrained) {
    const std::string path = c.specformer_checkpoint_path();
    if (!fs::exists(path))
      throw ConfigError("no pretrained SpecFormer at '" + path +
                        "' (run pretrain-spec or pass --no-pretrain)");
    const auto meta = read_checkpoint_metadata(path);
    auto ckpt_cfg = meta.at("specformer").get<specformer::SpecFormerConfig>();
    if (ckpt_cfg.modalities != spec_cfg.modalities)
      throw ConfigError("pretrained SpecFormer uses modalities '" +
                        modality_list(ckpt_cfg.modalities) + "' but the config asks for '" +
                        modality_list(spec_cfg.modalities) + "'");
    spec_cfg = ckpt_cfg;
    spec_source = path;
  }
  specformer::SpecFormer spec(spec_cfg);
  if (c.train.use_pretrained)
    load_checkpoint(spec_source, {{"specformer", spec.ptr().get()}});

  auto dmt_cfg = c.dmt;
  dmt_cfg.cond_dim = spec_cfg.d_model;
  dmt::DMT model(dmt_cfg);
  const auto sched = c.schedule();

  std::vector<torch::Tensor> params = model->parameters();
  if (c.train.finetune_specformer)
    for (const auto &p : spec->parameters())
      params.push_back(p);
  else
    for (auto &p : spec->parameters())
      p.set_requires_grad(false);
  torch::optim::Adam optim(params, torch::optim::AdamOptions(c.train.learning_rate));

  const auto spectra = spectra_of(train);
  torch::Tensor z_cache = specformer::embed_spectra(spec, spectra);
  const auto scaler = ConditionScaler::fit(z_cache);
  z_cache = scaler.apply(z_cache);

  const std::string dir = c.output_dir + "/dmt";
  fs::create_directories(dir);
  std::ofstream log(dir + "/train_log.csv");
  log << "step,loss,atoms,batch,self_cond\n";
  log << std::setprecision(9);

  const NamedModules modules{{"dmt", model.ptr().get()},
                             {"specformer", spec.ptr().get()}};
  auto metadata_for = [&](int64_t step) {
    return nlohmann::json{{"kind", "dmt"},
                          {"dmt", dmt_cfg},
                          {"specformer", spec_cfg},
                          {"specformer_source", spec_source},
                          {"schedule", {{"offset", c.schedule_offset}, {"clip", c.schedule_clip}}},
                          {"n_atoms_histogram", size_histogram(train)},
                          {"condition_scaler", scaler.to_json()},
                          {"step", step},
                          {"seed", c.seed},
                          {"config", c},
                          {"git_describe", build_version()}};
  };

  BucketSampler sampler(train, c.train.batch_size, c.seed);
  TrainResult res;
  res.checkpoint = dir + "/last.pt";
  model->train();
  spec->train(c.train.finetune_specformer);
  const auto opts = torch::TensorOptions(torch::kFloat32);
  for (int64_t step = 0; step < c.train.steps; ++step) {
    auto gen = diffusion::make_generator(c.seed * 1000003ULL + static_cast<uint64_t>(step));
    const auto idx = sampler.batch(step);
    const int64_t b = static_cast<int64_t>(idx.size());
    std::vector<MolecularGraph> mols;
    std::vector<const SpectraSet *> batch_spectra;
    for (int i : idx) {
      mols.push_back(train[i].graph);
      batch_spectra.push_back(spectra[i]);
    }
    const auto g0 = to_continuous(mols, opts);
    const auto t = torch::rand({b}, gen, opts);
    const auto noise = gaussian_like(b, g0.atoms(), gen, opts);
    const bool self_cond = torch::rand({1}, gen).item<double>() < c.train.self_cond_prob;
    const auto g_t = diffusion::forward_sample(g0, t, noise, sched);
    const auto log_snr = sched.log_snr(t);

    optim.zero_grad();
    torch::Tensor z_s;
    if (c.train.finetune_specformer) {
      z_s = scaler.apply(spec->encode(specformer::spectra_batch(batch_spectra, opts)).z_s);
    } else {
      z_s = z_cache.index_select(
          0, torch::tensor(std::vector<int64_t>(idx.begin(), idx.end()), torch::kLong));
    }
    auto sc = ContinuousGraph::zeros_like(g_t);
    if (self_cond) {
      torch::NoGradGuard guard;
      sc = model->forward(g_t, sc, log_snr, z_s.detach()).detach();
    }
    const auto pred = model->forward(g_t, sc, log_snr, z_s);
    const auto loss = diffusion::training_loss(pred, g0, g_t, t, c.loss, sched, c.weighting)
                          .mean();
    const double value = loss.item<double>();
    if (!std::isfinite(value))
      throw NumericError("train: non-finite loss at step " + std::to_string(step));
    loss.backward();
    torch::nn::utils::clip_grad_norm_(params, c.train.grad_clip);
    optim.step();
    res.loss.push_back(value);
    log << step << ',' << value << ',' << g0.atoms() << ',' << b << ','
        << (self_cond ? 1 : 0) << '\n';
    if ((step + 1) % c.train.checkpoint_every == 0 && step + 1 < c.train.steps)
      save_checkpoint(res.checkpoint, modules, metadata_for(step + 1), &optim);
  }
  save_checkpoint(res.checkpoint, modules, metadata_for(c.train.steps), &optim);
  return res;
}

namespace {

struct SampleInput {
  SpectraSet spectra;
  std::optional<MolecularGraph> graph;
  nlohmann::json extra;
};

std::vector<SampleInput> read_sample_inputs(const ExperimentConfig &c) {
  std::vector<SampleInput> out;
  if (!c.sampling.input.empty()) {
    std::ifstream in(c.sampling.input);
    if (!in)
      throw DataError("cannot open '" + c.sampling.input + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos)
        continue;
      try {
        const auto j = nlohmann::json::parse(line);
        SampleInput s;
        if (j.contains("atoms")) {
          auto r = parse_record(j, true);
          s.spectra = *r.spectra;
          s.graph = r.graph;
          s.extra = r.extra;
        } else {
          s.spectra = parse_spectra(j);
        }
        out.push_back(std::move(s));
      } catch (const nlohmann::json::exception &e) {
        throw DataError(c.sampling.input + ":" + std::to_string(lineno) + ": " + e.what());
      } catch (const DataError &e) {
        throw DataError(c.sampling.input + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    return out;
  }
  const Corpus corpus = load_dataset(c, true);
  std::vector<int> idx;
  if (c.sampling.subset == "all") {
    idx.resize(corpus.records.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else if (c.sampling.subset == "train") {
    idx = corpus.split.train;
  } else if (c.sampling.subset == "val") {
    idx = corpus.split.val;
  } else {
    idx = corpus.split.test;
  }
  for (int i : idx) {
    const auto &r = corpus.records[i];
    out.push_back({*r.spectra, r.graph, r.extra});
  }
  return out;
}

int draw_from_histogram(const nlohmann::json &hist, uint64_t seed) {
  int64_t total = 0;
  for (const auto &e : hist)
    total += e[1].get<int64_t>();
  if (total <= 0)
    throw DataError("checkpoint has an empty atom-count histogram");
  const double u = static_cast<double>(seed >> 11) * 0x1.0p-53;
  const auto target = static_cast<int64_t>(u * static_cast<double>(total));
  int64_t acc = 0;
  for (const auto &e : hist) {
    acc += e[1].get<int64_t>();
    if (target < acc)
      return e[0].get<int>();
  }
  return hist.back()[0].get<int>();
}

} // namespace

std::string cmd_sample(const ExperimentConfig &c) {
  c.validate();
  write_resolved_config(c, "sample");
  const std::string ckpt = c.dmt_checkpoint_path();
  if (!fs::exists(ckpt))
    throw ConfigError("no DMT checkpoint at '" + ckpt + "' (run train first)");
  const auto meta = read_checkpoint_metadata(ckpt);
  if (meta.value("kind", "") != "dmt")
    throw ConfigError("'" + ckpt + "' is not a DMT checkpoint");
  const auto dmt_cfg = meta.at("dmt").get<dmt::DMTConfig>();
  const auto spec_cfg = meta.at("specformer").get<specformer::SpecFormerConfig>();
  if (spec_cfg.modalities != c.specformer.modalities)
    throw ConfigError("checkpoint was trained on modalities '" +
                      modality_list(spec_cfg.modalities) + "' but the config asks for '" +
                      modality_list(c.specformer.modalities) + "'");
  const auto sched = diffusion::NoiseSchedule(meta.at("schedule").at("offset").get<double>(),
                                              meta.at("schedule").at("clip").get<double>());
  dmt::DMT model(dmt_cfg);
  specformer::SpecFormer spec(spec_cfg);
  load_checkpoint(ckpt, {{"dmt", model.ptr().get()}, {"specformer", spec.ptr().get()}});
  model->eval();
  spec->eval();

  const auto inputs = read_sample_inputs(c);
  if (inputs.empty())
    throw DataError("sample: no input spectra");
  std::vector<const SpectraSet *> spectra;
  for (const auto &in : inputs)
    spectra.push_back(&in.spectra);
  const torch::Tensor z = ConditionScaler::from_json(meta.at("condition_scaler"))
                             .apply(specformer::embed_spectra(spec, spectra));

  const auto policy = parse_n_atoms_policy(c.sampling.n_atoms_policy);
  const int k = c.sampling.k;
  const int64_t total = static_cast<int64_t>(inputs.size()) * k;
  std::vector<int> n_atoms(total);
  std::vector<uint64_t> seeds(total);
  for (int64_t i = 0; i < static_cast<int64_t>(inputs.size()); ++i)
    for (int j = 0; j < k; ++j) {
      const int64_t slot = i * k + j;
      seeds[slot] = derive_seed(c.seed, i, j);
      switch (policy.kind) {
      case NAtomsPolicy::Kind::kFixed:
        n_atoms[slot] = policy.fixed;
        break;
      case NAtomsPolicy::Kind::kReference:
        if (!inputs[i].graph)
          throw DataError("n_atoms_policy 'reference' needs atoms in every input");
        n_atoms[slot] = inputs[i].graph->size();
        break;
      case NAtomsPolicy::Kind::kEmpirical:
        n_atoms[slot] = draw_from_histogram(meta.at("n_atoms_histogram"),
                                            derive_seed(seeds[slot], 0x5173, 0));
        break;
      }
    }

  // Equal sizes share a batch; every candidate keeps its own generator, so
  // the grouping does not change the noise each one sees.
  std::map<int, std::vector<int64_t>> by_size;
  for (int64_t s = 0; s < total; ++s)
    by_size[n_atoms[s]].push_back(s);
  std::vector<MolecularGraph> out(total);
  const diffusion::Denoiser denoiser = [&](const ContinuousGraph &g_t,
                                           const ContinuousGraph &sc,
                                           const torch::Tensor &t,
                                           const torch::Tensor &cond) {
    return model->forward(g_t, sc, sched.log_snr(t), cond);
  };
  torch::NoGradGuard guard;
  const diffusion::SamplerOptions sopts{c.sampling.steps, c.sampling.tau};
  for (const auto &[n, slots] : by_size) {
    for (std::size_t start = 0; start < slots.size(); start += c.sampling.batch_size) {
      const std::size_t end = std::min(slots.size(), start + c.sampling.batch_size);
      std::vector<int64_t> rows;
      std::vector<uint64_t> chunk_seeds;
      for (std::size_t q = start; q < end; ++q) {
        rows.push_back(slots[q] / k);
        chunk_seeds.push_back(seeds[slots[q]]);
      }
      const auto cond = z.index_select(0, torch::tensor(rows, torch::kLong));
      auto mols = diffusion::ancestral_sample(denoiser, n, cond, sched, sopts, chunk_seeds);
      for (std::size_t q = start; q < end; ++q)
        out[slots[q]] = std::move(mols[q - start]);
    }
  }

  std::vector<MoleculeRecord> records;
  std::vector<MoleculeRecord> refs;
  for (int64_t s = 0; s < total; ++s) {
    nlohmann::json extra{{"source_index", s / k},
                         {"candidate", s % k},
                         {"seed", seeds[s]}};
    records.push_back({out[s], std::nullopt, extra});
  }
  for (int64_t i = 0; i < static_cast<int64_t>(inputs.size()); ++i)
    if (inputs[i].graph) {
      nlohmann::json extra = inputs[i].extra.is_object() ? inputs[i].extra
                                                         : nlohmann::json::object();
      extra["source_index"] = i;
      refs.push_back({*inputs[i].graph, std::nullopt, extra});
    }
  const std::string path =
      c.sampling.output.empty() ? c.output_dir + "/samples.jsonl" : c.sampling.output;
  if (fs::path(path).has_parent_path())
    fs::create_directories(fs::path(path).parent_path());
  write_records(path, records, false);
  write_records(c.output_dir + "/sample_references.jsonl", refs, false);
  return path;
}

namespace {

void write_histogram(const std::string &path, const std::vector<double> &samples,
                     const std::vector<double> &refs, int bins) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto *v : {&samples, &refs})
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  std::ofstream out(path);
  out << "bin_lo,bin_hi,samples,references\n";
  if (!std::isfinite(lo))
    return;
  if (hi <= lo)
    hi = lo + 1e-9;
  const double w = (hi - lo) / bins;
  std::vector<int> a(bins, 0), b(bins, 0);
  auto bin = [&](double x) { return std::min(bins - 1, static_cast<int>((x - lo) / w)); };
  for (double x : samples)
    ++a[bin(x)];
  for (double x : refs)
    ++b[bin(x)];
  for (int i = 0; i < bins; ++i)
    out << lo + i * w << ',' << lo + (i + 1) * w << ',' << a[i] << ',' << b[i] << '\n';
}

} // namespace

std::string cmd_evaluate(const ExperimentConfig &c) {
  c.validate();
  write_resolved_config(c, "evaluate");
  const auto sel = metrics::parse_metric_selection(c.metrics);
  const std::string samples_path =
      c.evaluation.samples.empty()
          ? (c.sampling.output.empty() ? c.output_dir + "/samples.jsonl" : c.sampling.output)
          : c.evaluation.samples;
  const std::string refs_path = c.evaluation.references.empty()
                                    ? c.output_dir + "/sample_references.jsonl"
                                    : c.evaluation.references;
  if (!fs::exists(samples_path))
    throw DataError("samples file '" + samples_path + "' does not exist");
  std::vector<LineDiagnostic> rejected;
  const auto samples = load_records(samples_path, &rejected);
  if (samples.empty())
    throw DataError("samples file '" + samples_path + "' holds no molecules");

  std::vector<MolecularGraph> sample_graphs;
  for (const auto &s : samples)
    sample_graphs.push_back(s.graph);

  std::vector<MoleculeRecord> refs;
  if (fs::exists(refs_path))
    refs = load_records(refs_path);
  std::vector<MolecularGraph> ref_graphs;
  for (const auto &r : refs)
    ref_graphs.push_back(r.graph);

  std::vector<MolecularGraph> train_graphs;
  if (!c.dataset.empty() && fs::exists(c.dataset)) {
    const Corpus corpus = load_corpus(c.dataset, c.split_seed, false);
    for (const auto &r : training_records(c, corpus))
      train_graphs.push_back(r.graph);
  }

  metrics::MetricReport report;
  if (sel.wants_group("generation"))
    report.merge(metrics::generation_metrics(sample_graphs, train_graphs, ref_graphs, sel));
  if (sel.wants_group("geometry")) {
    if (ref_graphs.empty()) {
      for (const auto &m : metrics::metric_names("geometry"))
        if (sel.wants("geometry", m))
          report.set_null(m, "no reference molecules");
    } else {
      report.merge(metrics::geometry_metrics(sample_graphs, ref_graphs, sel));
    }
  }
  if (sel.wants_group("elucidation")) {
    // Candidates grouped by the reference they were sampled for, in
    // candidate order.
    std::map<int64_t, int> ref_of;
    for (int i = 0; i < static_cast<int>(refs.size()); ++i) {
      const auto &e = refs[i].extra;
      ref_of[e.is_object() && e.contains("source_index") ? e["source_index"].get<int64_t>()
                                                         : i] = i;
    }
    std::map<int, std::vector<std::pair<int64_t, int>>> groups;
    for (int s = 0; s < static_cast<int>(samples.size()); ++s) {
      const auto &e = samples[s].extra;
      if (!e.is_object() || !e.contains("source_index"))
        continue;
      const auto it = ref_of.find(e["source_index"].get<int64_t>());
      if (it == ref_of.end())
        continue;
      groups[it->second].push_back({e.value("candidate", int64_t{0}), s});
    }
    std::vector<MolecularGraph> targets;
    std::vector<std::vector<MolecularGraph>> candidates;
    for (auto &[r, list] : groups) {
      std::sort(list.begin(), list.end());
      targets.push_back(ref_graphs[r]);
      candidates.emplace_back();
      for (const auto &[cand, s] : list)
        candidates.back().push_back(samples[s].graph);
    }
    if (targets.empty()) {
      for (const auto &m : metrics::metric_names("elucidation"))
        if (sel.wants("elucidation", m))
          report.set_null(m, "no samples matched to reference molecules");
    } else {
      metrics::ElucidationOptions eo;
      eo.ks = c.evaluation.ks;
      eo.mces_timeout_ms = c.mces_timeout_ms;
      eo.workers = c.workers;
      report.merge(metrics::elucidation_metrics(targets, candidates, eo, sel));
    }
  }

  auto j = report.to_json();
  j["samples"] = samples_path;
  j["references"] = refs_path;
  j["n_samples"] = samples.size();
  j["n_rejected_lines"] = rejected.size();
  fs::create_directories(c.output_dir);
  const std::string out_path = c.output_dir + "/report.json";
  std::ofstream(out_path) << j.dump(2) << '\n';

  if (c.evaluation.plots) {
    const std::string dir = c.output_dir + "/plots";
    fs::create_directories(dir);
    for (auto f : {metrics::GeometryFeature::kBond, metrics::GeometryFeature::kAngle,
                   metrics::GeometryFeature::kDihedral}) {
      std::vector<double> a, b;
      for (const auto &m : sample_graphs)
        for (double x : metrics::geometry_features(m, f))
          a.push_back(x);
      for (const auto &m : ref_graphs)
        for (double x : metrics::geometry_features(m, f))
          b.push_back(x);
      write_histogram(dir + "/" + metrics::to_string(f) + "_hist.csv", a, b, 50);
    }
    std::ofstream acc(dir + "/acc_at_k.csv");
    acc << "k,acc\n";
    for (const auto &[name, v] : report.values)
      if (name.rfind("acc@", 0) == 0 && v)
        acc << name.substr(4) << ',' << *v << '\n';
  }
  return out_path;
}

std::string cmd_report(const ExperimentConfig &c) {
  const std::string path = c.output_dir + "/report.json";
  std::ifstream in(path);
  if (!in)
    throw DataError("no report at '" + path + "' (run evaluate first)");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw DataError("report '" + path + "' is not valid JSON");
  }
  std::ostringstream md;
  md << "| metric | value |\n|---|---|\n";
  for (const auto &[name, v] : j.at("metrics").items()) {
    md << "| " << name << " | ";
    if (v.is_null()) {
      const auto &reasons = j.value("null_reasons", nlohmann::json::object());
      md << "n/a";
      if (reasons.contains(name))
        md << " (" << reasons[name].get<std::string>() << ")";
    } else {
      md << std::setprecision(4) << v.get<double>();
    }
    md << " |\n";
  }
  std::ofstream(c.output_dir + "/report.md") << md.str();
  return md.str();
}

} // namespace diffspectra::harness
