//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

// Acceptance run: one PASS/FAIL line per criterion. Arguments select a
// subset of criteria by number (default: all). Exit status is nonzero if
// any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "checks.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

#include "diffspectra/diffusion.hpp"
#include "diffspectra/dmt.hpp"
#include "diffspectra/harness.hpp"
#include "diffspectra/metrics.hpp"
#include "diffspectra/specformer.hpp"
#include "diffspectra/toy_corpus.hpp"

using namespace diffspectra;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char *f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Schedule composition identities and monotone SNR.
Outcome schedule_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  const diffusion::NoiseSchedule sched;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst_alpha = 0, worst_sigma = 0;
  for (int k = 0; k < 10000; ++k) {
    double v[3] = {u01(rng), u01(rng), u01(rng)};
    std::sort(v, v + 3);
    if (v[0] == v[1] || v[1] == v[2])
      continue;
    const auto us = diffusion::transition_params(v[0], v[1], sched);
    const auto tu = diffusion::transition_params(v[1], v[2], sched);
    const auto ts = diffusion::transition_params(v[0], v[2], sched);
    worst_alpha = std::max(worst_alpha, std::abs(tu.alpha_ts * us.alpha_ts - ts.alpha_ts));
    worst_sigma = std::max(worst_sigma,
                           std::abs(tu.alpha_ts * tu.alpha_ts * us.sigma_ts_sq +
                                    tu.sigma_ts_sq - ts.sigma_ts_sq));
  }
  bool decreasing = true;
  double prev = sched.snr(0.0);
  for (int i = 1; i < 1000; ++i) {
    const double s = sched.snr(i / 999.0);
    decreasing = decreasing && s < prev;
    prev = s;
  }
  const double secs = seconds_since(t0);
  return {worst_alpha < 1e-9 && worst_sigma < 1e-9 && decreasing && secs < 5.0,
          "alpha err " + fmt("%.2e", worst_alpha) + ", sigma^2 err " +
              fmt("%.2e", worst_sigma) + ", SNR decreasing " +
              (decreasing ? "yes" : "no") + ", " + fmt("%.2f", secs) + " s"};
}

// 2. Posterior mean consistency.
Outcome posterior_consistency() {
  const diffusion::NoiseSchedule sched;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double worst_coef = 0;
  for (int k = 0; k < 10000; ++k) {
    double s = u01(rng), t = u01(rng);
    if (s == t)
      continue;
    if (s > t)
      std::swap(s, t);
    const auto p = diffusion::transition_params(s, t, sched);
    worst_coef = std::max(worst_coef, std::abs(p.c_t * p.alpha_t + p.c_0 - p.alpha_s));
  }
  double worst_step = 0;
  auto gen = diffusion::make_generator(2);
  for (int k = 0; k < 50; ++k) {
    auto g0 = gaussian_like(2, 7, gen, testing::kDouble);
    double s = u01(rng), t = u01(rng);
    if (s > t)
      std::swap(s, t);
    if (s == t)
      continue;
    const auto p = diffusion::transition_params(s, t, sched);
    const ContinuousGraph g_t{g0.h * p.alpha_t, g0.a * p.alpha_t, g0.x * p.alpha_t};
    const auto noise = gaussian_like(2, 7, gen, testing::kDouble);
    const auto g_s = diffusion::reverse_step(g_t, g0, p, 0.0, noise);
    worst_step = std::max({worst_step, testing::max_abs_diff(g_s.h, g0.h * p.alpha_s),
                           testing::max_abs_diff(g_s.a, g0.a * p.alpha_s),
                           testing::max_abs_diff(g_s.x, g0.x * p.alpha_s)});
  }
  return {worst_coef < 1e-9 && worst_step < 1e-6,
          "c_t alpha_t + c_0 - alpha_s " + fmt("%.2e", worst_coef) +
              ", reverse step " + fmt("%.2e", worst_step)};
}

// 3. Equivariance of the DMT with random weights, in single precision (the
// dtype used for training and sampling).
Outcome equivariance() {
  const auto t0 = std::chrono::steady_clock::now();
  torch::manual_seed(3);
  auto cfg = testing::tiny_dmt_config(2, 32);
  cfg.heads = 4;
  cfg.key_dim = 8;
  cfg.n_rbf = 16;
  cfg.time_dim = 16;
  cfg.cond_dim = 16;
  dmt::DMT model(cfg);
  model->eval();
  const auto f32 = torch::TensorOptions(torch::kFloat32);
  double perm = 0;
  testing::RigidDeviation rigid;
  for (int n : {3, 9, 20}) {
    perm = std::max(perm, testing::permutation_deviation(model, n, 50, 300 + n, f32));
    const auto r = testing::rigid_deviation(model, n, 50, 600 + n, f32);
    rigid.x = std::max(rigid.x, r.x);
    rigid.h = std::max(rigid.h, r.h);
    rigid.a = std::max(rigid.a, r.a);
  }
  const double secs = seconds_since(t0);
  const double rot = std::max({rigid.x, rigid.h, rigid.a});
  return {perm < 1e-5 && rot < 1e-4 && secs < 60.0,
          "permutation " + fmt("%.2e", perm) + ", rotation X " + fmt("%.2e", rigid.x) +
              " H " + fmt("%.2e", rigid.h) + " A " + fmt("%.2e", rigid.a) + ", " +
              fmt("%.1f", secs) + " s"};
}

// 4. Training-loss gradients against central differences.
Outcome gradient_checks() {
  torch::manual_seed(4);
  auto cfg = testing::tiny_dmt_config(1, 8);
  cfg.cond_dim = 4;
  dmt::DMT model(cfg);
  model->to(torch::kFloat64);
  const auto r = testing::dmt_gradient_check(model, 3, 4, 64);
  return {r.worst_rel_error < 1e-3,
          std::to_string(r.groups) + " parameter groups, worst relative error " +
              fmt("%.2e", r.worst_rel_error) + " (" + r.worst_group + ")"};
}

// 5. Metric oracles.
Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> size(1, 6);
  int mismatches = 0;
  for (int k = 0; k < 200; ++k) {
    const auto a = testing::random_graph(size(rng), rng, 0.5, 3, 3);
    const auto b = testing::random_graph(size(rng), rng, 0.5, 3, 3);
    const auto got = metrics::mces(a, b, 0);
    const int want = testing::mces_exhaustive(a, b);
    if (got.common_edges != want ||
        got.distance != a.num_bonds() + b.num_bonds() - 2 * want)
      ++mismatches;
  }

  // Similarity identities: self = 1, disjoint = 0.
  bool identities = true;
  const auto mols = enumerate_molecules(3);
  for (std::size_t i = 0; i < mols.size(); i += 3) {
    const auto fp = metrics::morgan_fingerprint(mols[i]);
    identities = identities && metrics::tanimoto(fp, fp) == 1.0 &&
                 std::abs(metrics::cosine(fp, fp) - 1.0) < 1e-12 &&
                 metrics::fg_sim(mols[i], mols[i]) == 1.0;
  }
  const metrics::Fingerprint f1{{1, 5, 9}}, f2{{2, 6}};
  identities = identities && metrics::tanimoto(f1, f2) == 0.0 &&
               metrics::cosine(f1, f2) == 0.0;
  int disjoint_pairs = 0;
  for (std::size_t i = 0; i < mols.size() && disjoint_pairs < 20; ++i)
    for (std::size_t j = i + 1; j < mols.size() && disjoint_pairs < 20; ++j) {
      const auto ga = metrics::functional_groups(mols[i]);
      const auto gb = metrics::functional_groups(mols[j]);
      bool disjoint = !ga.empty() && !gb.empty();
      for (auto g : ga)
        disjoint = disjoint && !gb.count(g);
      if (disjoint) {
        ++disjoint_pairs;
        identities = identities && metrics::fg_sim(mols[i], mols[j]) == 0.0;
      }
    }
  identities = identities && disjoint_pairs > 0;

  // ACC@K monotone in K on shuffled candidate lists.
  bool monotone = true;
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> pick(0, mols.size() - 1);
    const auto &target = mols[pick(rng)];
    std::vector<MolecularGraph> cands;
    for (int c = 0; c < 12; ++c)
      cands.push_back(mols[pick(rng)]);
    if (trial % 3 == 0)
      cands[std::uniform_int_distribution<int>(0, 11)(rng)] = target;
    bool prev = false;
    for (int k = 1; k <= 12; ++k) {
      const bool hit = metrics::acc_at_k(cands, target, k);
      monotone = monotone && (!prev || hit);
      prev = hit;
    }
  }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && identities && monotone && secs < 300.0,
          "MCES mismatches " + std::to_string(mismatches) + "/200, identities " +
              (identities ? "hold" : "violated") + ", ACC@K monotone " +
              (monotone ? "yes" : "no") + ", " + fmt("%.1f", secs) + " s"};
}

// 6. SpecFormer contracts.
Outcome specformer_contracts() {
  const specformer::PatchConfig shipped;
  auto formula = [](int l, int p, int d) { return (l - p) / d + 1; };
  const int uv = shipped.uv.count(), ir = shipped.ir.count(), ra = shipped.raman.count();
  const bool counts = uv == 30 && ir == 70 && ra == 70 &&
                      uv == formula(kUvLength, shipped.uv.patch, shipped.uv.stride) &&
                      ir == formula(kIrLength, shipped.ir.patch, shipped.ir.stride) &&
                      ra == formula(kRamanLength, shipped.raman.patch, shipped.raman.stride);

  const int b = 8;
  const auto z = torch::ones({b, 16}, testing::kDouble) * 0.3;
  const double infonce = specformer::contrastive_loss(z, z).item<double>();
  const double infonce_err = std::abs(infonce - std::log(static_cast<double>(b)));

  auto gen = diffusion::make_generator(6);
  const auto orig = torch::rand({4, 30, 20}, gen, testing::kDouble);
  const auto recon = torch::rand({4, 30, 20}, gen, testing::kDouble);
  const auto mask = specformer::mask_patches(orig, 0.3, gen).mask;
  const auto keep = (~mask).unsqueeze(-1).to(torch::kFloat64);
  const auto noise = torch::randn({4, 30, 20}, gen, testing::kDouble) * 5.0;
  const double base = specformer::mpr_loss(recon, orig, mask).item<double>();
  const double moved = specformer::mpr_loss(recon + noise * keep, orig - noise * keep, mask)
                           .item<double>();
  const double mpr_err = std::abs(base - moved);
  return {counts && infonce_err < 1e-6 && mpr_err < 1e-12,
          "patches uv " + std::to_string(uv) + " ir " + std::to_string(ir) + " raman " +
              std::to_string(ra) + ", |InfoNCE - log B| " + fmt("%.2e", infonce_err) +
              ", MPR unmasked perturbation " + fmt("%.2e", mpr_err)};
}

// Shared scaled-down end-to-end run for criteria 7-9.
class Pipeline {
public:
  explicit Pipeline(const fs::path &dir) : dir_(dir) {}

  const harness::ExperimentConfig &trained() {
    if (ready_)
      return cfg_;
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const std::string data = (dir_ / "toy32.jsonl").string();
    write_records(data, make_toy_corpus(32, 3, 0), true);

    auto &c = cfg_;
    c.dataset = data;
    c.split_mode = "all_train";
    c.dmt.layers = 3;
    c.dmt.node_dim = 64;
    c.dmt.message_dim = 64;
    c.dmt.edge_dim = 32;
    c.dmt.heads = 4;
    c.dmt.key_dim = 16;
    c.dmt.n_rbf = 16;
    c.dmt.time_dim = 32;
    c.specformer.d_model = 32;
    c.specformer.layers = 2;
    c.specformer.heads = 4;
    c.specformer.key_dim = 8;
    c.specformer.ffn_dim = 64;
    c.pretrain.stage1_steps = 200;
    c.pretrain.stage2_steps = 400;
    c.pretrain.options.learning_rate = 1e-3;
    c.train.learning_rate = 1e-3;
    c.train.steps = 20000;
    c.train.checkpoint_every = 5000;
    c.sampling.steps = 100;
    c.sampling.n_atoms_policy = "reference";
    c.sampling.subset = "all";
    c.output_dir = (dir_ / "run").string();
    c.seed = 7;

    const auto t0 = std::chrono::steady_clock::now();
    harness::cmd_pretrain_spec(c);
    const auto r = harness::cmd_train(c);
    train_seconds_ = seconds_since(t0);
    first_loss_ = r.loss.front();
    last_loss_ = r.loss.back();
    ready_ = true;
    return cfg_;
  }

  // Samples and evaluates under `tag`; returns the report JSON.
  nlohmann::json sample_and_evaluate(double tau, int k, uint64_t seed,
                                     const std::string &metrics, const std::string &tag) {
    auto c = trained();
    c.sampling.tau = tau;
    c.sampling.k = k;
    c.seed = seed;
    c.sampling.output = (dir_ / ("samples_" + tag + ".jsonl")).string();
    c.metrics = metrics;
    c.evaluation.ks = {1, 5, 10};
    c.output_dir = (dir_ / ("eval_" + tag)).string();
    c.dmt_checkpoint = trained().dmt_checkpoint_path();
    harness::cmd_sample(c);
    std::ifstream in(harness::cmd_evaluate(c));
    return nlohmann::json::parse(in);
  }

  std::string sample_only(uint64_t seed, const std::string &tag) {
    auto c = trained();
    c.sampling.tau = 0.6;
    c.sampling.k = 2;
    c.seed = seed;
    c.sampling.output = (dir_ / ("samples_" + tag + ".jsonl")).string();
    c.output_dir = (dir_ / ("sample_" + tag)).string();
    c.dmt_checkpoint = trained().dmt_checkpoint_path();
    return harness::cmd_sample(c);
  }

  double train_seconds() const { return train_seconds_; }
  double first_loss() const { return first_loss_; }
  double last_loss() const { return last_loss_; }

private:
  fs::path dir_;
  harness::ExperimentConfig cfg_;
  bool ready_ = false;
  double train_seconds_ = 0, first_loss_ = 0, last_loss_ = 0;
};

double metric(const nlohmann::json &report, const std::string &name) {
  const auto &v = report.at("metrics").at(name);
  return v.is_null() ? std::nan("") : v.get<double>();
}

// 7. Overfit-and-recover.
Outcome overfit_and_recover(Pipeline &p) {
  p.trained();
  const auto report = p.sample_and_evaluate(0.6, 10, 11, "acc", "overfit");
  const double a1 = metric(report, "acc@1"), a5 = metric(report, "acc@5"),
               a10 = metric(report, "acc@10");
  const bool pass = a5 >= 0.5 && a1 <= a5 && a5 <= a10 && p.train_seconds() < 4 * 3600;
  return {pass, "ACC@1 " + fmt("%.3f", a1) + ", ACC@5 " + fmt("%.3f", a5) + ", ACC@10 " +
                    fmt("%.3f", a10) + "; training loss " + fmt("%.3g", p.first_loss()) +
                    " -> " + fmt("%.3g", p.last_loss()) + " in " +
                    fmt("%.0f", p.train_seconds()) + " s"};
}

// 8. Moderate temperature beats high temperature on TaniSim_MG.
Outcome temperature_direction(Pipeline &p) {
  double low = 0, high = 0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    low += metric(p.sample_and_evaluate(0.6, 1, seed, "tanisim_mg",
                                        "tau06_s" + std::to_string(seed)),
                  "tanisim_mg");
    high += metric(p.sample_and_evaluate(1.2, 1, seed, "tanisim_mg",
                                         "tau12_s" + std::to_string(seed)),
                   "tanisim_mg");
  }
  low /= 5;
  high /= 5;
  return {low > high, "mean TaniSim_MG tau=0.6 " + fmt("%.4f", low) + ", tau=1.2 " +
                          fmt("%.4f", high)};
}

std::string file_bytes(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 9. Byte-identical sampling output for a fixed seed.
Outcome reproducibility(Pipeline &p) {
  const auto a = file_bytes(p.sample_only(42, "repro_a"));
  const auto b = file_bytes(p.sample_only(42, "repro_b"));
  const auto c = file_bytes(p.sample_only(43, "repro_c"));
  return {!a.empty() && a == b && a != c,
          std::to_string(a.size()) + " bytes, identical " + (a == b ? "yes" : "no") +
              ", other seed differs " + (a != c ? "yes" : "no")};
}

} // namespace

int main(int argc, char **argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i)
    selected.insert(std::stoi(argv[i]));
  auto wants = [&](int n) { return selected.empty() || selected.count(n); };

  torch::set_num_threads(1);
  const fs::path dir = fs::temp_directory_path() / "diffspectra_acceptance";
  Pipeline pipeline(dir);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"schedule algebra", schedule_algebra},
      {"posterior consistency", posterior_consistency},
      {"equivariance", equivariance},
      {"gradient checks", gradient_checks},
      {"metric oracles", metric_oracles},
      {"specformer contracts", specformer_contracts},
      {"overfit and recover", [&] { return overfit_and_recover(pipeline); }},
      {"temperature direction", [&] { return temperature_direction(pipeline); }},
      {"reproducibility", [&] { return reproducibility(pipeline); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!wants(n))
      continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << "criterion " << n << " [" << criteria[i].first
              << "]: " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")"
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
