//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "checks.hpp"
#include "diffspectra/checkpoint.hpp"
#include "diffspectra/error.hpp"
#include "diffspectra/pretrain.hpp"
#include "diffspectra/specformer.hpp"
#include "diffspectra/toy_corpus.hpp"

namespace diffspectra {
namespace {

using namespace specformer;
using testing::kDouble;
using testing::max_abs_diff;

SpecFormerConfig small_config() {
  SpecFormerConfig c;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.key_dim = 4;
  c.ffn_dim = 32;
  c.struct_layers = 1;
  c.struct_node_dim = 16;
  c.struct_edge_dim = 8;
  c.struct_heads = 2;
  return c;
}

// Count by walking the windows, independent of the closed form.
int walk_count(int length, int patch, int stride) {
  int n = 0;
  for (int start = 0; start + patch <= length; start += stride)
    ++n;
  return n;
}

TEST(Patching, ShippedGridsAndOverlap) {
  EXPECT_EQ(patch_count(601, 20, 20), 30);
  EXPECT_EQ(patch_count(3501, 50, 50), 70);
  EXPECT_EQ(patch_count(10, 4, 2), 4);
  const PatchConfig cfg;
  EXPECT_EQ(cfg.uv.count(), 30);
  EXPECT_EQ(cfg.ir.count(), 70);
  EXPECT_EQ(cfg.raman.count(), 70);

  const auto s = torch::arange(10, kDouble);
  const auto p = patchify(s, PatchSpec{10, 4, 2});
  ASSERT_EQ(p.sizes(), (std::vector<int64_t>{1, 4, 4}));
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k < 4; ++k)
      EXPECT_EQ(p[0][j][k].item<double>(), 2 * j + k);
  // UV drops the trailing point.
  const auto uv = patchify(torch::arange(601, kDouble), cfg.uv);
  EXPECT_EQ(uv[0][29][19].item<double>(), 599);
}

TEST(Patching, CountFormulaFuzz) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int length = std::uniform_int_distribution<int>(1, 400)(rng);
    const int patch = std::uniform_int_distribution<int>(1, length)(rng);
    const int stride = std::uniform_int_distribution<int>(1, patch)(rng);
    const PatchSpec spec{length, patch, stride};
    const auto p = patchify(torch::zeros({2, length}), spec);
    ASSERT_EQ(p.size(1), walk_count(length, patch, stride))
        << length << " " << patch << " " << stride;
    ASSERT_EQ(spec.count(), p.size(1));
    ASSERT_EQ(p.size(2), patch);
  }
}

TEST(Patching, InvalidConfigRejected) {
  EXPECT_THROW(patchify(torch::zeros({8}), PatchSpec{8, 9, 1}), ConfigError);
  EXPECT_THROW(patchify(torch::zeros({8}), PatchSpec{8, 4, 5}), ConfigError);
  EXPECT_THROW(patchify(torch::zeros({8}), PatchSpec{8, 4, 0}), ConfigError);
  EXPECT_THROW(patchify(torch::zeros({9}), PatchSpec{8, 4, 2}), DataError);
}

TEST(PatchEmbedding, ZeroPatchesGivePositionRows) {
  torch::manual_seed(1);
  PatchEmbedding emb(5, 7, 12);
  emb->to(torch::kFloat64);
  const auto out = emb(torch::zeros({3, 7, 5}, kDouble));
  ASSERT_EQ(out.sizes(), (std::vector<int64_t>{3, 7, 12}));
  const auto want = emb->pos + emb->proj->bias;
  for (int b = 0; b < 3; ++b)
    EXPECT_LT(max_abs_diff(out[b], want), 1e-15);

  // Same content at two positions: different embeddings.
  auto same = torch::ones({1, 7, 5}, kDouble);
  const auto e = emb(same);
  EXPECT_GT(max_abs_diff(e[0][0], e[0][1]), 1e-6);
}

TEST(Encoder, TokenCountAndShape) {
  torch::manual_seed(2);
  auto cfg = small_config();
  SpecFormer model(cfg);
  EXPECT_EQ(cfg.tokens(), 170);
  const auto batch = spectra_batch(
      {surrogate_spectra(testing::ethanol()), surrogate_spectra(testing::methane())});
  const auto out = model->encode(batch);
  EXPECT_EQ(out.tokens.sizes(), (std::vector<int64_t>{2, 170, 16}));
  EXPECT_EQ(out.z_s.sizes(), (std::vector<int64_t>{2, 16}));
  EXPECT_TRUE(torch::isfinite(out.z_s).all().item<bool>());

  cfg.modalities = parse_modalities("ir");
  SpecFormer ir_only(cfg);
  EXPECT_EQ(cfg.tokens(), 70);
  EXPECT_EQ(ir_only->encode(batch).tokens.size(1), 70);
}

TEST(Encoder, AttentionRowsSumToOne) {
  torch::manual_seed(3);
  SelfAttention att(16, 4, 5);
  att->to(torch::kFloat64);
  att(torch::randn({3, 11, 16}, kDouble) * 4.0);
  const auto rows = att->last_weights.sum(-1);
  EXPECT_EQ(att->last_weights.sizes(), (std::vector<int64_t>{3, 4, 11, 11}));
  EXPECT_LT((rows - 1.0).abs().max().item<double>(), 1e-6);
  EXPECT_GE(att->last_weights.min().item<double>(), 0.0);
}

TEST(Encoder, ModalityOrderIsSemantic) {
  torch::manual_seed(4);
  SpecFormer model(small_config());
  model->eval();
  torch::NoGradGuard guard;
  const auto batch = spectra_batch({surrogate_spectra(testing::ethanol())});
  const auto tokens = model->embed(model->patchify_batch(batch));
  // Swap the IR and Raman blocks (70 tokens each) and run the same stack.
  const auto swapped = torch::cat({tokens.narrow(1, 0, 30), tokens.narrow(1, 100, 70),
                                   tokens.narrow(1, 30, 70)},
                                  1);
  auto run = [&](torch::Tensor z) {
    for (auto &l : model->layers)
      z = l(z);
    return model->projection(z.flatten(1));
  };
  const auto base = run(tokens);
  EXPECT_LT(max_abs_diff(base, model->encode(batch).z_s), 1e-6);
  EXPECT_GT(max_abs_diff(base, run(swapped)), 1e-4);
}

TEST(Encoder, DeterministicInEvalMode) {
  torch::manual_seed(5);
  SpecFormer model(small_config());
  model->eval();
  torch::NoGradGuard guard;
  const auto batch = spectra_batch(
      {surrogate_spectra(testing::ethanol()), surrogate_spectra(testing::methanol())});
  EXPECT_TRUE(torch::equal(model->encode(batch).z_s, model->encode(batch).z_s));
}

TEST(Masking, FloorRuleAndDeterminism) {
  const auto p = torch::rand({4, 30, 20});
  const auto m = mask_patches(p, 0.3, 99);
  EXPECT_TRUE(torch::equal(m.mask.sum(1), torch::full({4}, 9, torch::kLong)));
  const auto again = mask_patches(p, 0.3, 99);
  EXPECT_TRUE(torch::equal(m.mask, again.mask));
  EXPECT_FALSE(torch::equal(m.mask, mask_patches(p, 0.3, 100).mask));
  const auto keep = m.mask.logical_not().unsqueeze(-1).expand_as(p);
  EXPECT_TRUE(torch::equal(m.patches.masked_select(keep), p.masked_select(keep)));
  EXPECT_EQ(m.patches.masked_select(m.mask.unsqueeze(-1).expand_as(p)).abs().sum().item<float>(),
            0.0f);

  const auto none = mask_patches(p, 0.0, 99);
  EXPECT_TRUE(torch::equal(none.patches, p));
  EXPECT_FALSE(none.mask.any().item<bool>());
  EXPECT_EQ(mask_patches(torch::rand({1, 70, 50}), 0.3, 1).mask.sum().item<int64_t>(), 21);
  EXPECT_THROW(mask_patches(p, 1.0, 1), ConfigError);
}

TEST(Masking, MaskedPatchKeepsPosition) {
  torch::manual_seed(6);
  PatchEmbedding emb(20, 30, 8);
  emb->to(torch::kFloat64);
  const auto m = mask_patches(torch::rand({1, 30, 20}, kDouble), 0.3, 4);
  const auto out = emb(m.patches);
  const auto base = emb->pos + emb->proj->bias;
  for (int j = 0; j < 30; ++j)
    if (m.mask[0][j].item<bool>())
      EXPECT_LT(max_abs_diff(out[0][j], base[j]), 1e-15);
}

TEST(Mpr, HandValues) {
  const auto orig = torch::rand({2, 30, 20}, kDouble);
  auto mask = torch::zeros({2, 30}, torch::kBool);
  mask[1][7] = true;
  EXPECT_EQ(mpr_loss(orig, orig, mask).item<double>(), 0.0);
  auto recon = orig.clone();
  recon[1][7] += 0.1;
  EXPECT_NEAR(mpr_loss(recon, orig, mask).item<double>(), 0.2, 1e-12);
  // Summed over modalities.
  EXPECT_NEAR(mpr_loss({recon, recon}, {orig, orig}, {mask, mask}).item<double>(), 0.4,
              1e-12);
  // Two masked patches with errors 0.2 and 0 average to 0.1.
  mask[0][3] = true;
  EXPECT_NEAR(mpr_loss(recon, orig, mask).item<double>(), 0.1, 1e-12);
}

TEST(Mpr, UnmaskedPatchesIgnored) {
  std::mt19937_64 rng(8);
  const auto orig = torch::rand({3, 30, 20}, kDouble);
  const auto m = mask_patches(orig, 0.3, 8);
  const auto recon = orig + 0.05 * torch::randn({3, 30, 20}, kDouble);
  const double base = mpr_loss(recon, orig, m.mask).item<double>();
  for (int trial = 0; trial < 20; ++trial) {
    auto r = recon.clone();
    int b, j;
    do {
      b = std::uniform_int_distribution<int>(0, 2)(rng);
      j = std::uniform_int_distribution<int>(0, 29)(rng);
    } while (m.mask[b][j].item<bool>());
    r[b][j] += 10.0;
    EXPECT_EQ(mpr_loss(r, orig, m.mask).item<double>(), base);
  }
}

TEST(Contrastive, UniformScores) {
  // Orthogonal-to-everything embeddings: every score is zero.
  const auto z = torch::zeros({4, 8}, kDouble);
  EXPECT_NEAR(contrastive_loss(z, z).item<double>(), std::log(4.0), 1e-6);
  // Constant rows: every score equal but non-zero.
  const auto c = torch::ones({4, 8}, kDouble) * 0.3;
  EXPECT_NEAR(contrastive_loss(c, c).item<double>(), std::log(4.0), 1e-6);
  EXPECT_THROW(contrastive_loss(torch::zeros({1, 8}), torch::zeros({1, 8})),
               NumericError);
}

TEST(Contrastive, MonotoneInPositiveScore) {
  // Scores = diag(s) + fixed off-diagonal noise via z_x = I, z_s = S^T.
  auto gen = diffusion::make_generator(3);
  const auto off = torch::randn({5, 5}, gen, kDouble);
  const auto eye = torch::eye(5, kDouble);
  double prev = 1e300;
  for (double s = -2.0; s <= 30.0; s += 2.0) {
    const auto scores = off * (1 - eye) + s * eye;
    const double l = contrastive_loss(eye, scores.t()).item<double>();
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-10);
}

TEST(Contrastive, JointPermutationInvariant) {
  auto gen = diffusion::make_generator(4);
  const auto zx = torch::randn({6, 5}, gen, kDouble);
  const auto zs = torch::randn({6, 5}, gen, kDouble);
  std::mt19937_64 rng(4);
  const auto idx = testing::index_tensor(testing::random_permutation(6, rng));
  EXPECT_NEAR(contrastive_loss(zx, zs).item<double>(),
              contrastive_loss(zx.index_select(0, idx), zs.index_select(0, idx))
                  .item<double>(),
              1e-12);
}

ContinuousGraph double_graph(const MolecularGraph &m) { return to_continuous(m, kDouble); }

TEST(StructureEncoder, RotationAndPermutationInvariance) {
  torch::manual_seed(9);
  StructureEncoder enc(small_config());
  enc->to(torch::kFloat64);
  torch::NoGradGuard guard;
  const auto recs = make_toy_corpus(6, 4, 2);
  std::mt19937_64 rng(9);
  const auto level = torch::full({1}, 0.3, kDouble);
  double rot = 0, rot_eps = 0, perm = 0, perm_eps = 0;
  for (const auto &r : recs) {
    const auto g = double_graph(r.graph);
    const auto out = enc(g, level);
    for (int k = 0; k < 5; ++k) {
      const auto rt = testing::rotation_tensor(testing::random_rotation(rng)).t();
      auto moved = g;
      moved.x = torch::matmul(g.x, rt) + 4.0;
      const auto mout = enc(moved, level);
      rot = std::max(rot, max_abs_diff(mout.z_x, out.z_x));
      rot_eps = std::max(rot_eps, max_abs_diff(mout.noise_hat,
                                               torch::matmul(out.noise_hat, rt)));
      const auto p = testing::random_permutation(r.graph.size(), rng);
      const auto pout = enc(testing::permute_graph(g, p), level);
      perm = std::max(perm, max_abs_diff(pout.z_x, out.z_x));
      perm_eps = std::max(perm_eps, max_abs_diff(pout.noise_hat,
                                                 out.noise_hat.index_select(
                                                     1, testing::index_tensor(p))));
    }
  }
  EXPECT_LT(rot, 1e-4);
  EXPECT_LT(rot_eps, 1e-4);
  EXPECT_LT(perm, 1e-5);
  EXPECT_LT(perm_eps, 1e-5);
}

TEST(StructureEncoder, DenoisingLossShape) {
  torch::manual_seed(10);
  StructureEncoder enc(small_config());
  const auto g = to_continuous(
      std::vector<MolecularGraph>{testing::ethanol(), testing::dimethyl_ether()});
  auto gen = diffusion::make_generator(1);
  const auto out = denoising_loss(enc, g, 0.2, gen);
  EXPECT_EQ(out.loss.dim(), 0);
  EXPECT_EQ(out.z_x.sizes(), (std::vector<int64_t>{2, 16}));
  EXPECT_GT(out.loss.item<double>(), 0.0);
}

TEST(Pretrain, StageTwoWithZeroBetasEqualsStageOne) {
  torch::manual_seed(11);
  SpecFormer spec(small_config());
  StructureEncoder enc(small_config());
  const auto recs = make_toy_corpus(8, 3, 5);
  std::vector<const MoleculeRecord *> batch;
  for (const auto &r : recs)
    batch.push_back(&r);
  PretrainOptions one;
  one.stage = 1;
  PretrainOptions two;
  two.stage = 2;
  two.beta_mpr = 0;
  two.beta_contrast = 0;
  auto g1 = diffusion::make_generator(3);
  auto g2 = diffusion::make_generator(3);
  const auto l1 = pretrain_loss(spec, enc, batch, one, g1);
  const auto l2 = pretrain_loss(spec, enc, batch, two, g2);
  EXPECT_EQ(l1.total.item<double>(), l2.total.item<double>());
  EXPECT_FALSE(l1.mpr.defined());
  EXPECT_TRUE(l2.mpr.defined());
  EXPECT_TRUE(l2.contrast.defined());
}

TEST(Pretrain, LossDecreasesOnToyCorpus) {
  torch::manual_seed(12);
  auto cfg = small_config();
  SpecFormer spec(cfg);
  StructureEncoder enc(cfg);
  const auto recs = make_toy_corpus(64, 4, 12);
  PretrainOptions opts;
  opts.steps = 200;
  opts.batch_size = 16;
  opts.learning_rate = 1e-3;
  opts.eval_every = 1000;
  opts.seed = 12;
  const auto res = pretrain(spec, enc, recs, {}, opts);
  ASSERT_EQ(res.train_loss.size(), 200u);
  // Mean of the first and last ten steps smooths batch-to-batch noise.
  double first = 0, last = 0;
  for (int k = 0; k < 10; ++k) {
    first += res.train_loss[k] / 10;
    last += res.train_loss[190 + k] / 10;
  }
  EXPECT_LT(last, 0.9 * first) << "first " << first << " last " << last;
}

TEST(Pretrain, CheckpointRoundTripAndResume) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("ds_pretrain_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  const auto recs = make_toy_corpus(12, 3, 6);
  const std::vector<MoleculeRecord> train(recs.begin(), recs.begin() + 9);
  const std::vector<MoleculeRecord> val(recs.begin() + 9, recs.end());
  PretrainOptions opts;
  opts.steps = 4;
  opts.batch_size = 4;
  opts.eval_every = 2;
  opts.out_dir = dir.string();

  torch::manual_seed(13);
  SpecFormer spec(small_config());
  StructureEncoder enc(small_config());
  const auto res = pretrain(spec, enc, train, val, opts);
  EXPECT_EQ(res.val_loss.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "last.pt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "best.pt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "pretrain_log.csv"));

  const auto meta = read_checkpoint_metadata((dir / "last.pt").string());
  EXPECT_EQ(meta.at("step").get<int>(), 4);
  EXPECT_EQ(meta.at("kind"), "specformer");
  EXPECT_TRUE(meta.contains("git_describe"));

  torch::manual_seed(99);
  SpecFormer reload(meta.at("specformer").get<SpecFormerConfig>());
  StructureEncoder reload_enc(meta.at("specformer").get<SpecFormerConfig>());
  load_checkpoint((dir / "last.pt").string(),
                  {{"specformer", reload.ptr().get()}, {"structure", reload_enc.ptr().get()}});
  std::vector<const SpectraSet *> s;
  for (const auto &r : recs)
    s.push_back(&*r.spectra);
  EXPECT_TRUE(torch::equal(embed_spectra(spec, s), embed_spectra(reload, s)));

  opts.steps = 6;
  opts.resume = true;
  const auto more = pretrain(spec, enc, train, val, opts);
  EXPECT_EQ(more.first_step, 4);
  EXPECT_EQ(more.last_step, 6);
  EXPECT_EQ(more.train_loss.size(), 2u);
  EXPECT_EQ(read_checkpoint_metadata((dir / "last.pt").string()).at("step").get<int>(), 6);
  std::filesystem::remove_all(dir);

  EXPECT_THROW(read_checkpoint_metadata((dir / "missing.pt").string()), DataError);
}

TEST(Config, JsonRoundTripAndModalities) {
  auto cfg = small_config();
  cfg.modalities = parse_modalities("raman,uv");
  cfg.patches.ir = PatchSpec{kIrLength, 100, 50};
  nlohmann::json j = cfg;
  const auto back = j.get<SpecFormerConfig>();
  EXPECT_EQ(back.modalities, (std::vector<Modality>{Modality::kUv, Modality::kRaman}));
  EXPECT_EQ(back.patches.ir.patch, 100);
  EXPECT_EQ(back.patches.ir.count(), 69);
  EXPECT_EQ(back.d_model, 16);
  EXPECT_THROW(parse_modalities("ir,ir"), ConfigError);
  EXPECT_THROW(parse_modalities("nmr"), ConfigError);
  EXPECT_THROW(parse_modalities(""), ConfigError);
  cfg.heads = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

} // namespace
} // namespace diffspectra
