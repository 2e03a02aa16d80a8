//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/specformer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "diffspectra/diffusion.hpp"
#include "diffspectra/error.hpp"

namespace diffspectra::specformer {

namespace F = torch::nn::functional;

std::string to_string(Modality m) {
  switch (m) {
  case Modality::kUv:
    return "uv";
  case Modality::kIr:
    return "ir";
  case Modality::kRaman:
    return "raman";
  }
  return "?";
}

Modality parse_modality(const std::string &name) {
  if (name == "uv")
    return Modality::kUv;
  if (name == "ir")
    return Modality::kIr;
  if (name == "raman")
    return Modality::kRaman;
  throw ConfigError("unknown modality '" + name + "' (expected uv, ir, raman)");
}

std::vector<Modality> parse_modalities(const std::string &list) {
  std::vector<Modality> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty())
      continue;
    const auto m = parse_modality(item);
    if (std::find(out.begin(), out.end(), m) != out.end())
      throw ConfigError("modality '" + item + "' listed twice");
    out.push_back(m);
  }
  if (out.empty())
    throw ConfigError("at least one modality is required");
  std::sort(out.begin(), out.end());
  return out;
}

int patch_count(int length, int patch, int stride) {
  return (length - patch) / stride + 1;
}

int PatchSpec::count() const { return patch_count(length, patch, stride); }

void PatchSpec::validate() const {
  if (!(stride > 0 && stride <= patch && patch <= length))
    throw ConfigError("patch config needs 0 < stride <= patch <= length (got L=" +
                      std::to_string(length) + ", P=" + std::to_string(patch) +
                      ", D=" + std::to_string(stride) + ")");
}

const PatchSpec &PatchConfig::operator[](Modality m) const {
  switch (m) {
  case Modality::kUv:
    return uv;
  case Modality::kIr:
    return ir;
  default:
    return raman;
  }
}

int SpecFormerConfig::tokens() const {
  int t = 0;
  for (auto m : modalities)
    t += patches[m].count();
  return t;
}

void SpecFormerConfig::validate() const {
  if (d_model < 1 || layers < 1 || heads < 1 || key_dim < 1 || ffn_dim < 1)
    throw ConfigError("SpecFormer config: widths must be positive");
  if (d_model % heads != 0)
    throw ConfigError("SpecFormer config: d_model must be divisible by heads");
  if (modalities.empty())
    throw ConfigError("SpecFormer config: no modalities");
  for (auto m : modalities)
    patches[m].validate();
  if (patches.uv.length != kUvLength || patches.ir.length != kIrLength ||
      patches.raman.length != kRamanLength)
    throw ConfigError("SpecFormer config: patch lengths must match the spectra grids");
  if (!(mask_ratio >= 0 && mask_ratio < 1))
    throw ConfigError("SpecFormer config: mask_ratio must be in [0, 1)");
  if (struct_layers < 1 || struct_node_dim < 1 || struct_edge_dim < 1 ||
      struct_heads < 1 || struct_node_dim % struct_heads != 0)
    throw ConfigError("SpecFormer config: bad structure encoder widths");
  if (!(coord_noise > 0))
    throw ConfigError("SpecFormer config: coord_noise must be positive");
}

namespace {

nlohmann::json patch_json(const PatchSpec &p) {
  return {{"patch", p.patch}, {"stride", p.stride}};
}

PatchSpec patch_from(const nlohmann::json &j, const char *key, PatchSpec d) {
  if (!j.contains(key))
    return d;
  d.patch = j[key].value("patch", d.patch);
  d.stride = j[key].value("stride", d.stride);
  return d;
}

} // namespace

void to_json(nlohmann::json &j, const SpecFormerConfig &c) {
  std::vector<std::string> mods;
  for (auto m : c.modalities)
    mods.push_back(to_string(m));
  j = nlohmann::json{{"d_model", c.d_model},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"key_dim", c.key_dim},
                     {"ffn_dim", c.ffn_dim},
                     {"patches",
                      {{"uv", patch_json(c.patches.uv)},
                       {"ir", patch_json(c.patches.ir)},
                       {"raman", patch_json(c.patches.raman)}}},
                     {"modalities", mods},
                     {"mask_ratio", c.mask_ratio},
                     {"struct_layers", c.struct_layers},
                     {"struct_node_dim", c.struct_node_dim},
                     {"struct_edge_dim", c.struct_edge_dim},
                     {"struct_heads", c.struct_heads},
                     {"coord_noise", c.coord_noise}};
}

void from_json(const nlohmann::json &j, SpecFormerConfig &c) {
  SpecFormerConfig d;
  c.d_model = j.value("d_model", d.d_model);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.key_dim = j.value("key_dim", d.key_dim);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  const auto patches = j.value("patches", nlohmann::json::object());
  c.patches.uv = patch_from(patches, "uv", d.patches.uv);
  c.patches.ir = patch_from(patches, "ir", d.patches.ir);
  c.patches.raman = patch_from(patches, "raman", d.patches.raman);
  c.modalities = d.modalities;
  if (j.contains("modalities")) {
    std::string list;
    for (const auto &m : j["modalities"])
      list += m.get<std::string>() + ",";
    c.modalities = parse_modalities(list);
  }
  c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
  c.struct_layers = j.value("struct_layers", d.struct_layers);
  c.struct_node_dim = j.value("struct_node_dim", d.struct_node_dim);
  c.struct_edge_dim = j.value("struct_edge_dim", d.struct_edge_dim);
  c.struct_heads = j.value("struct_heads", d.struct_heads);
  c.coord_noise = j.value("coord_noise", d.coord_noise);
}

torch::Tensor patchify(const torch::Tensor &s, const PatchSpec &spec) {
  spec.validate();
  const auto x = s.dim() == 1 ? s.unsqueeze(0) : s;
  if (x.size(-1) != spec.length)
    throw DataError("patchify: spectrum length " + std::to_string(x.size(-1)) +
                    " does not match the patch config (" +
                    std::to_string(spec.length) + ")");
  return x.unfold(-1, spec.patch, spec.stride);
}

SpectraBatch spectra_batch(const std::vector<const SpectraSet *> &spectra,
                           torch::TensorOptions opts) {
  const int64_t b = static_cast<int64_t>(spectra.size());
  SpectraBatch out;
  const int lengths[kNumModalities] = {kUvLength, kIrLength, kRamanLength};
  for (int m = 0; m < kNumModalities; ++m)
    out.s[m] = torch::empty({b, lengths[m]}, torch::kFloat64);
  for (int64_t k = 0; k < b; ++k) {
    const auto n = normalize_minmax(*spectra[k]);
    const std::vector<double> *v[kNumModalities] = {&n.uv, &n.ir, &n.raman};
    for (int m = 0; m < kNumModalities; ++m)
      std::copy(v[m]->begin(), v[m]->end(), out.s[m][k].data_ptr<double>());
  }
  for (auto &t : out.s)
    t = t.to(opts);
  return out;
}

SpectraBatch spectra_batch(const std::vector<SpectraSet> &spectra,
                           torch::TensorOptions opts) {
  std::vector<const SpectraSet *> ptrs;
  for (const auto &s : spectra)
    ptrs.push_back(&s);
  return spectra_batch(ptrs, opts);
}

MaskResult mask_patches(const torch::Tensor &patches, double ratio,
                        torch::Generator &gen) {
  if (!(ratio >= 0 && ratio < 1))
    throw ConfigError("mask ratio must be in [0, 1)");
  const int64_t b = patches.size(0), n = patches.size(1);
  const int64_t k = static_cast<int64_t>(std::floor(ratio * n));
  auto mask = torch::zeros({b, n}, torch::kBool);
  for (int64_t row = 0; row < b; ++row) {
    if (k == 0)
      break;
    const auto order = torch::randperm(n, gen, torch::kLong);
    mask[row].index_put_({order.narrow(0, 0, k)}, true);
  }
  return {patches.masked_fill(mask.unsqueeze(-1), 0.0), mask};
}

MaskResult mask_patches(const torch::Tensor &patches, double ratio,
                        uint64_t seed) {
  auto gen = diffusion::make_generator(seed);
  return mask_patches(patches, ratio, gen);
}

torch::Tensor mpr_loss(const torch::Tensor &recon, const torch::Tensor &original,
                       const torch::Tensor &mask) {
  if (recon.sizes() != original.sizes())
    throw NumericError("mpr_loss: reconstruction/original shape mismatch");
  const auto per_patch = (recon - original).pow(2).sum(-1); // [B, N]
  const auto m = mask.to(per_patch.dtype());
  const auto count = m.sum();
  if (count.item<double>() == 0)
    return torch::zeros({}, recon.options());
  return (per_patch * m).sum() / count;
}

torch::Tensor mpr_loss(const std::vector<torch::Tensor> &recon,
                       const std::vector<torch::Tensor> &original,
                       const std::vector<torch::Tensor> &mask) {
  if (recon.size() != original.size() || recon.size() != mask.size() ||
      recon.empty())
    throw NumericError("mpr_loss: one reconstruction per modality required");
  auto total = mpr_loss(recon[0], original[0], mask[0]);
  for (std::size_t i = 1; i < recon.size(); ++i)
    total = total + mpr_loss(recon[i], original[i], mask[i]);
  return total;
}

torch::Tensor contrastive_loss(const torch::Tensor &z_x, const torch::Tensor &z_s) {
  if (z_x.sizes() != z_s.sizes() || z_x.dim() != 2 || z_x.size(0) < 2)
    throw NumericError("contrastive_loss needs two [B, d] batches with B >= 2");
  const auto scores = torch::matmul(z_x, z_s.t()); // [B, B]
  const auto target = torch::arange(z_x.size(0), torch::kLong);
  return 0.5 * (F::cross_entropy(scores, target) +
                F::cross_entropy(scores.t(), target));
}

// ---------------------------------------------------------------------------

PatchEmbeddingImpl::PatchEmbeddingImpl(int patch, int count, int d_model) {
  proj = register_module("proj", torch::nn::Linear(patch, d_model));
  pos = register_parameter("pos", torch::randn({count, d_model}) * 0.02);
}

torch::Tensor PatchEmbeddingImpl::forward(const torch::Tensor &patches) {
  return proj(patches) + pos.to(patches.dtype());
}

SelfAttentionImpl::SelfAttentionImpl(int d_model, int heads, int key_dim)
    : heads_(heads), key_dim_(key_dim), d_model_(d_model) {
  using torch::nn::LinearOptions;
  wq_ = register_module(
      "wq", torch::nn::Linear(LinearOptions(d_model, heads * key_dim).bias(false)));
  wk_ = register_module(
      "wk", torch::nn::Linear(LinearOptions(d_model, heads * key_dim).bias(false)));
  wv_ = register_module(
      "wv", torch::nn::Linear(LinearOptions(d_model, d_model).bias(false)));
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor &z) {
  const int64_t b = z.size(0), t = z.size(1);
  const int64_t dv = d_model_ / heads_;
  auto q = wq_(z).view({b, t, heads_, key_dim_}).transpose(1, 2);
  auto k = wk_(z).view({b, t, heads_, key_dim_}).transpose(1, 2);
  auto v = wv_(z).view({b, t, heads_, dv}).transpose(1, 2);
  auto w = torch::softmax(torch::matmul(q, k.transpose(-1, -2)) /
                              std::sqrt(static_cast<double>(key_dim_)),
                          -1);
  last_weights = w.detach();
  return torch::matmul(w, v).transpose(1, 2).reshape({b, t, d_model_});
}

EncoderLayerImpl::EncoderLayerImpl(int d_model, int heads, int key_dim,
                                   int ffn_dim) {
  attention = register_module("attention", SelfAttention(d_model, heads, key_dim));
  norm1_ = register_module("norm1", torch::nn::BatchNorm1d(d_model));
  norm2_ = register_module("norm2", torch::nn::BatchNorm1d(d_model));
  ffn1_ = register_module("ffn1", torch::nn::Linear(d_model, ffn_dim));
  ffn2_ = register_module("ffn2", torch::nn::Linear(ffn_dim, d_model));
}

namespace {

torch::Tensor token_norm(torch::nn::BatchNorm1d &bn, const torch::Tensor &z) {
  const auto shape = z.sizes().vec();
  return bn(z.reshape({-1, shape.back()})).view(shape);
}

} // namespace

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor &z) {
  auto z1 = token_norm(norm1_, z + attention(z));
  return token_norm(norm2_, z1 + ffn2_(F::gelu(ffn1_(z1))));
}

SpecFormerImpl::SpecFormerImpl(const SpecFormerConfig &cfg) : cfg_(cfg) {
  cfg_.validate();
  for (auto m : cfg_.modalities) {
    const auto &p = cfg_.patches[m];
    embeddings.push_back(register_module(
        "embed_" + to_string(m), PatchEmbedding(p.patch, p.count(), cfg_.d_model)));
    recon_heads.push_back(register_module(
        "recon_" + to_string(m), torch::nn::Linear(cfg_.d_model, p.patch)));
  }
  for (int l = 0; l < cfg_.layers; ++l)
    layers.push_back(register_module(
        "layer" + std::to_string(l),
        EncoderLayer(cfg_.d_model, cfg_.heads, cfg_.key_dim, cfg_.ffn_dim)));
  projection = register_module(
      "projection", torch::nn::Linear(cfg_.tokens() * cfg_.d_model, cfg_.d_model));
}

std::vector<torch::Tensor>
SpecFormerImpl::patchify_batch(const SpectraBatch &batch) const {
  std::vector<torch::Tensor> out;
  for (auto m : cfg_.modalities)
    out.push_back(patchify(batch.s[static_cast<int>(m)], cfg_.patches[m]));
  return out;
}

torch::Tensor SpecFormerImpl::embed(const std::vector<torch::Tensor> &patches) {
  if (patches.size() != embeddings.size())
    throw NumericError("SpecFormer: expected one patch tensor per modality");
  std::vector<torch::Tensor> tokens;
  for (std::size_t i = 0; i < patches.size(); ++i)
    tokens.push_back(embeddings[i](patches[i]));
  return torch::cat(tokens, 1);
}

EncodeOutput SpecFormerImpl::encode_patches(const std::vector<torch::Tensor> &patches) {
  auto z = embed(patches);
  for (auto &layer : layers)
    z = layer(z);
  return {z, projection(z.flatten(1))};
}

EncodeOutput SpecFormerImpl::encode(const SpectraBatch &batch) {
  return encode_patches(patchify_batch(batch));
}

std::vector<torch::Tensor> SpecFormerImpl::reconstruct(const torch::Tensor &tokens) {
  std::vector<torch::Tensor> out;
  int64_t offset = 0;
  for (std::size_t i = 0; i < cfg_.modalities.size(); ++i) {
    const int64_t n = cfg_.patches[cfg_.modalities[i]].count();
    out.push_back(recon_heads[i](tokens.narrow(1, offset, n)));
    offset += n;
  }
  return out;
}

// ---------------------------------------------------------------------------

StructureEncoderImpl::StructureEncoderImpl(const SpecFormerConfig &cfg)
    : d_model_(cfg.d_model) {
  block_cfg_.layers = cfg.struct_layers;
  block_cfg_.node_dim = cfg.struct_node_dim;
  block_cfg_.message_dim = cfg.struct_node_dim;
  block_cfg_.edge_dim = cfg.struct_edge_dim;
  block_cfg_.heads = cfg.struct_heads;
  block_cfg_.key_dim = std::max(1, cfg.struct_node_dim / cfg.struct_heads);
  block_cfg_.n_rbf = 16;
  block_cfg_.time_dim = 16;
  block_cfg_.cond_dim = 0;
  block_cfg_.validate();
  condition_ = register_module("condition", dmt::ConditionEmbedding(block_cfg_));
  node_in_ = register_module(
      "node_in", torch::nn::Linear(kAtomFeatureDim, block_cfg_.node_dim));
  edge_in_ = register_module(
      "edge_in", torch::nn::Linear(kBondClasses, block_cfg_.edge_dim));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int l = 0; l < block_cfg_.layers; ++l)
    blocks_->push_back(dmt::Block(block_cfg_, /*update_coords=*/false));
  pool_ = register_module("pool", torch::nn::Linear(block_cfg_.node_dim, d_model_));
  noise_head_ = register_module(
      "noise_head",
      dmt::FeedForward(block_cfg_.node_dim + block_cfg_.edge_dim + block_cfg_.n_rbf,
                       block_cfg_.edge_dim, 1));
}

StructureOutput StructureEncoderImpl::forward(const ContinuousGraph &g,
                                              const torch::Tensor &noise_level) {
  const auto x = center_x(g.x);
  const auto c = condition_(torch::log(noise_level.to(g.h.dtype())), torch::Tensor());
  dmt::Streams s{node_in_(g.h), edge_in_(g.a), x};
  for (const auto &m : *blocks_)
    s = m->as<dmt::BlockImpl>()->forward(s, c, torch::Tensor());
  const auto z_x = pool_(s.h.mean(1));

  const int64_t n = x.size(1);
  auto diff = x.unsqueeze(2) - x.unsqueeze(1);
  auto dist = dmt::pairwise_distances(x);
  auto pair = torch::cat({s.h.unsqueeze(2) + s.h.unsqueeze(1), s.a,
                          dmt::rbf_encode(dist, block_cfg_.n_rbf, block_cfg_.r_max)},
                         -1);
  auto weight = noise_head_(pair); // [B,N,N,1]
  auto off_diag = (1.0 - torch::eye(n, x.options())).view({1, n, n, 1});
  auto eps_hat = ((diff / dist.unsqueeze(-1)) * weight * off_diag).sum(2);
  return {z_x, eps_hat};
}

DenoisingBatch denoising_loss(StructureEncoder &enc, const ContinuousGraph &g0,
                              double sigma, torch::Generator &gen) {
  const int64_t b = g0.batch();
  auto eps = center_x(torch::randn(g0.x.sizes(), gen, g0.x.options()));
  ContinuousGraph noisy{g0.h, g0.a, g0.x + sigma * eps};
  const auto out = enc(noisy, torch::full({b}, sigma, g0.x.options()));
  const auto loss = (out.noise_hat - eps).pow(2).sum(-1).mean();
  return {loss, out.z_x};
}

} // namespace diffspectra::specformer
