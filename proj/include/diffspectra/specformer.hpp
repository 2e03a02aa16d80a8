//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_SPECFORMER_HPP_
#define DIFFSPECTRA_SPECFORMER_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "diffspectra/dmt.hpp"
#include "diffspectra/graph_tensor.hpp"
#include "diffspectra/spectra.hpp"

namespace diffspectra::specformer {

enum class Modality { kUv = 0, kIr = 1, kRaman = 2 };
inline constexpr int kNumModalities = 3;

std::string to_string(Modality m);
Modality parse_modality(const std::string &name);
// Comma-separated list, e.g. "uv,ir,raman". Order is normalised to
// uv, ir, raman; duplicates rejected.
std::vector<Modality> parse_modalities(const std::string &list);

struct PatchSpec {
  int length = 0; // L
  int patch = 0;  // P
  int stride = 0; // D

  // N = floor((L - P) / D) + 1.
  int count() const;
  void validate() const;
};

int patch_count(int length, int patch, int stride);

struct PatchConfig {
  PatchSpec uv{kUvLength, 20, 20};
  PatchSpec ir{kIrLength, 50, 50};
  PatchSpec raman{kRamanLength, 50, 50};

  const PatchSpec &operator[](Modality m) const;
};

struct SpecFormerConfig {
  int d_model = 256;
  int layers = 4;
  int heads = 8;
  int key_dim = 32; // per-head query/key width
  int ffn_dim = 512;
  PatchConfig patches;
  std::vector<Modality> modalities{Modality::kUv, Modality::kIr,
                                   Modality::kRaman};
  double mask_ratio = 0.3;

  // Structure encoder (DMT blocks with a read-only coordinate stream).
  int struct_layers = 2;
  int struct_node_dim = 64;
  int struct_edge_dim = 32;
  int struct_heads = 4;
  double coord_noise = 0.2; // std of the Gaussian coordinate noise, Angstrom

  int tokens() const;
  void validate() const;
};

void to_json(nlohmann::json &j, const SpecFormerConfig &c);
void from_json(const nlohmann::json &j, SpecFormerConfig &c);

// Splits [B, L] (or [L]) into [B, N, P]; patch j covers [jD, jD + P).
torch::Tensor patchify(const torch::Tensor &s, const PatchSpec &spec);

// Min-max normalised spectra of a batch, one [B, L] tensor per modality.
struct SpectraBatch {
  std::array<torch::Tensor, kNumModalities> s;
  int64_t batch() const { return s[0].size(0); }
};
SpectraBatch spectra_batch(const std::vector<const SpectraSet *> &spectra,
                           torch::TensorOptions opts = torch::kFloat32);
SpectraBatch spectra_batch(const std::vector<SpectraSet> &spectra,
                           torch::TensorOptions opts = torch::kFloat32);

struct MaskResult {
  torch::Tensor patches; // masked patches zeroed, [B, N, P]
  torch::Tensor mask;    // [B, N] bool, true where masked
};

// Masks floor(ratio * N) patches per row, uniformly without replacement.
MaskResult mask_patches(const torch::Tensor &patches, double ratio,
                        torch::Generator &gen);
MaskResult mask_patches(const torch::Tensor &patches, double ratio,
                        uint64_t seed);

// Mean over masked (row, patch) pairs of the squared L2 patch error.
torch::Tensor mpr_loss(const torch::Tensor &recon, const torch::Tensor &original,
                       const torch::Tensor &mask);

// mpr_loss per modality, summed over modalities.
torch::Tensor mpr_loss(const std::vector<torch::Tensor> &recon,
                       const std::vector<torch::Tensor> &original,
                       const std::vector<torch::Tensor> &mask);

// Symmetric InfoNCE with inner-product scores; negatives are the other
// in-batch pairs. Mean of the structure->spectra and spectra->structure
// cross-entropies.
torch::Tensor contrastive_loss(const torch::Tensor &z_x, const torch::Tensor &z_s);

// Linear patch projection plus learnable position table: p W + W_pos.
class PatchEmbeddingImpl : public torch::nn::Module {
public:
  PatchEmbeddingImpl(int patch, int count, int d_model);
  torch::Tensor forward(const torch::Tensor &patches); // [B,N,P] -> [B,N,d]

  torch::nn::Linear proj{nullptr};
  torch::Tensor pos;
};
TORCH_MODULE(PatchEmbedding);

// Multi-head self-attention; head outputs are concatenated to width d.
class SelfAttentionImpl : public torch::nn::Module {
public:
  SelfAttentionImpl(int d_model, int heads, int key_dim);
  torch::Tensor forward(const torch::Tensor &z);
  torch::Tensor last_weights; // [B, H, T, T]

private:
  int heads_, key_dim_, d_model_;
  torch::nn::Linear wq_{nullptr}, wk_{nullptr}, wv_{nullptr};
};
TORCH_MODULE(SelfAttention);

// z <- BN(z + MHA(z)); z <- BN(z + FFN(z)), batch norm over the model width
// with statistics across batch and tokens.
class EncoderLayerImpl : public torch::nn::Module {
public:
  EncoderLayerImpl(int d_model, int heads, int key_dim, int ffn_dim);
  torch::Tensor forward(const torch::Tensor &z);

  SelfAttention attention{nullptr};

private:
  torch::nn::BatchNorm1d norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear ffn1_{nullptr}, ffn2_{nullptr};
};
TORCH_MODULE(EncoderLayer);

struct EncodeOutput {
  torch::Tensor tokens; // [B, T, d]
  torch::Tensor z_s;    // [B, d]
};

class SpecFormerImpl : public torch::nn::Module {
public:
  explicit SpecFormerImpl(const SpecFormerConfig &cfg);

  // Patch embedding of every active modality, concatenated in config
  // order. `patches` holds one [B, N_i, P_i] tensor per active modality.
  torch::Tensor embed(const std::vector<torch::Tensor> &patches);
  std::vector<torch::Tensor> patchify_batch(const SpectraBatch &batch) const;

  EncodeOutput encode_patches(const std::vector<torch::Tensor> &patches);
  EncodeOutput encode(const SpectraBatch &batch);

  // Per-modality reconstructions [B, N_i, P_i] from encoder tokens.
  std::vector<torch::Tensor> reconstruct(const torch::Tensor &tokens);

  const SpecFormerConfig &config() const { return cfg_; }

  std::vector<PatchEmbedding> embeddings;
  std::vector<EncoderLayer> layers;
  std::vector<torch::nn::Linear> recon_heads;
  torch::nn::Linear projection{nullptr};

private:
  SpecFormerConfig cfg_;
};
TORCH_MODULE(SpecFormer);

struct StructureOutput {
  torch::Tensor z_x;       // [B, d]
  torch::Tensor noise_hat; // [B, N, 3]
};

// Invariant graph encoder over DMT blocks (coordinates read-only) with an
// equivariant noise head sum_j (x_i - x_j)/|x_i - x_j| * s_ij.
class StructureEncoderImpl : public torch::nn::Module {
public:
  explicit StructureEncoderImpl(const SpecFormerConfig &cfg);

  // g holds one-hot H/A and (possibly noisy) coordinates; noise_level [B].
  StructureOutput forward(const ContinuousGraph &g,
                          const torch::Tensor &noise_level);

  const dmt::DMTConfig &block_config() const { return block_cfg_; }

private:
  dmt::DMTConfig block_cfg_;
  int d_model_;
  dmt::ConditionEmbedding condition_{nullptr};
  torch::nn::Linear node_in_{nullptr}, edge_in_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::Linear pool_{nullptr};
  dmt::FeedForward noise_head_{nullptr};
};
TORCH_MODULE(StructureEncoder);

struct DenoisingBatch {
  torch::Tensor loss;    // scalar
  torch::Tensor z_x;     // [B, d]
};

// Coordinate-denoising objective on equally sized molecules: adds centred
// Gaussian noise of std `sigma` to X and regresses it (mean over atoms of
// the squared error).
DenoisingBatch denoising_loss(StructureEncoder &enc, const ContinuousGraph &g0,
                              double sigma, torch::Generator &gen);

} // namespace diffspectra::specformer

#endif // DIFFSPECTRA_SPECFORMER_HPP_
