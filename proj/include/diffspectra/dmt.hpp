//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_DMT_HPP_
#define DIFFSPECTRA_DMT_HPP_

#include <tuple>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "diffspectra/graph_tensor.hpp"

namespace diffspectra::dmt {

struct DMTConfig {
  int layers = 6;
  int node_dim = 128;    // d_h
  int edge_dim = 64;     // d_a
  int message_dim = 128; // d_m; equals d_h so Scale(M, C) + H type-checks
  int heads = 8;
  int key_dim = 16; // per-head query/key width
  int n_rbf = 32;
  double r_max = 10.0;
  double mask_cutoff = 5.0;
  int time_dim = 64;  // sinusoidal features and projected time embedding
  int cond_dim = 0;   // width of the spectra embedding z_s (0: unconditional)
  double gamma_init = 0.1;

  int condition_width() const { return time_dim + cond_dim; }
  void validate() const;
};

void to_json(nlohmann::json &j, const DMTConfig &c);
void from_json(const nlohmann::json &j, DMTConfig &c);

// Sinusoidal features of a scalar per batch element: [B] -> [B, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor &x, int dim);

// Gaussian radial basis on `n` equispaced centres in [0, r_max] with width
// equal to the spacing: [...] -> [..., n].
torch::Tensor rbf_encode(const torch::Tensor &d, int n, double r_max);

// Pairwise distances [B, N, N] from coordinates [B, N, 3]. `eps` keeps the
// gradient finite on the diagonal.
torch::Tensor pairwise_distances(const torch::Tensor &x, double eps = 1e-10);

// (1 + scale) * LN(h) + bias, LayerNorm without affine over the last axis.
torch::Tensor adaln(const torch::Tensor &h, const torch::Tensor &scale,
                    const torch::Tensor &bias);
// scale * h.
torch::Tensor scale_mod(const torch::Tensor &h, const torch::Tensor &scale);

// Reshapes a per-molecule modulation [B, d] to broadcast over h.
torch::Tensor broadcast_to_rows(const torch::Tensor &m, const torch::Tensor &h);

// Condition vector C = [proj(sinusoid(log SNR)), z_s].
class ConditionEmbeddingImpl : public torch::nn::Module {
public:
  explicit ConditionEmbeddingImpl(const DMTConfig &cfg);
  torch::Tensor forward(const torch::Tensor &log_snr, const torch::Tensor &z_s);

private:
  int time_dim_;
  int cond_dim_;
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ConditionEmbedding);

// Position-wise two-layer feed-forward network.
class FeedForwardImpl : public torch::nn::Module {
public:
  FeedForwardImpl(int in, int hidden, int out);
  torch::Tensor forward(const torch::Tensor &x);

private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(FeedForward);

struct AttentionOutput {
  torch::Tensor messages; // [B, N, d_m]
  torch::Tensor weights;  // [B, heads, N, N], rows sum to one
};

// Relational multi-head attention. Logits are the scaled query-key product
// gated by tanh(phi0(rel_ij)) per head; values are gated elementwise by
// tanh(phi1(rel_ij)) before aggregation.
class RelationalAttentionImpl : public torch::nn::Module {
public:
  RelationalAttentionImpl(int node_dim, int relation_dim, int heads,
                          int key_dim, int message_dim);
  AttentionOutput forward(const torch::Tensor &h, const torch::Tensor &rel,
                          const torch::Tensor &mask);

  torch::nn::Linear phi0{nullptr}, phi1{nullptr};

private:
  int heads_, key_dim_, message_dim_;
  torch::nn::Linear wq_{nullptr}, wk_{nullptr}, wv_{nullptr};
};
TORCH_MODULE(RelationalAttention);

struct Streams {
  torch::Tensor h; // [B, N, d_h]
  torch::Tensor a; // [B, N, N, d_a]
  torch::Tensor x; // [B, N, 3]
};

// One equivariant block updating node, edge and coordinate streams.
class BlockImpl : public torch::nn::Module {
public:
  BlockImpl(const DMTConfig &cfg, bool update_coords = true);

  Streams forward(const Streams &in, const torch::Tensor &cond,
                  const torch::Tensor &mask);

  // Geometry-aware relation [A_ij; |x_i - x_j|; rbf(|x_i - x_j|)].
  torch::Tensor relation(const torch::Tensor &a, const torch::Tensor &x) const;

  // Pair features e_ij = AdaLN(W2 [h_i, h_j, a_ij, d_ij], C); exposed for
  // the structure encoder's vector-field head.
  torch::Tensor pair_features(const torch::Tensor &h, const torch::Tensor &a,
                              const torch::Tensor &dist,
                              const torch::Tensor &mod_scale,
                              const torch::Tensor &mod_bias);

  RelationalAttention attention{nullptr};
  FeedForward coord_gate{nullptr};
  torch::Tensor gamma;
  torch::Tensor last_attention; // set by forward, for inspection

private:
  DMTConfig cfg_;
  bool update_coords_;
  torch::nn::Linear modulation_{nullptr};
  torch::nn::Linear w1_{nullptr};
  torch::nn::Linear w2_{nullptr};
  FeedForward node_ffn_{nullptr}, edge_ffn_{nullptr};
};
TORCH_MODULE(Block);

struct InitialEmbedding {
  Streams streams;
  torch::Tensor mask; // [B, N, N] bool
};

// Diffusion Molecule Transformer: predicts the clean graph from a noisy one.
class DMTImpl : public torch::nn::Module {
public:
  explicit DMTImpl(const DMTConfig &cfg);

  InitialEmbedding init_embeddings(const ContinuousGraph &g_t,
                                   const ContinuousGraph &self_cond);

  // `t` [B] diffusion times are supplied as log SNR; z_s [B, cond_dim] or
  // undefined when cond_dim == 0.
  ContinuousGraph forward(const ContinuousGraph &g_t,
                          const ContinuousGraph &self_cond,
                          const torch::Tensor &log_snr,
                          const torch::Tensor &z_s);

  const DMTConfig &config() const { return cfg_; }

  ConditionEmbedding condition{nullptr};
  torch::nn::ModuleList blocks{nullptr};

private:
  DMTConfig cfg_;
  torch::nn::Linear node_in_{nullptr}, edge_in_{nullptr};
  torch::nn::LayerNorm node_norm_{nullptr}, edge_norm_{nullptr};
  torch::nn::Linear node_out_{nullptr}, edge_out_{nullptr};
};
TORCH_MODULE(DMT);

} // namespace diffspectra::dmt

#endif // DIFFSPECTRA_DMT_HPP_
