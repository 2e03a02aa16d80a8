//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/dmt.hpp"

#include <cmath>
#include <string>

#include "diffspectra/error.hpp"

namespace diffspectra::dmt {

namespace F = torch::nn::functional;

void DMTConfig::validate() const {
  if (layers < 1 || node_dim < 1 || edge_dim < 1 || message_dim < 1 ||
      heads < 1 || key_dim < 1 || n_rbf < 2 || time_dim < 2 || cond_dim < 0)
    throw ConfigError("DMT config: all widths must be positive");
  if (message_dim % heads != 0)
    throw ConfigError("DMT config: message_dim must be divisible by heads");
  if (message_dim != node_dim)
    throw ConfigError("DMT config: message_dim must equal node_dim");
  if (time_dim % 2 != 0)
    throw ConfigError("DMT config: time_dim must be even");
  if (!(r_max > 0) || !(mask_cutoff > 0))
    throw ConfigError("DMT config: r_max and mask_cutoff must be positive");
}

void to_json(nlohmann::json &j, const DMTConfig &c) {
  j = nlohmann::json{{"layers", c.layers},       {"node_dim", c.node_dim},
                     {"edge_dim", c.edge_dim},   {"message_dim", c.message_dim},
                     {"heads", c.heads},         {"key_dim", c.key_dim},
                     {"n_rbf", c.n_rbf},         {"r_max", c.r_max},
                     {"mask_cutoff", c.mask_cutoff},
                     {"time_dim", c.time_dim},   {"cond_dim", c.cond_dim},
                     {"gamma_init", c.gamma_init}};
}

void from_json(const nlohmann::json &j, DMTConfig &c) {
  DMTConfig d;
  c.layers = j.value("layers", d.layers);
  c.node_dim = j.value("node_dim", d.node_dim);
  c.edge_dim = j.value("edge_dim", d.edge_dim);
  c.message_dim = j.value("message_dim", c.node_dim);
  c.heads = j.value("heads", d.heads);
  c.key_dim = j.value("key_dim", d.key_dim);
  c.n_rbf = j.value("n_rbf", d.n_rbf);
  c.r_max = j.value("r_max", d.r_max);
  c.mask_cutoff = j.value("mask_cutoff", d.mask_cutoff);
  c.time_dim = j.value("time_dim", d.time_dim);
  c.cond_dim = j.value("cond_dim", d.cond_dim);
  c.gamma_init = j.value("gamma_init", d.gamma_init);
}

torch::Tensor sinusoidal_embedding(const torch::Tensor &x, int dim) {
  const int half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, x.options()) /
                          static_cast<double>(half));
  auto arg = x.unsqueeze(-1) * freqs;
  return torch::cat({torch::sin(arg), torch::cos(arg)}, -1);
}

torch::Tensor rbf_encode(const torch::Tensor &d, int n, double r_max) {
  const double spacing = r_max / (n - 1);
  auto centers = torch::linspace(0.0, r_max, n, d.options());
  auto z = (d.unsqueeze(-1) - centers) / spacing;
  return torch::exp(-0.5 * z * z);
}

torch::Tensor pairwise_distances(const torch::Tensor &x, double eps) {
  auto diff = x.unsqueeze(2) - x.unsqueeze(1);
  return torch::sqrt(diff.pow(2).sum(-1) + eps);
}

torch::Tensor adaln(const torch::Tensor &h, const torch::Tensor &scale,
                    const torch::Tensor &bias) {
  auto ln = F::layer_norm(h, F::LayerNormFuncOptions({h.size(-1)}).eps(1e-6));
  return (1.0 + scale) * ln + bias;
}

torch::Tensor scale_mod(const torch::Tensor &h, const torch::Tensor &scale) {
  return scale * h;
}

torch::Tensor broadcast_to_rows(const torch::Tensor &m, const torch::Tensor &h) {
  std::vector<int64_t> shape(h.dim(), 1);
  shape.front() = m.size(0);
  shape.back() = m.size(-1);
  return m.view(shape);
}

// ---------------------------------------------------------------------------

ConditionEmbeddingImpl::ConditionEmbeddingImpl(const DMTConfig &cfg)
    : time_dim_(cfg.time_dim), cond_dim_(cfg.cond_dim) {
  fc1_ = register_module("fc1", torch::nn::Linear(time_dim_, time_dim_));
  fc2_ = register_module("fc2", torch::nn::Linear(time_dim_, time_dim_));
}

torch::Tensor ConditionEmbeddingImpl::forward(const torch::Tensor &log_snr,
                                              const torch::Tensor &z_s) {
  auto t = fc2_(F::silu(fc1_(sinusoidal_embedding(log_snr, time_dim_))));
  if (cond_dim_ == 0)
    return t;
  if (!z_s.defined() || z_s.size(-1) != cond_dim_ || z_s.size(0) != t.size(0))
    throw NumericError("condition embedding: z_s must be [B, " +
                       std::to_string(cond_dim_) + "]");
  return torch::cat({t, z_s.to(t.dtype())}, -1);
}

FeedForwardImpl::FeedForwardImpl(int in, int hidden, int out) {
  fc1_ = register_module("fc1", torch::nn::Linear(in, hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(hidden, out));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor &x) {
  return fc2_(F::silu(fc1_(x)));
}

// ---------------------------------------------------------------------------

RelationalAttentionImpl::RelationalAttentionImpl(int node_dim, int relation_dim,
                                                 int heads, int key_dim,
                                                 int message_dim)
    : heads_(heads), key_dim_(key_dim), message_dim_(message_dim) {
  using torch::nn::LinearOptions;
  wq_ = register_module(
      "wq", torch::nn::Linear(LinearOptions(node_dim, heads * key_dim).bias(false)));
  wk_ = register_module(
      "wk", torch::nn::Linear(LinearOptions(node_dim, heads * key_dim).bias(false)));
  wv_ = register_module(
      "wv", torch::nn::Linear(LinearOptions(node_dim, message_dim).bias(false)));
  phi0 = register_module("phi0", torch::nn::Linear(relation_dim, heads));
  phi1 = register_module("phi1", torch::nn::Linear(relation_dim, message_dim));
}

AttentionOutput RelationalAttentionImpl::forward(const torch::Tensor &h,
                                                 const torch::Tensor &rel,
                                                 const torch::Tensor &mask) {
  const int64_t b = h.size(0), n = h.size(1);
  const int64_t dv = message_dim_ / heads_;
  auto q = wq_(h).view({b, n, heads_, key_dim_}).permute({0, 2, 1, 3});
  auto k = wk_(h).view({b, n, heads_, key_dim_}).permute({0, 2, 1, 3});
  auto v = wv_(h).view({b, n, heads_, dv}).permute({0, 2, 1, 3});
  auto gate0 = torch::tanh(phi0(rel)).permute({0, 3, 1, 2}); // [B,H,N,N]
  auto logits = gate0 * torch::matmul(q, k.transpose(-1, -2)) /
                std::sqrt(static_cast<double>(key_dim_));
  if (mask.defined())
    logits = logits.masked_fill(mask.logical_not().unsqueeze(1),
                                -std::numeric_limits<double>::infinity());
  auto weights = torch::softmax(logits, -1);
  auto gate1 = torch::tanh(phi1(rel))
                   .view({b, n, n, heads_, dv})
                   .permute({0, 3, 1, 2, 4}); // [B,H,N,N,dv]
  auto out = torch::einsum("bhij,bhijd,bhjd->bhid", {weights, gate1, v});
  return {out.permute({0, 2, 1, 3}).reshape({b, n, message_dim_}), weights};
}

// ---------------------------------------------------------------------------

BlockImpl::BlockImpl(const DMTConfig &cfg, bool update_coords)
    : cfg_(cfg), update_coords_(update_coords) {
  const int dh = cfg.node_dim, da = cfg.edge_dim;
  const int rel_dim = da + 1 + cfg.n_rbf;
  attention = register_module(
      "attention", RelationalAttention(dh, rel_dim, cfg.heads, cfg.key_dim,
                                       cfg.message_dim));
  // Scale(M), AdaLN(H), Scale(FFN(H)); Scale(A_hat), AdaLN(A), Scale(FFN(A));
  // AdaLN(e).
  modulation_ = register_module(
      "modulation", torch::nn::Linear(cfg.condition_width(), 4 * dh + 6 * da));
  w1_ = register_module(
      "w1", torch::nn::Linear(
                torch::nn::LinearOptions(cfg.message_dim, da).bias(false)));
  node_ffn_ = register_module("node_ffn", FeedForward(dh, 2 * dh, dh));
  edge_ffn_ = register_module("edge_ffn", FeedForward(da, 2 * da, da));
  w2_ = register_module("w2", torch::nn::Linear(2 * dh + da + 1, da));
  coord_gate = register_module("coord_gate", FeedForward(da, da, 1));
  gamma = register_parameter(
      "gamma", torch::full({1}, cfg.gamma_init, torch::kFloat32));
}

torch::Tensor BlockImpl::relation(const torch::Tensor &a,
                                  const torch::Tensor &x) const {
  auto dist = pairwise_distances(x);
  return torch::cat(
      {a, dist.unsqueeze(-1), rbf_encode(dist, cfg_.n_rbf, cfg_.r_max)}, -1);
}

torch::Tensor BlockImpl::pair_features(const torch::Tensor &h,
                                       const torch::Tensor &a,
                                       const torch::Tensor &dist,
                                       const torch::Tensor &mod_scale,
                                       const torch::Tensor &mod_bias) {
  const int64_t b = h.size(0), n = h.size(1);
  auto hi = h.unsqueeze(2).expand({b, n, n, h.size(-1)});
  auto hj = h.unsqueeze(1).expand({b, n, n, h.size(-1)});
  auto e = w2_->forward(torch::cat({hi, hj, a, dist.unsqueeze(-1)}, -1));
  return adaln(e, broadcast_to_rows(mod_scale, e),
               broadcast_to_rows(mod_bias, e));
}

Streams BlockImpl::forward(const Streams &in, const torch::Tensor &cond,
                           const torch::Tensor &mask) {
  const int dh = cfg_.node_dim, da = cfg_.edge_dim;
  auto mod = modulation_(F::silu(cond));
  auto parts = torch::split_with_sizes(mod, {dh, dh, dh, dh, da, da, da, da, da, da}, -1);
  const auto &s_msg = parts[0], &ln_hs = parts[1], &ln_hb = parts[2],
             &s_hffn = parts[3];
  const auto &s_ahat = parts[4], &ln_as = parts[5], &ln_ab = parts[6],
             &s_affn = parts[7];
  const auto &e_s = parts[8], &e_b = parts[9];

  auto att = attention(in.h, relation(in.a, in.x), mask);
  last_attention = att.weights;
  const auto &m = att.messages;

  auto h1 = scale_mod(m, broadcast_to_rows(s_msg, m)) + in.h;
  auto h2 =
      scale_mod(node_ffn_(adaln(h1, broadcast_to_rows(ln_hs, h1),
                                broadcast_to_rows(ln_hb, h1))),
                broadcast_to_rows(s_hffn, h1)) +
      h1;

  auto a_hat = w1_(m.unsqueeze(2) + m.unsqueeze(1));
  auto a1 = scale_mod(a_hat, broadcast_to_rows(s_ahat, a_hat)) + in.a;
  auto a2 = scale_mod(edge_ffn_(adaln(a1, broadcast_to_rows(ln_as, a1),
                                      broadcast_to_rows(ln_ab, a1))),
                      broadcast_to_rows(s_affn, a1)) +
            a1;

  Streams out{h2, a2, in.x};
  if (update_coords_) {
    const int64_t n = in.x.size(1);
    auto diff = in.x.unsqueeze(2) - in.x.unsqueeze(1); // x_i - x_j
    auto dist = torch::sqrt(diff.pow(2).sum(-1) + 1e-10);
    auto e = pair_features(h2, a2, dist, e_s, e_b);
    auto gate = torch::tanh(coord_gate(e)); // [B,N,N,1]
    auto off_diag =
        (1.0 - torch::eye(n, in.x.options())).view({1, n, n, 1});
    auto field = (diff / dist.unsqueeze(-1)) * gate * off_diag;
    out.x = center_x(in.x + gamma.to(in.x.dtype()) * field.sum(2));
  }
  if (!torch::isfinite(out.h).all().item<bool>() ||
      !torch::isfinite(out.a).all().item<bool>() ||
      !torch::isfinite(out.x).all().item<bool>())
    throw NumericError("non-finite activation in DMT block");
  return out;
}

// ---------------------------------------------------------------------------

DMTImpl::DMTImpl(const DMTConfig &cfg) : cfg_(cfg) {
  cfg_.validate();
  condition = register_module("condition", ConditionEmbedding(cfg_));
  node_in_ = register_module(
      "node_in", torch::nn::Linear(2 * kAtomFeatureDim, cfg_.node_dim));
  edge_in_ = register_module(
      "edge_in", torch::nn::Linear(2 * kBondClasses + 1, cfg_.edge_dim));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int l = 0; l < cfg_.layers; ++l)
    blocks->push_back(Block(cfg_));
  node_norm_ = register_module(
      "node_norm", torch::nn::LayerNorm(
                       torch::nn::LayerNormOptions({cfg_.node_dim})));
  edge_norm_ = register_module(
      "edge_norm", torch::nn::LayerNorm(
                       torch::nn::LayerNormOptions({cfg_.edge_dim})));
  node_out_ = register_module(
      "node_out", torch::nn::Linear(cfg_.node_dim, kAtomFeatureDim));
  edge_out_ = register_module(
      "edge_out", torch::nn::Linear(cfg_.edge_dim, kBondClasses));
}

InitialEmbedding DMTImpl::init_embeddings(const ContinuousGraph &g_t,
                                          const ContinuousGraph &self_cond) {
  if (g_t.h.sizes() != self_cond.h.sizes() ||
      g_t.a.sizes() != self_cond.a.sizes() ||
      g_t.x.sizes() != self_cond.x.sizes())
    throw NumericError("init_embeddings: self-conditioning shape mismatch");
  if (g_t.h.size(-1) != kAtomFeatureDim || g_t.a.size(-1) != kBondClasses ||
      g_t.a.size(1) != g_t.h.size(1) || g_t.a.size(2) != g_t.h.size(1))
    throw NumericError("init_embeddings: graph shape mismatch");
  const auto x_sc = center_x(self_cond.x);
  const auto d0 = pairwise_distances(x_sc, 0.0);
  InitialEmbedding out;
  out.streams.h = node_in_(torch::cat({g_t.h, self_cond.h}, -1));
  out.streams.a =
      edge_in_(torch::cat({g_t.a, self_cond.a, d0.unsqueeze(-1)}, -1));
  out.streams.x = center_x(g_t.x);
  const auto bonded = self_cond.a.argmax(-1).ne(0);
  out.mask = bonded.logical_or(d0.lt(cfg_.mask_cutoff));
  return out;
}

ContinuousGraph DMTImpl::forward(const ContinuousGraph &g_t,
                                 const ContinuousGraph &self_cond,
                                 const torch::Tensor &log_snr,
                                 const torch::Tensor &z_s) {
  auto init = init_embeddings(g_t, self_cond);
  auto c = condition(log_snr.to(g_t.h.dtype()), z_s);
  Streams s = init.streams;
  int index = 0;
  for (const auto &m : *blocks) {
    try {
      s = m->as<BlockImpl>()->forward(s, c, init.mask);
    } catch (const NumericError &e) {
      throw NumericError(std::string(e.what()) + " (block " +
                         std::to_string(index) + ")");
    }
    ++index;
  }
  return {node_out_(node_norm_(s.h)),
          symmetrize_edges(edge_out_(edge_norm_(s.a))), center_x(s.x)};
}

} // namespace diffspectra::dmt
