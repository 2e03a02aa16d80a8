//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef DIFFSPECTRA_GRAPH_TENSOR_HPP_
#define DIFFSPECTRA_GRAPH_TENSOR_HPP_

#include <vector>

#include <torch/torch.h>

#include "diffspectra/molgraph.hpp"

namespace diffspectra {

// Real-valued diffusion-space graph, batched over molecules of equal size:
//   h [B, N, 6]    element one-hot + formal charge
//   a [B, N, N, 5] bond-class one-hot, symmetric in (i, j)
//   x [B, N, 3]    coordinates
struct ContinuousGraph {
  torch::Tensor h;
  torch::Tensor a;
  torch::Tensor x;

  int64_t batch() const { return h.size(0); }
  int64_t atoms() const { return h.size(1); }

  ContinuousGraph detach() const { return {h.detach(), a.detach(), x.detach()}; }
  ContinuousGraph to(torch::Dtype dtype) const {
    return {h.to(dtype), a.to(dtype), x.to(dtype)};
  }
  // Molecule b as a batch of one.
  ContinuousGraph slice(int64_t b) const;

  static ContinuousGraph zeros(int64_t batch, int64_t atoms,
                               torch::TensorOptions opts = torch::kFloat32);
  static ContinuousGraph zeros_like(const ContinuousGraph &g);
  static ContinuousGraph stack(const std::vector<ContinuousGraph> &parts);
};

// One-hot encoding of equally sized molecules; coordinates are centered.
ContinuousGraph to_continuous(const std::vector<MolecularGraph> &mols,
                              torch::TensorOptions opts = torch::kFloat32);
ContinuousGraph to_continuous(const MolecularGraph &mol,
                              torch::TensorOptions opts = torch::kFloat32);

// Per-row argmax of the element block and of the symmetrised bond block
// (ties -> lowest class index), charge rounded into [-1, 1], diagonal bonds
// forced to none. Total function.
std::vector<MolecularGraph> discretize(const ContinuousGraph &g);

// Mean-centres the coordinate tensor over the atom axis.
torch::Tensor center_x(const torch::Tensor &x);

// Standard normal draw shaped like a graph of (batch, atoms): bond block
// drawn on the upper triangle (diagonal included) and mirrored, coordinate
// block mean-centred.
ContinuousGraph gaussian_like(int64_t batch, int64_t atoms,
                              torch::Generator &gen,
                              torch::TensorOptions opts = torch::kFloat32);

// Same draw, one independent generator per batch element.
ContinuousGraph gaussian_like(int64_t atoms, std::vector<torch::Generator> &gens,
                              torch::TensorOptions opts = torch::kFloat32);

torch::Tensor symmetrize_edges(const torch::Tensor &a);

bool all_finite(const ContinuousGraph &g);

} // namespace diffspectra

#endif // DIFFSPECTRA_GRAPH_TENSOR_HPP_
