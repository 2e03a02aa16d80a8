//
// diffspectra - Copyright 2026 The diffspectra Authors.
// SPDX-License-Identifier: Apache-2.0
//

#include "diffspectra/graph_tensor.hpp"

#include <algorithm>
#include <cmath>

namespace diffspectra {

ContinuousGraph ContinuousGraph::slice(int64_t b) const {
  return {h.narrow(0, b, 1), a.narrow(0, b, 1), x.narrow(0, b, 1)};
}

ContinuousGraph ContinuousGraph::zeros(int64_t batch, int64_t atoms,
                                       torch::TensorOptions opts) {
  return {torch::zeros({batch, atoms, kAtomFeatureDim}, opts),
          torch::zeros({batch, atoms, atoms, kBondClasses}, opts),
          torch::zeros({batch, atoms, 3}, opts)};
}

ContinuousGraph ContinuousGraph::zeros_like(const ContinuousGraph &g) {
  return {torch::zeros_like(g.h), torch::zeros_like(g.a),
          torch::zeros_like(g.x)};
}

ContinuousGraph ContinuousGraph::stack(const std::vector<ContinuousGraph> &parts) {
  std::vector<torch::Tensor> hs, as, xs;
  for (const auto &p : parts) {
    hs.push_back(p.h);
    as.push_back(p.a);
    xs.push_back(p.x);
  }
  return {torch::cat(hs, 0), torch::cat(as, 0), torch::cat(xs, 0)};
}

ContinuousGraph to_continuous(const std::vector<MolecularGraph> &mols,
                              torch::TensorOptions opts) {
  if (mols.empty())
    throw NumericError("to_continuous: empty batch");
  const int64_t n = mols.front().size();
  const int64_t b = static_cast<int64_t>(mols.size());
  auto h = torch::zeros({b, n, kAtomFeatureDim}, torch::kFloat64);
  auto a = torch::zeros({b, n, n, kBondClasses}, torch::kFloat64);
  auto x = torch::zeros({b, n, 3}, torch::kFloat64);
  auto ha = h.accessor<double, 3>();
  auto aa = a.accessor<double, 4>();
  auto xa = x.accessor<double, 3>();
  for (int64_t k = 0; k < b; ++k) {
    const auto &m = mols[k];
    if (m.size() != n)
      throw NumericError("to_continuous: molecules in a batch must share N");
    const Coords c = center_coords(m.coords());
    for (int i = 0; i < n; ++i) {
      ha[k][i][static_cast<int>(m.element(i))] = 1.0;
      ha[k][i][kNumElements] = m.charge(i);
      for (int d = 0; d < 3; ++d)
        xa[k][i][d] = c(i, d);
      for (int j = 0; j < n; ++j)
        aa[k][i][j][static_cast<int>(i == j ? BondType::kNone : m.bond(i, j))] =
            1.0;
    }
  }
  return ContinuousGraph{h, a, x}.to(
      torch::typeMetaToScalarType(opts.dtype()));
}

ContinuousGraph to_continuous(const MolecularGraph &mol,
                              torch::TensorOptions opts) {
  return to_continuous(std::vector<MolecularGraph>{mol}, opts);
}

std::vector<MolecularGraph> discretize(const ContinuousGraph &g) {
  const auto h = g.h.detach().to(torch::kFloat64).contiguous();
  const auto a = g.a.detach().to(torch::kFloat64).contiguous();
  const auto x = g.x.detach().to(torch::kFloat64).contiguous();
  const int64_t b = h.size(0), n = h.size(1);
  auto ha = h.accessor<double, 3>();
  auto aa = a.accessor<double, 4>();
  auto xa = x.accessor<double, 3>();
  std::vector<MolecularGraph> out;
  out.reserve(b);
  for (int64_t k = 0; k < b; ++k) {
    MolecularGraph m(static_cast<int>(n));
    for (int i = 0; i < n; ++i) {
      int best = 0;
      for (int c = 1; c < kNumElements; ++c)
        if (ha[k][i][c] > ha[k][i][best])
          best = c;
      m.set_element(i, static_cast<Element>(best));
      double q = std::round(ha[k][i][kNumElements]);
      if (!std::isfinite(q))
        q = 0;
      m.set_charge(i, static_cast<int>(std::clamp(q, -1.0, 1.0)));
      for (int d = 0; d < 3; ++d)
        m.coords()(i, d) = xa[k][i][d];
    }
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        int best = 0;
        double best_v = 0.5 * (aa[k][i][j][0] + aa[k][j][i][0]);
        for (int c = 1; c < kBondClasses; ++c) {
          const double v = 0.5 * (aa[k][i][j][c] + aa[k][j][i][c]);
          if (v > best_v) {
            best = c;
            best_v = v;
          }
        }
        m.set_bond(i, j, static_cast<BondType>(best));
      }
    out.push_back(std::move(m));
  }
  return out;
}

torch::Tensor center_x(const torch::Tensor &x) {
  return x - x.mean(/*dim=*/-2, /*keepdim=*/true);
}

torch::Tensor symmetrize_edges(const torch::Tensor &a) {
  return 0.5 * (a + a.transpose(-3, -2));
}

namespace {

torch::Tensor mirror_upper(const torch::Tensor &a) {
  // a [B, N, N, C]; keep i <= j and mirror.
  const int64_t n = a.size(1);
  auto upper = torch::ones({n, n}, torch::kBool).triu().view({1, n, n, 1});
  auto up = torch::where(upper, a, torch::zeros_like(a));
  auto strict = torch::ones({n, n}, torch::kBool).triu(1).view({1, n, n, 1});
  auto up_strict = torch::where(strict, a, torch::zeros_like(a));
  return up + up_strict.transpose(1, 2);
}

} // namespace

ContinuousGraph gaussian_like(int64_t batch, int64_t atoms,
                              torch::Generator &gen,
                              torch::TensorOptions opts) {
  auto h = torch::randn({batch, atoms, kAtomFeatureDim}, gen, opts);
  auto a = torch::randn({batch, atoms, atoms, kBondClasses}, gen, opts);
  auto x = torch::randn({batch, atoms, 3}, gen, opts);
  return {h, mirror_upper(a), center_x(x)};
}

ContinuousGraph gaussian_like(int64_t atoms, std::vector<torch::Generator> &gens,
                              torch::TensorOptions opts) {
  std::vector<ContinuousGraph> parts;
  parts.reserve(gens.size());
  for (auto &g : gens)
    parts.push_back(gaussian_like(1, atoms, g, opts));
  return ContinuousGraph::stack(parts);
}

bool all_finite(const ContinuousGraph &g) {
  return torch::isfinite(g.h).all().item<bool>() &&
         torch::isfinite(g.a).all().item<bool>() &&
         torch::isfinite(g.x).all().item<bool>();
}

} // namespace diffspectra
