#pragma once

// Subspace basis refresh: instead of one QR of the full companion P, rotate
// only the columns of Q picked by an index set I using the decomposition of
// the b x b block P[I, I], then rotate the matching rows and columns of P.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "precond/config.hpp"
#include "precond/matcore.hpp"
#include "precond/state.hpp"

namespace precond {

struct BlockIndexSet {
  std::vector<std::size_t> indices;  // sorted, distinct
  std::size_t parent_dim = 0;
};

/// max(2, round_half_even(B * d)) clamped to d. Throws ArgumentError for d < 2.
std::size_t block_size(std::size_t d, double B);

/// b indices drawn uniformly without replacement. P only supplies the size.
BlockIndexSet select_random(const StorageMatrix& P, std::size_t b, std::mt19937_64& rng);

/// Greedy two-phase selection. Phase 1 picks the off-diagonal pair with the
/// largest square (first in row-major order on ties); phase 2 adds the b - 2
/// indices x maximizing P(x, k)^2 + P(x, j)^2, smaller index first on ties.
BlockIndexSet select_greedy(const StorageMatrix& P, std::size_t b);

double off_diagonal_frobenius(const StorageMatrix& P);

/// Seed for the random selector of one (layer, step, factor, pass). Stateless
/// so that checkpoints need not carry generator state.
std::uint64_t selection_seed(std::uint64_t seed, std::uint64_t layer_id, std::uint64_t step,
                             unsigned factor, unsigned pass);

/// One pass on working copies q (d x d) and p (d x d): decompose p[I, I],
/// update q[:, I] and rotate p's rows and columns I, then re-symmetrize the
/// touched entries. Returns the local rotation. Products go to `ledger`.
RotationPass subspace_pass(StorageMatrix& q, StorageMatrix& p,
                           const std::vector<std::size_t>& indices, BasisSolver solver,
                           CostLedger* ledger);

/// Replacement for the full refresh: K passes per factor with the configured
/// selector and solver. For the old parametrization P = Q^T S Q is formed
/// first (2 mm per factor) and only Q is written back. Factors with d < 2 are
/// skipped and flagged in the result.
BasisRotation subspace_refresh(LayerState& state, const OptimConfig& config);

}  // namespace precond
