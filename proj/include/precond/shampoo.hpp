#pragma once

// KL-Shampoo layer update in the original parametrization {lambda, Q, S} and
// in the reparametrization {lambda, Q, P = Q^T S Q}.
//
// Per-step cost in full matrix products (summed over both factors):
//
//                      Old                    New
//   covariance         G'_i: 2, Delta_i: 2    Q1^T G Q2: 2, Delta~_i: 2
//   eigenvalues        Q_i^T G'_i: 2          0 (diag of Delta~_i)
//   basis refresh      S_i Q_i: 2             Q_i O_i: 2, O_i^T P_i O_i: 4
//   precondition       Q1^T G Q2: 2,          Q1^T G Q2: 0 (cached) or 2,
//                      Q1 U Q2^T: 2           Q1 U Q2^T: 2

#include <cstddef>
#include <cstdint>
#include <vector>

#include "precond/config.hpp"
#include "precond/matcore.hpp"
#include "precond/state.hpp"

namespace precond {

/// Q_i = I, S_i = P_i = 0, lambda_i = 0, theta = 0, step_count = 0.
LayerState init_layer(std::size_t d1, std::size_t d2, const OptimConfig& config,
                      std::uint64_t layer_id = 0);

/// (lambda + damping)^(-1/2) / sqrt(dim), the whitening weights of step 2.
std::vector<double> whitening_weights(const FactorState& factor, double damping);

enum class Whitening { Kl, None };

/// Step 2, original parametrization: G'_1 = G Q2 W2, G'_2 = G^T Q1 W1,
/// Delta_i = G'_i G'_i^T, S_i <- (1 - beta2) S_i + beta2 Delta_i.
void accumulate_covariance_old(LayerState& state, const StorageMatrix& grad,
                               const OptimConfig& config, Whitening whitening);
/// Step 2, reparametrization: G~' = Q1^T G Q2 (cached), Delta~_i from the
/// whitened G~', P_i <- (1 - beta2) P_i + beta2 Delta~_i.
void accumulate_covariance_new(LayerState& state, const StorageMatrix& grad,
                               const OptimConfig& config, Whitening whitening);

void step_covariance_old(LayerState& state, const StorageMatrix& grad, const OptimConfig& config);
void step_covariance_new(LayerState& state, const StorageMatrix& grad, const OptimConfig& config);

/// Step 3: lambda_i <- (1 - beta2) lambda_i + beta2 diag(Delta~_i). Throws
/// StateError if no covariance step ran since the last precondition.
void track_eigenvalues(LayerState& state, const OptimConfig& config);

/// Step 4, original parametrization: Q_i <- qr(S_i Q_i).
BasisRotation refresh_basis_full_old(LayerState& state);
/// Step 4, reparametrization: O_i = qr(P_i), Q_i <- Q_i O_i,
/// P_i <- sym(O_i^T P_i O_i).
BasisRotation refresh_basis_full_new(LayerState& state);

/// Q1^T G Q2, from the cache when valid, otherwise recomputed (2 mm) and cached.
StorageMatrix rotated_gradient(LayerState& state, const StorageMatrix& grad);

/// Step 5: theta <- theta - gamma Q1 [G~' / sqrt((l1 + eps)(l2 + eps)^T)] Q2^T
///                 - gamma * wd * theta.
void precondition(LayerState& state, const StorageMatrix& grad, const OptimConfig& config);

/// theta <- (1 - gamma * wd) theta - gamma * Q1 U Q2^T (2 mm).
void apply_update(LayerState& state, const StorageMatrix& update_in_basis,
                  const OptimConfig& config);

/// Reconstructs S_i = Q_i P_i Q_i^T (New) or returns S_i (Old), FP64. Test aid.
StorageMatrix ambient_factor(const FactorState& factor);

}  // namespace precond
