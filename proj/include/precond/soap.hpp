#pragma once

// SOAP-type variants: Adam run in the rotating eigenbasis Q1 (x) Q2. The
// basis machinery is shared with KL-Shampoo; only the covariance statistic
// (SOAP) and the final update differ.

#include "precond/config.hpp"
#include "precond/matcore.hpp"
#include "precond/state.hpp"

namespace precond {

/// Step 2 for SOAP-type methods. KL-SOAP is the KL-whitened statistic of
/// KL-Shampoo; SOAP uses the unwhitened G~' G~'^T / d2 and G~'^T G~' / d1.
/// Throws ArgumentError for method = kl-shampoo.
void covariance_variant(LayerState& state, const StorageMatrix& grad, const OptimConfig& config);

/// m <- (1 - b1) m + b1 G~', v <- (1 - b2) v + b2 G~'^2,
/// theta <- theta - gamma Q1 [m / (sqrt(v) + eps)] Q2^T - gamma wd theta.
void soap_precondition(LayerState& state, const StorageMatrix& grad, const OptimConfig& config);

/// Carries the first moment into the new basis: m[I, :] <- O^T m[I, :] for
/// factor-1 passes and m[:, I] <- m[:, I] O for factor-2 passes. The second
/// moment stays as is unless mode = approx, which applies the same rotations
/// to sqrt(v) and squares the result.
void rotate_moments(RotatedMoments& moments, const BasisRotation& rotation, RotateV mode);

}  // namespace precond
