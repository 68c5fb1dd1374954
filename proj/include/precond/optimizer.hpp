#pragma once

#include "precond/config.hpp"
#include "precond/matcore.hpp"
#include "precond/state.hpp"

namespace precond {

/// One optimizer iteration on one layer: covariance, eigenvalue tracking
/// (skipped by SOAP), basis refresh when step_count % T == 0, then the
/// update. The refresh happens before the update, so the fresh basis is used
/// at once. Increments step_count.
///
/// `timed` fills StepReport::wall_ms; it is off by default so that reports
/// are deterministic.
StepReport step(LayerState& state, const StorageMatrix& grad, const OptimConfig& config,
                bool timed = false);

}  // namespace precond
