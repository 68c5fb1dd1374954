#include "precond/optimizer.hpp"

#include <chrono>

#include "precond/errors.hpp"
#include "precond/shampoo.hpp"
#include "precond/soap.hpp"
#include "precond/subspace.hpp"

namespace precond {

namespace {

bool full_qr_refresh(const OptimConfig& config) {
  return config.selection == Selection::Full && config.basis_solver == BasisSolver::Qr &&
         config.inner_steps_K == 1;
}

}  // namespace

StepReport step(LayerState& state, const StorageMatrix& grad, const OptimConfig& config,
                bool timed) {
  if (state.method != config.method) throw StateError("step: layer method differs from config");
  if (state.parametrization() != config.parametrization) {
    throw StateError("step: layer parametrization differs from config");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const bool old = state.parametrization() == Parametrization::Old;
  StepReport report;
  const CostLedger start = state.ledger;

  state.scratch = {};
  if (is_soap_type(config.method)) {
    covariance_variant(state, grad, config);
  } else if (old) {
    step_covariance_old(state, grad, config);
  } else {
    step_covariance_new(state, grad, config);
  }
  if (config.method != Method::Soap) track_eigenvalues(state, config);
  const CostLedger after_cov = state.ledger;

  if (state.step_count % static_cast<std::uint64_t>(config.interval_T) == 0) {
    BasisRotation rotation;
    if (full_qr_refresh(config)) {
      rotation = old ? refresh_basis_full_old(state) : refresh_basis_full_new(state);
    } else {
      rotation = subspace_refresh(state, config);
    }
    report.refreshed = true;
    report.factor1_skipped = rotation.factor1_skipped;
    report.factor2_skipped = rotation.factor2_skipped;
    if (config.refresh_lambda && !old) {
      for (FactorState* f : {&state.factor1, &state.factor2}) {
        const std::vector<double> diag = diagonal(f->companion());
        f->set_lambda(StorageMatrix::from_values(diag.size(), 1, diag, f->storage()));
      }
    }
    if (state.moments) rotate_moments(*state.moments, rotation, config.rotate_v);
  }
  const CostLedger after_refresh = state.ledger;

  if (is_soap_type(config.method)) {
    soap_precondition(state, grad, config);
  } else {
    precondition(state, grad, config);
  }
  state.cached_rotated_grad.reset();
  ++state.step_count;

  report.covariance_cost = after_cov - start;
  report.refresh_cost = after_refresh - after_cov;
  report.precondition_cost = state.ledger - after_refresh;
  report.total = state.ledger - start;
  if (!old) {
    report.offdiag_p1 = off_diagonal_frobenius(state.factor1.companion());
    report.offdiag_p2 = off_diagonal_frobenius(state.factor2.companion());
  }
  if (timed) {
    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return report;
}

}  // namespace precond
