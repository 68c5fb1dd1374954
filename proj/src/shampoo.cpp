#include "precond/shampoo.hpp"

#include <cmath>
#include <string>

#include "precond/decomp.hpp"
#include "precond/errors.hpp"

namespace precond {

namespace {

void check_grad(const LayerState& state, const StorageMatrix& grad) {
  if (grad.rows() != state.d1() || grad.cols() != state.d2()) {
    throw ShapeError("gradient is " + std::to_string(grad.rows()) + "x" +
                     std::to_string(grad.cols()) + ", layer is " + std::to_string(state.d1()) +
                     "x" + std::to_string(state.d2()));
  }
}

void require(const LayerState& state, Parametrization p, const char* op) {
  if (state.parametrization() != p) {
    throw StateError(std::string(op) + " called on a layer with parametrization " +
                     std::string(to_string(state.parametrization())));
  }
}

std::vector<double> plain_weights(std::size_t dim) {
  return std::vector<double>(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
}

StorageMatrix column(std::span<const double> v, Precision p) {
  return StorageMatrix::from_values(v.size(), 1, v, p);
}

void ema_lambda(FactorState& factor, std::span<const double> delta_diag, double beta2) {
  const Precision work = compute_precision(factor.storage());
  const StorageMatrix current = factor.lambda_storage().converted(work);
  factor.set_lambda(axpby(1.0 - beta2, current, beta2, column(delta_diag, work)));
}

}  // namespace

LayerState init_layer(std::size_t d1, std::size_t d2, const OptimConfig& config,
                      std::uint64_t layer_id) {
  if (d1 < 1 || d2 < 1) throw ArgumentError("init_layer: dimensions must be >= 1");
  LayerState s;
  s.theta = StorageMatrix(d1, d2, weight_precision(config.storage));
  s.factor1 = FactorState(d1, config.parametrization, config.storage);
  s.factor2 = FactorState(d2, config.parametrization, config.storage);
  s.ledger = CostLedger(d1, d2);
  s.method = config.method;
  s.layer_id = layer_id;
  if (is_soap_type(config.method)) {
    s.moments = RotatedMoments{StorageMatrix(d1, d2, config.storage),
                               StorageMatrix(d1, d2, config.storage), 0};
  }
  return s;
}

std::vector<double> whitening_weights(const FactorState& factor, double damping) {
  std::vector<double> w = factor.lambda_values();
  const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(factor.dim()));
  for (double& x : w) x = inv_sqrt_dim / std::sqrt(x + damping);
  return w;
}

void accumulate_covariance_old(LayerState& state, const StorageMatrix& grad,
                               const OptimConfig& config, Whitening whitening) {
  require(state, Parametrization::Old, "step_covariance_old");
  check_grad(state, grad);
  CostLedger* ledger = &state.ledger;
  const bool kl = whitening == Whitening::Kl;
  const auto w1 = kl ? whitening_weights(state.factor1, config.damping) : plain_weights(state.d1());
  const auto w2 = kl ? whitening_weights(state.factor2, config.damping) : plain_weights(state.d2());

  StorageMatrix g1 = scale_cols(matmul(grad, state.factor2.basis(), ledger), w2);
  StorageMatrix g2 = scale_cols(matmul(transpose(grad), state.factor1.basis(), ledger), w1);
  const StorageMatrix delta1 = matmul(g1, transpose(g1), ledger);
  const StorageMatrix delta2 = matmul(g2, transpose(g2), ledger);

  const double b = config.beta2;
  state.factor1.set_companion(axpby(1.0 - b, state.factor1.companion(), b, delta1));
  state.factor2.set_companion(axpby(1.0 - b, state.factor2.companion(), b, delta2));

  state.scratch.whitened1 = std::move(g1);
  state.scratch.whitened2 = std::move(g2);
  state.scratch.covariance_done = true;
}

void accumulate_covariance_new(LayerState& state, const StorageMatrix& grad,
                               const OptimConfig& config, Whitening whitening) {
  require(state, Parametrization::New, "step_covariance_new");
  check_grad(state, grad);
  CostLedger* ledger = &state.ledger;
  const bool kl = whitening == Whitening::Kl;
  const auto w1 = kl ? whitening_weights(state.factor1, config.damping) : plain_weights(state.d1());
  const auto w2 = kl ? whitening_weights(state.factor2, config.damping) : plain_weights(state.d2());

  state.cached_rotated_grad.reset();
  const StorageMatrix rotated = rotated_gradient(state, grad);
  const StorageMatrix g1 = scale_cols(rotated, w2);
  const StorageMatrix g2 = scale_cols(transpose(rotated), w1);
  const StorageMatrix delta1 = matmul(g1, transpose(g1), ledger);
  const StorageMatrix delta2 = matmul(g2, transpose(g2), ledger);

  const double b = config.beta2;
  state.factor1.set_companion(axpby(1.0 - b, state.factor1.companion(), b, delta1));
  state.factor2.set_companion(axpby(1.0 - b, state.factor2.companion(), b, delta2));

  state.scratch.delta_diag1 = diagonal(delta1);
  state.scratch.delta_diag2 = diagonal(delta2);
  state.scratch.covariance_done = true;
}

void step_covariance_old(LayerState& state, const StorageMatrix& grad, const OptimConfig& config) {
  accumulate_covariance_old(state, grad, config, Whitening::Kl);
}

void step_covariance_new(LayerState& state, const StorageMatrix& grad, const OptimConfig& config) {
  accumulate_covariance_new(state, grad, config, Whitening::Kl);
}

void track_eigenvalues(LayerState& state, const OptimConfig& config) {
  if (!state.scratch.covariance_done) {
    throw StateError("track_eigenvalues: no covariance step this iteration");
  }
  if (state.parametrization() == Parametrization::Old) {
    CostLedger* ledger = &state.ledger;
    const StorageMatrix r1 =
        matmul(transpose(state.factor1.basis()), *state.scratch.whitened1, ledger);
    const StorageMatrix r2 =
        matmul(transpose(state.factor2.basis()), *state.scratch.whitened2, ledger);
    ema_lambda(state.factor1, row_sum_of_squares(r1), config.beta2);
    ema_lambda(state.factor2, row_sum_of_squares(r2), config.beta2);
  } else {
    ema_lambda(state.factor1, state.scratch.delta_diag1, config.beta2);
    ema_lambda(state.factor2, state.scratch.delta_diag2, config.beta2);
  }
}

BasisRotation refresh_basis_full_old(LayerState& state) {
  require(state, Parametrization::Old, "refresh_basis_full_old");
  CostLedger* ledger = &state.ledger;
  BasisRotation rotation;
  const bool want_rotation = state.moments.has_value();
  auto refresh = [&](FactorState& f, std::vector<RotationPass>& passes) {
    const StorageMatrix z = matmul(f.companion(), f.basis(), ledger);
    ledger->charge_qr();
    QrResult qr = qr_sign_fixed(z);
    if (want_rotation) {
      const StorageMatrix o = matmul(transpose(f.basis()), qr.q, ledger);
      passes.push_back({iota_indices(f.dim()), o});
    }
    f.set_basis(qr.q);
  };
  refresh(state.factor1, rotation.factor1);
  refresh(state.factor2, rotation.factor2);
  state.cached_rotated_grad.reset();
  return rotation;
}

BasisRotation refresh_basis_full_new(LayerState& state) {
  require(state, Parametrization::New, "refresh_basis_full_new");
  CostLedger* ledger = &state.ledger;
  BasisRotation rotation;
  auto refresh = [&](FactorState& f, std::vector<RotationPass>& passes) {
    ledger->charge_qr();
    const StorageMatrix o = qr_sign_fixed(f.companion()).q;
    f.set_basis(matmul(f.basis(), o, ledger));
    const StorageMatrix po = matmul(f.companion(), o, ledger);
    f.set_companion(symmetrized(matmul(transpose(o), po, ledger)));
    passes.push_back({iota_indices(f.dim()), o});
  };
  refresh(state.factor1, rotation.factor1);
  refresh(state.factor2, rotation.factor2);
  state.cached_rotated_grad.reset();
  return rotation;
}

StorageMatrix rotated_gradient(LayerState& state, const StorageMatrix& grad) {
  check_grad(state, grad);
  if (!state.cached_rotated_grad) {
    CostLedger* ledger = &state.ledger;
    state.cached_rotated_grad =
        matmul(matmul(transpose(state.factor1.basis()), grad, ledger), state.factor2.basis(),
               ledger);
  }
  return *state.cached_rotated_grad;
}

void apply_update(LayerState& state, const StorageMatrix& update_in_basis,
                  const OptimConfig& config) {
  CostLedger* ledger = &state.ledger;
  const StorageMatrix direction =
      matmul(matmul(state.factor1.basis(), update_in_basis, ledger),
             transpose(state.factor2.basis()), ledger);
  const Precision wp = state.theta.precision();
  const StorageMatrix next = axpby(1.0 - config.gamma * config.weight_decay,
                                   state.theta.converted(compute_precision(wp)), -config.gamma,
                                   direction);
  state.theta = next.converted(wp);
}

void precondition(LayerState& state, const StorageMatrix& grad, const OptimConfig& config) {
  check_grad(state, grad);
  if (state.parametrization() == Parametrization::Old) state.cached_rotated_grad.reset();
  const StorageMatrix rotated = rotated_gradient(state, grad);

  auto inv_sqrt = [&](const FactorState& f) {
    std::vector<double> v = f.lambda_values();
    for (double& x : v) x = 1.0 / std::sqrt(x + config.damping);
    return v;
  };
  const StorageMatrix scaled_update =
      scale_rows(scale_cols(rotated, inv_sqrt(state.factor2)), inv_sqrt(state.factor1));
  apply_update(state, scaled_update, config);
  state.scratch = {};
}

StorageMatrix ambient_factor(const FactorState& factor) {
  const StorageMatrix c = factor.companion().converted(Precision::FP64);
  if (factor.parametrization() == Parametrization::Old) return c;
  const StorageMatrix q = factor.basis().converted(Precision::FP64);
  return matmul(matmul(q, c), transpose(q));
}

}  // namespace precond
