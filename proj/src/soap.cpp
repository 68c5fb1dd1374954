#include "precond/soap.hpp"

#include <cmath>

#include "precond/errors.hpp"
#include "precond/shampoo.hpp"

namespace precond {

namespace {

template <typename T>
StorageMatrix adam_direction(const StorageMatrix& m, const StorageMatrix& v, double eps,
                             Precision work) {
  const std::vector<T> mv = m.values_as<T>();
  const std::vector<T> vv = v.values_as<T>();
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < mv.size(); ++i) {
    out[i] = static_cast<double>(mv[i] / (std::sqrt(vv[i]) + static_cast<T>(eps)));
  }
  return StorageMatrix::from_values(m.rows(), m.cols(), out, work);
}

template <typename T>
StorageMatrix map_sqrt_or_square(const StorageMatrix& a, bool square, Precision work) {
  std::vector<T> x = a.values_as<T>();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(square ? x[i] * x[i] : std::sqrt(x[i]));
  return StorageMatrix::from_values(a.rows(), a.cols(), out, work);
}

StorageMatrix sqrt_or_square(const StorageMatrix& a, bool square) {
  const Precision work = compute_precision(a.precision());
  return work == Precision::FP64 ? map_sqrt_or_square<double>(a, square, work)
                                 : map_sqrt_or_square<float>(a, square, work);
}

void apply_passes(StorageMatrix& x, const BasisRotation& rotation) {
  const std::vector<std::size_t> rows = iota_indices(x.rows());
  const std::vector<std::size_t> cols = iota_indices(x.cols());
  for (const RotationPass& pass : rotation.factor1) {
    scatter(x, pass.indices, cols, matmul(transpose(pass.o), gather(x, pass.indices, cols)));
  }
  for (const RotationPass& pass : rotation.factor2) {
    scatter(x, rows, pass.indices, matmul(gather(x, rows, pass.indices), pass.o));
  }
}

}  // namespace

void covariance_variant(LayerState& state, const StorageMatrix& grad, const OptimConfig& config) {
  Whitening w;
  switch (config.method) {
    case Method::KlSoap: w = Whitening::Kl; break;
    case Method::Soap: w = Whitening::None; break;
    default: throw ArgumentError("covariance_variant: method must be soap or kl-soap");
  }
  if (state.parametrization() == Parametrization::Old) {
    accumulate_covariance_old(state, grad, config, w);
  } else {
    accumulate_covariance_new(state, grad, config, w);
  }
}

void soap_precondition(LayerState& state, const StorageMatrix& grad, const OptimConfig& config) {
  if (!state.moments) throw StateError("soap_precondition: layer has no moments");
  if (state.parametrization() == Parametrization::Old) state.cached_rotated_grad.reset();
  const StorageMatrix rotated = rotated_gradient(state, grad);
  RotatedMoments& mo = *state.moments;

  const StorageMatrix m = axpby(1.0 - config.beta1, mo.m, config.beta1, rotated);
  const StorageMatrix v = axpby(1.0 - config.beta2, mo.d_second, config.beta2,
                                elemwise(rotated, rotated, ElemOp::Mul));
  const Precision work = m.precision();
  const StorageMatrix u = work == Precision::FP64
                              ? adam_direction<double>(m, v, config.damping, work)
                              : adam_direction<float>(m, v, config.damping, work);
  mo.m = m.converted(mo.m.precision());
  mo.d_second = v.converted(mo.d_second.precision());
  ++mo.t;

  apply_update(state, u, config);
  state.scratch = {};
}

void rotate_moments(RotatedMoments& moments, const BasisRotation& rotation, RotateV mode) {
  const Precision store = moments.m.precision();
  StorageMatrix m = moments.m.converted(compute_precision(store));
  apply_passes(m, rotation);
  moments.m = m.converted(store);
  if (mode == RotateV::Approx) {
    StorageMatrix s = sqrt_or_square(moments.d_second, false);
    apply_passes(s, rotation);
    moments.d_second = sqrt_or_square(s, true).converted(store);
  }
}

}  // namespace precond
