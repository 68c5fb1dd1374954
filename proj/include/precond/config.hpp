#pragma once

#include <cstdint>
#include <string_view>

#include "precond/matcore.hpp"

namespace precond {

enum class Method : std::uint8_t { KlShampoo = 0, KlSoap = 1, Soap = 2 };
enum class Parametrization : std::uint8_t { Old = 0, New = 1 };
enum class Selection : std::uint8_t { Full, Random, Greedy };
enum class BasisSolver : std::uint8_t { Qr, Eig };
enum class RotateV : std::uint8_t { None, Approx };

std::string_view to_string(Method m);
std::string_view to_string(Parametrization p);
std::string_view to_string(Selection s);
std::string_view to_string(BasisSolver b);
std::string_view to_string(RotateV r);

Method parse_method(std::string_view s);
Parametrization parse_parametrization(std::string_view s);
Selection parse_selection(std::string_view s);
BasisSolver parse_basis_solver(std::string_view s);
RotateV parse_rotate_v(std::string_view s);

constexpr bool is_soap_type(Method m) { return m != Method::KlShampoo; }

/// Hyperparameters for one optimizer instance. EMA weights follow the
/// convention X <- (1 - beta) X + beta * new.
struct OptimConfig {
  double gamma = 1e-3;
  double beta2 = 0.05;
  double beta1 = 0.1;
  double damping = 1e-8;
  int interval_T = 10;
  double subspace_fraction_B = 1.0;
  int inner_steps_K = 1;
  Method method = Method::KlShampoo;
  Parametrization parametrization = Parametrization::New;
  Selection selection = Selection::Full;
  BasisSolver basis_solver = BasisSolver::Qr;
  Precision storage = Precision::FP32;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  bool refresh_lambda = false;
  RotateV rotate_v = RotateV::None;

  /// Throws ArgumentError naming the offending field.
  void validate() const;
};

/// Precision of the weight matrix itself. Optimizer state uses `storage`
/// verbatim; weights stored at BF16 would swallow every update smaller than
/// 2^-9 of their magnitude, so BF16 storage keeps FP32 master weights.
constexpr Precision weight_precision(Precision storage) {
  return storage == Precision::FP64 ? Precision::FP64 : Precision::FP32;
}

/// Orthogonality tolerance for a basis held at storage precision `p`.
constexpr double ortho_tol(Precision p) {
  switch (p) {
    case Precision::FP64: return 1e-12;
    case Precision::FP32: return 1e-5;
    case Precision::BF16: return 1e-4;
  }
  return 0.0;
}

}  // namespace precond
