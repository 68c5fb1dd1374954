#include "precond/config.hpp"

#include <cmath>
#include <string>

#include "precond/errors.hpp"

namespace precond {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::KlShampoo: return "kl-shampoo";
    case Method::KlSoap: return "kl-soap";
    case Method::Soap: return "soap";
  }
  return "?";
}

std::string_view to_string(Parametrization p) {
  return p == Parametrization::Old ? "old" : "new";
}

std::string_view to_string(Selection s) {
  switch (s) {
    case Selection::Full: return "full";
    case Selection::Random: return "random";
    case Selection::Greedy: return "greedy";
  }
  return "?";
}

std::string_view to_string(BasisSolver b) { return b == BasisSolver::Qr ? "qr" : "eig"; }

std::string_view to_string(RotateV r) { return r == RotateV::None ? "none" : "approx"; }

namespace {

[[noreturn]] void unknown(std::string_view what, std::string_view value) {
  throw ArgumentError("unknown " + std::string(what) + " '" + std::string(value) + "'");
}

}  // namespace

Method parse_method(std::string_view s) {
  if (s == "kl-shampoo") return Method::KlShampoo;
  if (s == "kl-soap") return Method::KlSoap;
  if (s == "soap") return Method::Soap;
  unknown("method", s);
}

Parametrization parse_parametrization(std::string_view s) {
  if (s == "old") return Parametrization::Old;
  if (s == "new") return Parametrization::New;
  unknown("parametrization", s);
}

Selection parse_selection(std::string_view s) {
  if (s == "full") return Selection::Full;
  if (s == "random") return Selection::Random;
  if (s == "greedy") return Selection::Greedy;
  unknown("selection", s);
}

BasisSolver parse_basis_solver(std::string_view s) {
  if (s == "qr") return BasisSolver::Qr;
  if (s == "eig") return BasisSolver::Eig;
  unknown("basis solver", s);
}

RotateV parse_rotate_v(std::string_view s) {
  if (s == "none") return RotateV::None;
  if (s == "approx") return RotateV::Approx;
  unknown("rotate-v mode", s);
}

void OptimConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ArgumentError(msg); };
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be finite and >= 0");
  if (!(beta2 > 0.0 && beta2 <= 1.0)) fail("beta2 must lie in (0, 1]");
  if (!(beta1 > 0.0 && beta1 <= 1.0)) fail("beta1 must lie in (0, 1]");
  if (!(damping >= 0.0)) fail("damping must be >= 0");
  if (interval_T < 1) fail("T must be >= 1");
  if (!(subspace_fraction_B > 0.0 && subspace_fraction_B <= 1.0)) fail("B must lie in (0, 1]");
  if (inner_steps_K < 1) fail("K must be >= 1");
  if (!(weight_decay >= 0.0)) fail("weight decay must be >= 0");
  if ((selection == Selection::Full) != (subspace_fraction_B == 1.0)) {
    fail("selection=full requires B=1 and B=1 requires selection=full");
  }
  if (basis_solver == BasisSolver::Eig && parametrization != Parametrization::New) {
    fail("basis=eig requires param=new");
  }
  if (refresh_lambda && parametrization != Parametrization::New) {
    fail("refresh-lambda requires param=new");
  }
}

}  // namespace precond
