#include <cmath>
#include <random>

#include "doctest.h"
#include "precond/errors.hpp"
#include "precond/optimizer.hpp"
#include "precond/shampoo.hpp"
#include "precond/subspace.hpp"
#include "support/oracles.hpp"

using namespace precond;
using oracle::Mat;

namespace {

OptimConfig cfg(Parametrization p, int T, Precision prec = Precision::FP64) {
  OptimConfig c;
  c.parametrization = p;
  c.storage = prec;
  c.interval_T = T;
  c.gamma = 0.05;
  c.damping = 1e-2;
  return c;
}

// Gradients with a fixed anisotropic covariance on both sides.
struct Stream {
  Mat left, right;
  std::mt19937_64 rng;
  Stream(std::size_t d1, std::size_t d2, std::uint64_t seed) : rng(seed) {
    left = oracle::with_spectrum(spectrum(d1), rng);
    right = oracle::with_spectrum(spectrum(d2), rng);
  }
  static std::vector<double> spectrum(std::size_t d) {
    std::vector<double> e(d);
    for (std::size_t i = 0; i < d; ++i) e[i] = std::pow(0.7, double(i));
    return e;
  }
  StorageMatrix next(Precision p = Precision::FP64) {
    const Mat n = oracle::gaussian(left.rows, right.rows, rng);
    return oracle::to(oracle::mul(left, oracle::mul(n, right)), p);
  }
};

}  // namespace

TEST_CASE("refresh fires every T steps") {
  for (int T : {1, 3, 4}) {
    for (Parametrization p : {Parametrization::Old, Parametrization::New}) {
      const OptimConfig c = cfg(p, T);
      LayerState s = init_layer(4, 5, c);
      Stream g(4, 5, 1);
      for (int t = 0; t < 12; ++t) {
        const StepReport r = step(s, g.next(), c);
        CHECK(r.refreshed == (t % T == 0));
        CHECK(r.refresh_cost.qr_count == (r.refreshed ? 2u : 0u));
      }
      CHECK(s.step_count == 12);
    }
  }
}

TEST_CASE("per-phase product counts") {
  for (Parametrization p : {Parametrization::Old, Parametrization::New}) {
    const bool old = p == Parametrization::Old;
    const OptimConfig c = cfg(p, 2);
    LayerState s = init_layer(6, 4, c);
    Stream g(6, 4, 2);
    for (int t = 0; t < 6; ++t) {
      const StepReport r = step(s, g.next(), c);
      CHECK(r.covariance_cost.mm_count == (old ? 6u : 4u));
      CHECK(r.refresh_cost.mm_count == (r.refreshed ? (old ? 2u : 6u) : 0u));
      CHECK(r.precondition_cost.mm_count == (old || r.refreshed ? 4u : 2u));
      CHECK(r.total.mm_count ==
            r.covariance_cost.mm_count + r.refresh_cost.mm_count + r.precondition_cost.mm_count);
      CHECK(r.total.smm_count == 0);
    }
  }
}

TEST_CASE("report fields") {
  Stream g(4, 3, 3);
  const OptimConfig n = cfg(Parametrization::New, 1);
  LayerState s = init_layer(4, 3, n);
  StepReport r = step(s, g.next(), n);
  REQUIRE(r.offdiag_p1);
  REQUIRE(r.offdiag_p2);
  CHECK(*r.offdiag_p1 == off_diagonal_frobenius(s.factor1.companion()));
  CHECK(r.wall_ms == 0.0);
  r = step(s, g.next(), n, true);
  CHECK(r.wall_ms > 0.0);

  const OptimConfig o = cfg(Parametrization::Old, 1);
  LayerState so = init_layer(4, 3, o);
  r = step(so, g.next(), o);
  CHECK(!r.offdiag_p1);
  CHECK(!r.offdiag_p2);
}

TEST_CASE("layer and config must agree") {
  const OptimConfig n = cfg(Parametrization::New, 1);
  LayerState s = init_layer(3, 3, n);
  OptimConfig other = n;
  other.parametrization = Parametrization::Old;
  CHECK_THROWS_AS(step(s, StorageMatrix(3, 3), other), StateError);
  other = n;
  other.method = Method::Soap;
  CHECK_THROWS_AS(step(s, StorageMatrix(3, 3), other), StateError);
  CHECK_THROWS_AS(step(s, StorageMatrix(3, 4), n), ShapeError);
}

TEST_CASE("zero learning rate keeps the weights") {
  for (Method m : {Method::KlShampoo, Method::KlSoap, Method::Soap}) {
    OptimConfig c = cfg(Parametrization::New, 2);
    c.method = m;
    c.gamma = 0.0;
    LayerState s = init_layer(5, 4, c);
    std::mt19937_64 rng(4);
    s.theta = oracle::to(oracle::gaussian(5, 4, rng));
    const StorageMatrix start = s.theta;
    Stream g(5, 4, 5);
    for (int t = 0; t < 10; ++t) step(s, g.next(), c);
    CHECK(s.theta.bitwise_equal(start));
  }
}

TEST_CASE("refresh_lambda sets lambda to diag P") {
  OptimConfig c = cfg(Parametrization::New, 1);
  c.refresh_lambda = true;
  LayerState s = init_layer(4, 4, c);
  Stream g(4, 4, 6);
  step(s, g.next(), c);
  step(s, g.next(), c);
  const auto lam = s.factor1.lambda_storage().to_f64();
  const auto diag = diagonal(s.factor1.companion());
  CHECK(lam == diag);
}

TEST_CASE("frequent refreshes keep P closer to diagonal") {
  auto ratio = [](int T) {
    const OptimConfig c = cfg(Parametrization::New, T);
    LayerState s = init_layer(8, 8, c);
    Stream g(8, 8, 7);
    double acc = 0.0;
    for (int t = 0; t < 200; ++t) {
      const StepReport r = step(s, g.next(), c);
      if (t >= 150) acc += *r.offdiag_p1 / frobenius(s.factor1.companion());
    }
    return acc / 50;
  };
  const double frequent = ratio(1), rare = ratio(1000);
  MESSAGE("offdiag ratio T=1 " << frequent << ", T=1000 " << rare);
  CHECK(frequent < 0.5 * rare);
  CHECK(frequent < 0.1);
}

TEST_CASE("subspace runs also diagonalize P") {
  for (Selection sel : {Selection::Random, Selection::Greedy}) {
    OptimConfig c = cfg(Parametrization::New, 1);
    c.selection = sel;
    c.subspace_fraction_B = 0.5;
    c.inner_steps_K = 2;
    LayerState s = init_layer(8, 8, c);
    Stream g(8, 8, 8);
    double first = 0.0, last = 0.0;
    for (int t = 0; t < 300; ++t) {
      const StepReport r = step(s, g.next(), c);
      const double rel = *r.offdiag_p1 / frobenius(s.factor1.companion());
      if (t < 20) first += rel;
      if (t >= 280) last += rel;
    }
    CHECK(last < 0.5 * first);
  }
}

TEST_CASE("bf16 orthogonality drift stays small") {
  // Drift monitor: 10^4 steps at d = 64, default refresh interval.
  for (Parametrization p : {Parametrization::Old, Parametrization::New}) {
    const OptimConfig c = cfg(p, 10, Precision::BF16);
    LayerState s = init_layer(64, 64, c);
    Stream g(64, 64, 9);
    double worst = 0.0;
    for (int t = 0; t < 10000; ++t) {
      step(s, g.next(Precision::FP32), c);
      if (t % 100 == 99) {
        worst = std::max({worst, orthogonality_error(s.factor1.basis()),
                          orthogonality_error(s.factor2.basis())});
      }
    }
    MESSAGE(to_string(p) << " worst bf16 orthogonality error " << worst);
    CHECK(worst < 1e-2);
  }
}
