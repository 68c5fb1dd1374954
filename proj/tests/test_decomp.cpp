#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "precond/decomp.hpp"
#include "precond/errors.hpp"
#include "precond/subspace.hpp"
#include "support/oracles.hpp"

using namespace precond;

namespace {

bool upper_positive(const StorageMatrix& r) {
  for (std::size_t i = 0; i < r.rows(); ++i) {
    if (!(r(i, i) > 0)) return false;
    for (std::size_t j = 0; j < i; ++j) {
      if (r(i, j) != 0.0) return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("qr of the identity") {
  const auto qr = qr_sign_fixed(StorageMatrix::identity(4));
  CHECK(qr.q.bitwise_equal(StorageMatrix::identity(4)));
  CHECK(qr.r.bitwise_equal(StorageMatrix::identity(4)));
}

TEST_CASE("qr sign fix on a diagonal matrix") {
  const auto qr = qr_sign_fixed(StorageMatrix::from_rows({{-2, 0}, {0, 3}}));
  CHECK(max_abs_diff(qr.q, StorageMatrix::from_rows({{-1, 0}, {0, 1}})) == 0.0);
  CHECK(max_abs_diff(qr.r, StorageMatrix::from_rows({{2, 0}, {0, 3}})) == 0.0);
}

TEST_CASE("canonical qr is invariant under sign perturbation of the raw factors") {
  std::mt19937_64 rng(21);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 100; ++trial) {
    const StorageMatrix a = oracle::to(oracle::gaussian(8, 8, rng));
    const QrResult raw = householder_qr(a);
    QrResult flipped = raw;
    for (std::size_t j = 0; j < 8; ++j) {
      if (!coin(rng)) continue;
      for (std::size_t i = 0; i < 8; ++i) {
        flipped.q.set(i, j, -flipped.q(i, j));
        flipped.r.set(j, i, -flipped.r(j, i));
      }
    }
    const QrResult c1 = canonicalize_qr(raw), c2 = canonicalize_qr(flipped);
    REQUIRE(c1.q.bitwise_equal(c2.q));
    REQUIRE(c1.r.bitwise_equal(c2.r));
    REQUIRE(c1.q.bitwise_equal(qr_sign_fixed(a).q));
  }
}

TEST_CASE("canonical qr matches the Gram-Schmidt oracle") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = oracle::gaussian(10, 10, rng);
    const auto want = oracle::gram_schmidt_qr(a);
    const auto got = qr_sign_fixed(oracle::to(a));
    CHECK(upper_positive(got.r));
    CHECK(oracle::max_diff(oracle::from(got.q), want.q) <= 1e-10);
    CHECK(oracle::max_diff(oracle::from(got.r), want.r) <= 1e-10 * oracle::max_abs(want.r));
  }
}

TEST_CASE("qr invariants in FP32 on conditioned 64x64 inputs") {
  std::mt19937_64 rng(23);
  std::vector<double> sv(64);
  for (std::size_t i = 0; i < 64; ++i) sv[i] = std::pow(1e4, -double(i) / 63.0);
  const auto u = oracle::random_orthogonal(64, rng), v = oracle::random_orthogonal(64, rng);
  const auto a = oracle::mul(oracle::diag_scale({}, u, sv), oracle::tr(v));
  const StorageMatrix a32 = oracle::to(a, Precision::FP32);
  const auto qr = qr_sign_fixed(a32);
  CHECK(qr.q.precision() == Precision::FP32);
  CHECK(orthogonality_error(qr.q) <= 1e-5);
  CHECK(upper_positive(qr.r));
  const auto rec = oracle::mul(oracle::from(qr.q), oracle::from(qr.r));
  CHECK(oracle::max_diff(rec, oracle::from(a32)) <= 1e-5 * oracle::max_abs(oracle::from(a32)));
}

TEST_CASE("qr errors") {
  CHECK_THROWS_AS(qr_sign_fixed(StorageMatrix(2, 3)), ShapeError);
  try {
    qr_sign_fixed(StorageMatrix::from_rows({{1, 0, 0}, {0, 0, 0}, {0, 0, 2}}));
    FAIL("expected a singularity error");
  } catch (const SingularityError& e) {
    CHECK(e.column() == 1);
  }
}

TEST_CASE("eig of a diagonal matrix") {
  const auto e = eig_symmetric(StorageMatrix::from_rows({{3, 0, 0}, {0, 1, 0}, {0, 0, 2}}));
  CHECK(e.values == std::vector<double>{1, 2, 3});
  const auto want = StorageMatrix::from_rows({{0, 0, 1}, {1, 0, 0}, {0, 1, 0}});
  CHECK(max_abs_diff(e.vectors, want) == 0.0);
}

TEST_CASE("eig of the 2x2 example") {
  const auto e = eig_symmetric(StorageMatrix::from_rows({{2, 1}, {1, 2}}));
  CHECK(e.values[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(3.0).epsilon(1e-14));
}

TEST_CASE("eig reconstructs random symmetric matrices") {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = oracle::random_symmetric(16, rng);
    const auto e = eig_symmetric(oracle::to(a));
    const auto v = oracle::from(e.vectors);
    const auto rec = oracle::mul(oracle::diag_scale({}, v, e.values), oracle::tr(v));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i) {
      num += (rec.v[i] - a.v[i]) * (rec.v[i] - a.v[i]);
      den += a.v[i] * a.v[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-10);
    CHECK(std::is_sorted(e.values.begin(), e.values.end()));
    CHECK(orthogonality_error(e.vectors) <= 1e-12);
    // Sign convention: the largest-magnitude entry of each column is positive.
    for (std::size_t j = 0; j < 16; ++j) {
      std::size_t arg = 0;
      for (std::size_t i = 1; i < 16; ++i) {
        if (std::abs(v(i, j)) > std::abs(v(arg, j))) arg = i;
      }
      CHECK(v(arg, j) > 0);
    }
  }
}

TEST_CASE("eig in FP32 reconstructs to 1e-4") {
  std::mt19937_64 rng(25);
  const auto a = oracle::from(oracle::to(oracle::random_symmetric(12, rng), Precision::FP32));
  const auto e = eig_symmetric(oracle::to(a, Precision::FP32));
  const auto v = oracle::from(e.vectors);
  const auto rec = oracle::mul(oracle::diag_scale({}, v, e.values), oracle::tr(v));
  CHECK(oracle::max_diff(rec, a) <= 1e-4 * oracle::max_abs(a));
}

TEST_CASE("top_k") {
  const double v[] = {0.1, 0.9, 0.5};
  CHECK(top_k(v, 2) == std::vector<std::size_t>{1, 2});
  const double same[] = {1, 1, 1, 1};
  CHECK(top_k(same, 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(top_k(v, 4), ArgumentError);
}

TEST_CASE("top_k matches a full-sort oracle") {
  std::mt19937_64 rng(26);
  std::uniform_int_distribution<int> small(0, 5);  // many ties
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(1 + trial % 40);
    for (double& x : v) x = small(rng);
    const std::size_t k = trial % (v.size() + 1);
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] > v[b]; });
    idx.resize(k);
    REQUIRE(top_k(v, k) == idx);
  }
}

TEST_CASE("QR iteration diagonalizes a PSD matrix with distinct eigenvalues") {
  std::mt19937_64 rng(27);
  const auto p0 = oracle::with_spectrum({8, 5, 3, 2, 1.5, 1, 0.5, 0.25}, rng);
  StorageMatrix p = oracle::to(p0);
  const double initial = off_diagonal_frobenius(p);
  for (int it = 0; it < 200; ++it) {
    const StorageMatrix q = qr_sign_fixed(p).q;
    p = symmetrized(matmul(transpose(q), matmul(p, q)));
  }
  CHECK(off_diagonal_frobenius(p) < 1e-8 * initial);
}
