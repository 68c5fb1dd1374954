#include "precond/decomp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "precond/errors.hpp"

namespace precond {

namespace {

template <typename T>
QrResult householder_as(const StorageMatrix& a) {
  const std::size_t n = a.rows();
  std::vector<T> r = a.values_as<T>();
  std::vector<std::vector<T>> reflectors(n);
  std::vector<T> taus(n, T(0));
  std::vector<T> w(n);

  auto at = [n](std::vector<T>& m, std::size_t i, std::size_t j) -> T& { return m[i * n + j]; };

  for (std::size_t k = 0; k < n; ++k) {
    T below = 0;
    for (std::size_t i = k + 1; i < n; ++i) below += at(r, i, k) * at(r, i, k);
    auto& v = reflectors[k];
    v.assign(n - k, T(0));
    // Column already upper triangular: H = I, as in LAPACK's tau = 0 case.
    if (below == T(0)) continue;
    const T norm = std::sqrt(at(r, k, k) * at(r, k, k) + below);

    const T alpha = -std::copysign(norm, at(r, k, k));
    v[0] = at(r, k, k) - alpha;
    for (std::size_t i = k + 1; i < n; ++i) v[i - k] = at(r, i, k);
    T vnorm2 = 0;
    for (T x : v) vnorm2 += x * x;
    const T tau = T(2) / vnorm2;
    taus[k] = tau;

    std::fill(w.begin() + k, w.end(), T(0));
    for (std::size_t i = k; i < n; ++i) {
      const T vi = v[i - k];
      const T* row = &at(r, i, 0);
      for (std::size_t j = k + 1; j < n; ++j) w[j] += vi * row[j];
    }
    for (std::size_t i = k; i < n; ++i) {
      const T s = tau * v[i - k];
      T* row = &at(r, i, 0);
      for (std::size_t j = k + 1; j < n; ++j) row[j] -= s * w[j];
    }
    at(r, k, k) = alpha;
    for (std::size_t i = k + 1; i < n; ++i) at(r, i, k) = T(0);
  }

  // Q = H_0 H_1 ... H_{n-1}, accumulated from the right.
  std::vector<T> q(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) at(q, i, i) = T(1);
  for (std::size_t kk = n; kk-- > 0;) {
    const T tau = taus[kk];
    if (tau == T(0)) continue;
    const auto& v = reflectors[kk];
    std::fill(w.begin() + kk, w.end(), T(0));
    for (std::size_t i = kk; i < n; ++i) {
      const T vi = v[i - kk];
      const T* row = &at(q, i, 0);
      for (std::size_t j = kk; j < n; ++j) w[j] += vi * row[j];
    }
    for (std::size_t i = kk; i < n; ++i) {
      const T s = tau * v[i - kk];
      T* row = &at(q, i, 0);
      for (std::size_t j = kk; j < n; ++j) row[j] -= s * w[j];
    }
  }
  return {make_matrix<T>(n, n, std::move(q)), make_matrix<T>(n, n, std::move(r))};
}

template <typename T>
EigResult jacobi_as(const StorageMatrix& input) {
  const std::size_t n = input.rows();
  std::vector<T> a = symmetrized(input).values_as<T>();
  std::vector<T> v(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = T(1);

  auto off_norm = [&] {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) s += double(a[i * n + j]) * double(a[i * n + j]);
      }
    }
    return std::sqrt(s);
  };
  double total = 0;
  for (T x : a) total += double(x) * double(x);
  const double target = 1e-10 * std::sqrt(total);

  for (int sweep = 0; sweep < 30; ++sweep) {
    if (off_norm() <= target) break;
    std::size_t rotations = 0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const T apq = a[p * n + q];
        if (apq == T(0)) continue;
        const T app = a[p * n + p];
        const T aqq = a[q * n + q];
        const T g = T(100) * std::abs(apq);
        if (std::abs(app) + g == std::abs(app) && std::abs(aqq) + g == std::abs(aqq)) {
          a[p * n + q] = T(0);
          a[q * n + p] = T(0);
          continue;
        }
        const T theta = (aqq - app) / (T(2) * apq);
        T t = T(1) / (std::abs(theta) + std::sqrt(theta * theta + T(1)));
        if (theta < T(0)) t = -t;
        const T c = T(1) / std::sqrt(t * t + T(1));
        const T s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          if (k == p || k == q) continue;
          const T akp = a[k * n + p];
          const T akq = a[k * n + q];
          const T nkp = c * akp - s * akq;
          const T nkq = s * akp + c * akq;
          a[k * n + p] = nkp;
          a[p * n + k] = nkp;
          a[k * n + q] = nkq;
          a[q * n + k] = nkq;
        }
        a[p * n + p] = app - t * apq;
        a[q * n + q] = aqq + t * apq;
        a[p * n + q] = T(0);
        a[q * n + p] = T(0);
        for (std::size_t k = 0; k < n; ++k) {
          const T vkp = v[k * n + p];
          const T vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
        ++rotations;
      }
    }
    if (rotations == 0) break;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a[x * n + x] < a[y * n + y]; });

  std::vector<T> vs(n * n);
  std::vector<double> values(n);
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t src = order[c];
    values[c] = a[src * n + src];
    std::size_t lead = 0;
    for (std::size_t r = 1; r < n; ++r) {
      if (std::abs(v[r * n + src]) > std::abs(v[lead * n + src])) lead = r;
    }
    const T sign = v[lead * n + src] < T(0) ? T(-1) : T(1);
    for (std::size_t r = 0; r < n; ++r) vs[r * n + c] = sign * v[r * n + src];
  }
  return {make_matrix<T>(n, n, std::move(vs)), std::move(values)};
}

}  // namespace

QrResult householder_qr(const StorageMatrix& a) {
  if (!a.square()) throw ShapeError("qr: input must be square");
  if (a.precision() == Precision::FP64) return householder_as<double>(a);
  return householder_as<float>(a);
}

QrResult canonicalize_qr(QrResult qr) {
  const std::size_t n = qr.r.rows();
  for (std::size_t j = 0; j < n; ++j) {
    if (qr.r(j, j) >= 0.0) continue;
    for (std::size_t i = 0; i < qr.q.rows(); ++i) qr.q.set(i, j, -qr.q(i, j));
    for (std::size_t c = 0; c < qr.r.cols(); ++c) qr.r.set(j, c, -qr.r(j, c));
  }
  // Signed zeros depend on which flips happened; make them all +0.
  for (StorageMatrix* m : {&qr.q, &qr.r}) {
    for (std::size_t i = 0; i < m->size(); ++i) {
      if (m->get(i) == 0.0) m->set(i, 0.0);
    }
  }
  return qr;
}

QrResult qr_sign_fixed(const StorageMatrix& a) {
  QrResult qr = householder_qr(a);
  for (std::size_t j = 0; j < qr.r.rows(); ++j) {
    if (std::abs(qr.r(j, j)) <= kSingularThreshold) {
      throw SingularityError("qr: singular input, |R(" + std::to_string(j) + "," +
                                 std::to_string(j) + ")| below threshold",
                             j);
    }
  }
  return canonicalize_qr(std::move(qr));
}

EigResult eig_symmetric(const StorageMatrix& a) {
  if (!a.square()) throw ShapeError("eig: input must be square");
  if (a.precision() == Precision::FP64) return jacobi_as<double>(a);
  return jacobi_as<float>(a);
}

std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k) {
  if (k > values.size()) {
    throw ArgumentError("top_k: k=" + std::to_string(k) + " exceeds length " +
                        std::to_string(values.size()));
  }
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t x, std::size_t y) {
                      if (values[x] != values[y]) return values[x] > values[y];
                      return x < y;
                    });
  idx.resize(k);
  return idx;
}

}  // namespace precond
