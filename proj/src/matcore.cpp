#include "precond/matcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "precond/errors.hpp"

namespace precond {

std::string_view to_string(Precision p) {
  switch (p) {
    case Precision::FP64: return "fp64";
    case Precision::FP32: return "fp32";
    case Precision::BF16: return "bf16";
  }
  return "?";
}

Precision parse_precision(std::string_view name) {
  if (name == "fp64") return Precision::FP64;
  if (name == "fp32") return Precision::FP32;
  if (name == "bf16") return Precision::BF16;
  throw ArgumentError("unknown precision '" + std::string(name) + "'");
}

std::uint16_t bf16_round(float x) {
  const auto u = std::bit_cast<std::uint32_t>(x);
  if ((u & 0x7F800000u) == 0x7F800000u && (u & 0x007FFFFFu) != 0) {
    return static_cast<std::uint16_t>((u >> 16) | 0x0040u);
  }
  const std::uint32_t rounded = u + 0x7FFFu + ((u >> 16) & 1u);
  return static_cast<std::uint16_t>(rounded >> 16);
}

float bf16_to_float(std::uint16_t bits) {
  return std::bit_cast<float>(static_cast<std::uint32_t>(bits) << 16);
}

double round_to(Precision p, double x) {
  switch (p) {
    case Precision::FP64: return x;
    case Precision::FP32: return static_cast<float>(x);
    case Precision::BF16: return bf16_to_float(bf16_round(static_cast<float>(x)));
  }
  return x;
}

// ---------------------------------------------------------------------------
// StorageMatrix

namespace {

using Buffer = std::variant<std::vector<double>, std::vector<float>, std::vector<std::uint16_t>>;

Buffer make_buffer(Precision p, std::size_t n) {
  switch (p) {
    case Precision::FP64: return std::vector<double>(n, 0.0);
    case Precision::FP32: return std::vector<float>(n, 0.0f);
    case Precision::BF16: return std::vector<std::uint16_t>(n, 0);
  }
  return std::vector<double>(n, 0.0);
}

}  // namespace

StorageMatrix::StorageMatrix(std::size_t rows, std::size_t cols, Precision precision)
    : rows_(rows), cols_(cols), precision_(precision), data_(make_buffer(precision, rows * cols)) {}

StorageMatrix StorageMatrix::identity(std::size_t n, Precision precision) {
  StorageMatrix m(n, n, precision);
  for (std::size_t i = 0; i < n; ++i) m.set(i, i, 1.0);
  return m;
}

StorageMatrix StorageMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows,
                                       Precision precision) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  StorageMatrix m(r, c, precision);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged initializer");
    std::size_t j = 0;
    for (double v : row) m.set(i, j++, v);
    ++i;
  }
  return m;
}

StorageMatrix StorageMatrix::from_values(std::size_t rows, std::size_t cols,
                                         std::span<const double> values, Precision precision) {
  if (values.size() != rows * cols) throw ShapeError("from_values: buffer length mismatch");
  StorageMatrix m(rows, cols, precision);
  for (std::size_t i = 0; i < values.size(); ++i) m.set(i, values[i]);
  return m;
}

StorageMatrix StorageMatrix::from_float(std::size_t rows, std::size_t cols,
                                        std::vector<float> values, Precision precision) {
  if (values.size() != rows * cols) throw ShapeError("from_float: buffer length mismatch");
  StorageMatrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.precision_ = precision;
  switch (precision) {
    case Precision::FP32:
      m.data_ = std::move(values);
      break;
    case Precision::FP64:
      m.data_ = std::vector<double>(values.begin(), values.end());
      break;
    case Precision::BF16: {
      std::vector<std::uint16_t> out(values.size());
      std::transform(values.begin(), values.end(), out.begin(), bf16_round);
      m.data_ = std::move(out);
      break;
    }
  }
  return m;
}

StorageMatrix StorageMatrix::from_double(std::size_t rows, std::size_t cols,
                                         std::vector<double> values, Precision precision) {
  if (values.size() != rows * cols) throw ShapeError("from_double: buffer length mismatch");
  if (precision == Precision::FP64) {
    StorageMatrix m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.precision_ = precision;
    m.data_ = std::move(values);
    return m;
  }
  std::vector<float> narrowed(values.begin(), values.end());
  return from_float(rows, cols, std::move(narrowed), precision);
}

StorageMatrix StorageMatrix::from_raw_bytes(std::size_t rows, std::size_t cols,
                                            Precision precision,
                                            std::span<const std::byte> bytes) {
  StorageMatrix m(rows, cols, precision);
  if (bytes.size() != m.size() * m.element_bytes()) {
    throw ShapeError("from_raw_bytes: payload length mismatch");
  }
  // Payloads are little-endian; this build targets little-endian hosts only.
  static_assert(std::endian::native == std::endian::little);
  std::visit([&](auto& buf) { std::memcpy(buf.data(), bytes.data(), bytes.size()); }, m.data_);
  return m;
}

double StorageMatrix::get(std::size_t flat) const {
  switch (precision_) {
    case Precision::FP64: return std::get<0>(data_)[flat];
    case Precision::FP32: return std::get<1>(data_)[flat];
    case Precision::BF16: return bf16_to_float(std::get<2>(data_)[flat]);
  }
  return 0.0;
}

void StorageMatrix::set(std::size_t flat, double value) {
  switch (precision_) {
    case Precision::FP64: std::get<0>(data_)[flat] = value; break;
    case Precision::FP32: std::get<1>(data_)[flat] = static_cast<float>(value); break;
    case Precision::BF16:
      std::get<2>(data_)[flat] = bf16_round(static_cast<float>(value));
      break;
  }
}

std::vector<double> StorageMatrix::to_f64() const {
  std::vector<double> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get(i);
  return out;
}

std::vector<float> StorageMatrix::to_f32() const {
  if (precision_ == Precision::FP32) return std::get<1>(data_);
  std::vector<float> out(size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(get(i));
  return out;
}

StorageMatrix StorageMatrix::converted(Precision precision) const {
  if (precision == precision_) return *this;
  if (precision_ == Precision::FP64) return from_double(rows_, cols_, to_f64(), precision);
  return from_float(rows_, cols_, to_f32(), precision);
}

std::size_t StorageMatrix::element_bytes() const noexcept {
  switch (precision_) {
    case Precision::FP64: return 8;
    case Precision::FP32: return 4;
    case Precision::BF16: return 2;
  }
  return 0;
}

std::vector<std::byte> StorageMatrix::raw_bytes() const {
  std::vector<std::byte> out(size() * element_bytes());
  std::visit([&](const auto& buf) { std::memcpy(out.data(), buf.data(), out.size()); }, data_);
  return out;
}

bool StorageMatrix::bitwise_equal(const StorageMatrix& other) const {
  return rows_ == other.rows_ && cols_ == other.cols_ && precision_ == other.precision_ &&
         raw_bytes() == other.raw_bytes();
}

// ---------------------------------------------------------------------------
// CostLedger

bool CostLedger::is_full(std::size_t x) const {
  if (parent_) return x == *parent_;
  if (d1_ == 0 && d2_ == 0) return true;
  return x == d1_ || x == d2_;
}

void CostLedger::charge_product(std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t dims[3] = {m, k, n};
  std::size_t parent = 0;
  bool all_full = true;
  for (std::size_t x : dims) {
    if (is_full(x)) {
      parent = std::max(parent, x);
    } else {
      all_full = false;
    }
  }
  if (all_full) {
    ++mm_count;
    return;
  }
  if (parent_) parent = *parent_;
  if (parent == 0) parent = std::max(d1_, d2_);
  double fraction = 1.0;
  for (std::size_t x : dims) {
    if (!is_full(x)) fraction *= static_cast<double>(x) / static_cast<double>(parent);
  }
  ++smm_count;
  smm_fraction_sum += fraction;
}

CostLedger& CostLedger::operator+=(const CostLedger& other) {
  mm_count += other.mm_count;
  smm_count += other.smm_count;
  qr_count += other.qr_count;
  eig_count += other.eig_count;
  smm_fraction_sum += other.smm_fraction_sum;
  return *this;
}

CostLedger operator-(CostLedger lhs, const CostLedger& rhs) {
  lhs.mm_count -= rhs.mm_count;
  lhs.smm_count -= rhs.smm_count;
  lhs.qr_count -= rhs.qr_count;
  lhs.eig_count -= rhs.eig_count;
  lhs.smm_fraction_sum -= rhs.smm_fraction_sum;
  lhs.parent_.reset();
  return lhs;
}

SubspaceScope::SubspaceScope(CostLedger* ledger, std::size_t parent_dim) : ledger_(ledger) {
  if (ledger_) {
    saved_ = ledger_->parent_;
    ledger_->parent_ = parent_dim;
  }
}

SubspaceScope::~SubspaceScope() {
  if (ledger_) ledger_->parent_ = saved_;
}

// ---------------------------------------------------------------------------
// Arithmetic

namespace {

bool all_fp64(std::initializer_list<const StorageMatrix*> ms) {
  return std::all_of(ms.begin(), ms.end(),
                     [](const StorageMatrix* m) { return m->precision() == Precision::FP64; });
}

template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  // Four rows of C per sweep over B so each loaded row of B is used four
  // times. Every c(i, j) still accumulates over p in increasing order.
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = bp[j];
        c0[j] += x0 * bj;
        c1[j] += x1 * bj;
        c2[j] += x2 * bj;
        c3[j] += x3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

template <typename T>
StorageMatrix matmul_as(const StorageMatrix& a, const StorageMatrix& b) {
  const auto av = a.values_as<T>();
  const auto bv = b.values_as<T>();
  std::vector<T> cv(a.rows() * b.cols(), T(0));
  gemm(av.data(), bv.data(), cv.data(), a.rows(), a.cols(), b.cols());
  return make_matrix<T>(a.rows(), b.cols(), std::move(cv));
}

template <typename T, typename F>
StorageMatrix map2_as(const StorageMatrix& a, const StorageMatrix& b, F f) {
  auto av = a.values_as<T>();
  const auto bv = b.values_as<T>();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] = f(av[i], bv[i]);
  return make_matrix<T>(a.rows(), a.cols(), std::move(av));
}

template <typename F>
StorageMatrix map2(const StorageMatrix& a, const StorageMatrix& b, F f) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("elementwise shape mismatch");
  if (all_fp64({&a, &b})) return map2_as<double>(a, b, f);
  return map2_as<float>(a, b, f);
}

template <typename T, typename F>
StorageMatrix map_indexed_as(const StorageMatrix& a, F f) {
  auto av = a.values_as<T>();
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      T& x = av[r * a.cols() + c];
      x = f(x, r, c);
    }
  }
  return make_matrix<T>(a.rows(), a.cols(), std::move(av));
}

template <typename F>
StorageMatrix map_indexed(const StorageMatrix& a, F f) {
  if (a.precision() == Precision::FP64) return map_indexed_as<double>(a, f);
  return map_indexed_as<float>(a, f);
}

}  // namespace

StorageMatrix matmul(const StorageMatrix& a, const StorageMatrix& b, CostLedger* ledger) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " times " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
  if (ledger) ledger->charge_product(a.rows(), a.cols(), b.cols());
  if (all_fp64({&a, &b})) return matmul_as<double>(a, b);
  return matmul_as<float>(a, b);
}

StorageMatrix transpose(const StorageMatrix& a) {
  StorageMatrix t(a.cols(), a.rows(), a.precision());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) t.set(c, r, a(r, c));
  }
  return t;
}

StorageMatrix elemwise(const StorageMatrix& a, const StorageMatrix& b, ElemOp op) {
  switch (op) {
    case ElemOp::Add: return map2(a, b, [](auto x, auto y) { return x + y; });
    case ElemOp::Sub: return map2(a, b, [](auto x, auto y) { return x - y; });
    case ElemOp::Mul: return map2(a, b, [](auto x, auto y) { return x * y; });
    case ElemOp::Div: return map2(a, b, [](auto x, auto y) { return x / y; });
  }
  throw ArgumentError("elemwise: unknown op");
}

StorageMatrix scale_cols(const StorageMatrix& a, std::span<const double> v) {
  if (v.size() != a.cols()) throw ShapeError("scale_cols: vector length != cols");
  return map_indexed(a, [&](auto x, std::size_t, std::size_t c) {
    return x * static_cast<decltype(x)>(v[c]);
  });
}

StorageMatrix scale_rows(const StorageMatrix& a, std::span<const double> v) {
  if (v.size() != a.rows()) throw ShapeError("scale_rows: vector length != rows");
  return map_indexed(a, [&](auto x, std::size_t r, std::size_t) {
    return x * static_cast<decltype(x)>(v[r]);
  });
}

StorageMatrix scaled(const StorageMatrix& a, double s) {
  return map_indexed(a, [&](auto x, std::size_t, std::size_t) {
    return x * static_cast<decltype(x)>(s);
  });
}

StorageMatrix axpby(double alpha, const StorageMatrix& a, double beta, const StorageMatrix& b) {
  return map2(a, b, [&](auto x, auto y) {
    using T = decltype(x);
    return static_cast<T>(alpha) * x + static_cast<T>(beta) * y;
  });
}

StorageMatrix symmetrized(const StorageMatrix& a) {
  if (!a.square()) throw ShapeError("symmetrized: matrix not square");
  const StorageMatrix at = transpose(a);
  return map2(a, at, [](auto x, auto y) { return (x + y) / 2; });
}

std::vector<double> row_sum_of_squares(const StorageMatrix& a) {
  std::vector<double> out(a.rows(), 0.0);
  const bool wide = a.precision() == Precision::FP64;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (wide) {
      double s = 0.0;
      for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c) * a(r, c);
      out[r] = s;
    } else {
      float s = 0.0f;
      for (std::size_t c = 0; c < a.cols(); ++c) {
        const auto x = static_cast<float>(a(r, c));
        s += x * x;
      }
      out[r] = s;
    }
  }
  return out;
}

std::vector<double> diagonal(const StorageMatrix& a) {
  const std::size_t n = std::min(a.rows(), a.cols());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a(i, i);
  return out;
}

StorageMatrix gather(const StorageMatrix& a, std::span<const std::size_t> row_idx,
                     std::span<const std::size_t> col_idx) {
  StorageMatrix out(row_idx.size(), col_idx.size(), compute_precision(a.precision()));
  for (std::size_t r = 0; r < row_idx.size(); ++r) {
    if (row_idx[r] >= a.rows()) throw ShapeError("gather: row index out of range");
    for (std::size_t c = 0; c < col_idx.size(); ++c) {
      if (col_idx[c] >= a.cols()) throw ShapeError("gather: column index out of range");
      out.set(r, c, a(row_idx[r], col_idx[c]));
    }
  }
  return out;
}

void scatter(StorageMatrix& a, std::span<const std::size_t> row_idx,
             std::span<const std::size_t> col_idx, const StorageMatrix& block) {
  if (block.rows() != row_idx.size() || block.cols() != col_idx.size()) {
    throw ShapeError("scatter: block shape does not match index sets");
  }
  for (std::size_t r = 0; r < row_idx.size(); ++r) {
    for (std::size_t c = 0; c < col_idx.size(); ++c) a.set(row_idx[r], col_idx[c], block(r, c));
  }
}

double max_abs(const StorageMatrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.get(i)));
  return m;
}

double frobenius(const StorageMatrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.get(i) * a.get(i);
  return std::sqrt(s);
}

double max_abs_diff(const StorageMatrix& a, const StorageMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.get(i) - b.get(i)));
  return m;
}

double orthogonality_error(const StorageMatrix& q) {
  const auto v = q.to_f64();
  const std::size_t n = q.rows();
  const std::size_t m = q.cols();
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += v[r * m + i] * v[r * m + j];
      worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace precond
