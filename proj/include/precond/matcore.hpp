#pragma once

// Dense row-major matrices with an explicit storage precision.
//
// Persistent optimizer state lives in a StorageMatrix whose precision may be
// FP64, FP32 or BF16. Arithmetic never happens in BF16: every operation
// promotes its operands to the working precision (FP64 when all operands are
// FP64, FP32 otherwise) and returns a working-precision result. Rounding back
// to storage precision is an explicit step (StorageMatrix::converted).

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace precond {

enum class Precision : std::uint8_t { FP64 = 0, FP32 = 1, BF16 = 2 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view name);

/// Precision in which arithmetic on data stored at `p` is carried out.
constexpr Precision compute_precision(Precision p) {
  return p == Precision::FP64 ? Precision::FP64 : Precision::FP32;
}

/// Round-to-nearest-even FP32 -> BF16. NaN maps to a quiet NaN that keeps the
/// top 16 bits of the payload.
std::uint16_t bf16_round(float x);
float bf16_to_float(std::uint16_t bits);

/// Value of `x` after being written into a buffer of precision `p`.
double round_to(Precision p, double x);

class StorageMatrix {
 public:
  StorageMatrix() = default;
  StorageMatrix(std::size_t rows, std::size_t cols, Precision precision = Precision::FP64);

  static StorageMatrix identity(std::size_t n, Precision precision = Precision::FP64);
  static StorageMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows,
                                 Precision precision = Precision::FP64);
  static StorageMatrix from_values(std::size_t rows, std::size_t cols,
                                   std::span<const double> values,
                                   Precision precision = Precision::FP64);
  static StorageMatrix from_float(std::size_t rows, std::size_t cols, std::vector<float> values,
                                  Precision precision = Precision::FP32);
  static StorageMatrix from_double(std::size_t rows, std::size_t cols, std::vector<double> values,
                                   Precision precision = Precision::FP64);
  /// Reinterprets little-endian raw bytes (checkpoint payloads).
  static StorageMatrix from_raw_bytes(std::size_t rows, std::size_t cols, Precision precision,
                                      std::span<const std::byte> bytes);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return rows_ * cols_; }
  bool square() const noexcept { return rows_ == cols_; }
  Precision precision() const noexcept { return precision_; }

  double operator()(std::size_t r, std::size_t c) const { return get(r * cols_ + c); }
  double get(std::size_t flat) const;
  void set(std::size_t r, std::size_t c, double value) { set(r * cols_ + c, value); }
  void set(std::size_t flat, double value);

  std::vector<double> to_f64() const;
  std::vector<float> to_f32() const;
  template <typename T>
  std::vector<T> values_as() const {
    if constexpr (std::is_same_v<T, double>) {
      return to_f64();
    } else {
      return to_f32();
    }
  }

  /// Copy rounded to `precision` (exact when widening).
  StorageMatrix converted(Precision precision) const;

  std::vector<std::byte> raw_bytes() const;
  std::size_t element_bytes() const noexcept;

  /// Same shape, precision and bit pattern.
  bool bitwise_equal(const StorageMatrix& other) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Precision precision_ = Precision::FP64;
  std::variant<std::vector<double>, std::vector<float>, std::vector<std::uint16_t>> data_{
      std::vector<double>{}};
};

template <typename T>
StorageMatrix make_matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
  if constexpr (std::is_same_v<T, double>) {
    return StorageMatrix::from_double(rows, cols, std::move(values), Precision::FP64);
  } else {
    return StorageMatrix::from_float(rows, cols, std::move(values), Precision::FP32);
  }
}

/// Counts matrix products and decompositions for one layer.
///
/// A product counts as a full `mm` when every dimension equals one of the
/// layer dimensions (d1, d2); otherwise it is a subspace product `smm` whose
/// cost fraction is the flop ratio against the full-size product, i.e. B^2
/// for a (d x b)(b x b) product. Inside a SubspaceScope the parent dimension
/// is pinned explicitly so that a block size that happens to equal the other
/// layer dimension is still classified as subspace.
class CostLedger {
 public:
  CostLedger() = default;
  CostLedger(std::size_t d1, std::size_t d2) : d1_(d1), d2_(d2) {}

  std::uint64_t mm_count = 0;
  std::uint64_t smm_count = 0;
  std::uint64_t qr_count = 0;
  std::uint64_t eig_count = 0;
  double smm_fraction_sum = 0.0;

  void charge_product(std::size_t m, std::size_t k, std::size_t n);
  void charge_qr() { ++qr_count; }
  void charge_eig() { ++eig_count; }

  std::size_t d1() const noexcept { return d1_; }
  std::size_t d2() const noexcept { return d2_; }

  CostLedger& operator+=(const CostLedger& other);
  friend CostLedger operator-(CostLedger lhs, const CostLedger& rhs);

 private:
  friend class SubspaceScope;
  bool is_full(std::size_t x) const;

  std::size_t d1_ = 0;
  std::size_t d2_ = 0;
  std::optional<std::size_t> parent_;
};

class SubspaceScope {
 public:
  SubspaceScope(CostLedger* ledger, std::size_t parent_dim);
  ~SubspaceScope();
  SubspaceScope(const SubspaceScope&) = delete;
  SubspaceScope& operator=(const SubspaceScope&) = delete;

 private:
  CostLedger* ledger_;
  std::optional<std::size_t> saved_;
};

enum class ElemOp { Add, Sub, Mul, Div };

StorageMatrix matmul(const StorageMatrix& a, const StorageMatrix& b, CostLedger* ledger = nullptr);
StorageMatrix transpose(const StorageMatrix& a);
StorageMatrix elemwise(const StorageMatrix& a, const StorageMatrix& b, ElemOp op);
/// Column j multiplied by v[j]. Not an mm.
StorageMatrix scale_cols(const StorageMatrix& a, std::span<const double> v);
/// Row i multiplied by v[i]. Not an mm.
StorageMatrix scale_rows(const StorageMatrix& a, std::span<const double> v);
StorageMatrix scaled(const StorageMatrix& a, double s);
/// alpha * a + beta * b in working precision.
StorageMatrix axpby(double alpha, const StorageMatrix& a, double beta, const StorageMatrix& b);
/// (a + a^T) / 2.
StorageMatrix symmetrized(const StorageMatrix& a);
std::vector<double> row_sum_of_squares(const StorageMatrix& a);
std::vector<double> diagonal(const StorageMatrix& a);

/// Rows `row_idx` and columns `col_idx` copied out (working precision).
StorageMatrix gather(const StorageMatrix& a, std::span<const std::size_t> row_idx,
                     std::span<const std::size_t> col_idx);
/// Writes `block` into a[row_idx, col_idx], rounding to a's precision.
void scatter(StorageMatrix& a, std::span<const std::size_t> row_idx,
             std::span<const std::size_t> col_idx, const StorageMatrix& block);

double max_abs(const StorageMatrix& a);
double frobenius(const StorageMatrix& a);
/// max |a - b| over entries; shapes must agree.
double max_abs_diff(const StorageMatrix& a, const StorageMatrix& b);
/// max |a^T a - I|.
double orthogonality_error(const StorageMatrix& q);

std::vector<std::size_t> iota_indices(std::size_t n);

}  // namespace precond
