#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "precond/config.hpp"
#include "precond/matcore.hpp"

namespace precond {

/// State of one Kronecker factor: eigenvalue estimates, orthogonal basis, and
/// the companion matrix (S in the ambient basis for Old, P = Q^T S Q for New).
class FactorState {
 public:
  FactorState() = default;
  FactorState(std::size_t dim, Parametrization parametrization, Precision storage);

  std::size_t dim() const noexcept { return dim_; }
  Parametrization parametrization() const noexcept { return parametrization_; }
  Precision storage() const noexcept { return storage_; }

  /// Counted read access; SOAP must never touch lambda.
  const StorageMatrix& lambda() const {
    ++lambda_reads_;
    return lambda_;
  }
  std::vector<double> lambda_values() const { return lambda().to_f64(); }
  void set_lambda(const StorageMatrix& values);
  std::uint64_t lambda_reads() const noexcept { return lambda_reads_; }

  const StorageMatrix& basis() const noexcept { return basis_; }
  const StorageMatrix& companion() const noexcept { return companion_; }
  /// Writes are rounded to the storage precision.
  void set_basis(const StorageMatrix& q);
  void set_companion(const StorageMatrix& m);
  StorageMatrix& basis_mut() noexcept { return basis_; }
  StorageMatrix& companion_mut() noexcept { return companion_; }

  /// Raw lambda storage for serialization, bypassing the read counter.
  const StorageMatrix& lambda_storage() const noexcept { return lambda_; }

 private:
  std::size_t dim_ = 0;
  Parametrization parametrization_ = Parametrization::New;
  Precision storage_ = Precision::FP32;
  StorageMatrix lambda_;  // dim x 1
  StorageMatrix basis_;
  StorageMatrix companion_;
  mutable std::uint64_t lambda_reads_ = 0;
};

/// Adam moments kept in the coordinates of the rotating basis Q1 (x) Q2.
struct RotatedMoments {
  StorageMatrix m;         // first moment, d1 x d2
  StorageMatrix d_second;  // second moment, d1 x d2, entries >= 0
  std::uint64_t t = 0;
};

/// One local rotation applied to a factor: columns `indices` of Q were
/// multiplied by `o` (|indices| x |indices|).
struct RotationPass {
  std::vector<std::size_t> indices;
  StorageMatrix o;
};

/// Everything a basis refresh did, in application order, per factor.
struct BasisRotation {
  std::vector<RotationPass> factor1;
  std::vector<RotationPass> factor2;
  bool factor1_skipped = false;
  bool factor2_skipped = false;
};

/// Intermediates that are valid for the current step only.
struct StepScratch {
  bool covariance_done = false;
  // Old path: whitened factors G'_1, G'_2.
  std::optional<StorageMatrix> whitened1;
  std::optional<StorageMatrix> whitened2;
  // New path: diag of the rotated covariance increments.
  std::vector<double> delta_diag1;
  std::vector<double> delta_diag2;
};

struct LayerState {
  StorageMatrix theta;
  FactorState factor1;
  FactorState factor2;
  std::uint64_t step_count = 0;
  /// Q1^T G Q2 for the current step; dropped when the basis changes.
  std::optional<StorageMatrix> cached_rotated_grad;
  CostLedger ledger;
  std::optional<RotatedMoments> moments;
  Method method = Method::KlShampoo;
  /// Mixed into the random block-selection seed.
  std::uint64_t layer_id = 0;
  StepScratch scratch;

  std::size_t d1() const noexcept { return factor1.dim(); }
  std::size_t d2() const noexcept { return factor2.dim(); }
  Parametrization parametrization() const noexcept { return factor1.parametrization(); }
};

struct StepReport {
  CostLedger covariance_cost;   // steps 2-3
  CostLedger refresh_cost;      // step 4
  CostLedger precondition_cost; // step 5
  CostLedger total;
  bool refreshed = false;
  bool factor1_skipped = false;
  bool factor2_skipped = false;
  /// Off-diagonal Frobenius norms of P_i; only meaningful for New.
  std::optional<double> offdiag_p1;
  std::optional<double> offdiag_p2;
  double wall_ms = 0.0;
};

}  // namespace precond
