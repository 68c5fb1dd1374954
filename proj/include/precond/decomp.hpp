#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "precond/matcore.hpp"

namespace precond {

struct QrResult {
  StorageMatrix q;  // orthogonal, d x d
  StorageMatrix r;  // upper triangular, d x d
};

struct EigResult {
  StorageMatrix vectors;       // columns are eigenvectors
  std::vector<double> values;  // ascending
};

/// Below this magnitude an R diagonal entry is treated as zero.
inline constexpr double kSingularThreshold = 1e-30;

/// Plain Householder QR in the working precision of `a`. The diagonal of R
/// carries whatever signs the reflectors produce.
QrResult householder_qr(const StorageMatrix& a);

/// Flips column j of q and row j of r wherever r(j, j) < 0, making the
/// factorization the unique one with positive diag(R). Sign flips are exact,
/// so canonicalizing any sign-perturbed variant of the same factorization
/// gives bitwise identical output.
QrResult canonicalize_qr(QrResult qr);

/// Householder QR followed by sign canonicalization. Throws SingularityError
/// if some |R(j, j)| <= kSingularThreshold and ShapeError for non-square input.
QrResult qr_sign_fixed(const StorageMatrix& a);

/// Cyclic Jacobi eigendecomposition of (a + a^T) / 2.
///
/// Stops when the off-diagonal Frobenius norm drops below 1e-10 ||a||_F, when
/// a full sweep applies no rotation, or after 30 sweeps. Eigenvalues are
/// returned ascending; each eigenvector is oriented so that its
/// largest-magnitude entry (lowest row on ties) is positive.
EigResult eig_symmetric(const StorageMatrix& a);

/// Indices of the k largest entries, largest first; ties go to the smaller
/// index. Throws ArgumentError if k > values.size().
std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k);

}  // namespace precond
