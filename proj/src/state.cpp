#include "precond/state.hpp"

#include "precond/errors.hpp"

namespace precond {

FactorState::FactorState(std::size_t dim, Parametrization parametrization, Precision storage)
    : dim_(dim),
      parametrization_(parametrization),
      storage_(storage),
      lambda_(dim, 1, storage),
      basis_(StorageMatrix::identity(dim, storage)),
      companion_(dim, dim, storage) {}

void FactorState::set_lambda(const StorageMatrix& values) {
  if (values.rows() != dim_ || values.cols() != 1) throw ShapeError("lambda: expected dim x 1");
  lambda_ = values.converted(storage_);
}

void FactorState::set_basis(const StorageMatrix& q) {
  if (q.rows() != dim_ || q.cols() != dim_) throw ShapeError("basis: expected dim x dim");
  basis_ = q.converted(storage_);
}

void FactorState::set_companion(const StorageMatrix& m) {
  if (m.rows() != dim_ || m.cols() != dim_) throw ShapeError("companion: expected dim x dim");
  companion_ = m.converted(storage_);
}

}  // namespace precond
