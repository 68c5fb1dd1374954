#pragma once

// Desk-scale training problems with hand-derived gradients. Every parameter
// is a matrix so each one maps onto one preconditioned layer.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "precond/matcore.hpp"

namespace precond::harness {

enum class TaskKind { Quadratic, MatrixFactorization, SoftmaxRegression, TwoLayerMlp };

std::string_view to_string(TaskKind k);
TaskKind parse_task(std::string_view s);

struct TaskSpec {
  TaskKind kind = TaskKind::Quadratic;
  /// quadratic: {d1, d2}; matrix factorization: {m, n, rank};
  /// softmax regression: {features, classes, samples};
  /// two-layer MLP: {inputs, hidden, outputs, samples}. Empty means defaults.
  std::vector<std::size_t> dims;
  std::uint64_t dataset_seed = 0;
  /// Minibatch size for the sample-based tasks; 0 means full batch.
  std::size_t batch_size = 0;
  /// Quadratic: stddev of additive gradient noise. Factorization: stddev of
  /// the noise added to the low-rank target. Others: label/target noise.
  double noise_scale = 0.0;
};

using Params = std::vector<StorageMatrix>;  // FP64

/// Rows of the dataset used by one training step; empty means all rows.
struct Batch {
  std::vector<std::size_t> rows;
  std::uint64_t noise_seed = 0;
  bool noisy = false;
};

class ToyTask {
 public:
  virtual ~ToyTask() = default;

  virtual std::vector<std::pair<std::size_t, std::size_t>> shapes() const = 0;
  virtual Params initial_params(std::uint64_t seed) const = 0;

  /// Loss on `batch` (all data when empty) and, when `grads` is non-null, its
  /// exact gradient with respect to every parameter.
  virtual double evaluate(const Params& params, const Batch& batch, Params* grads) const = 0;

  /// Closed-form minimum of the full-data loss, when known.
  virtual std::optional<double> optimum() const { return std::nullopt; }

  /// Minibatch (and noise draw) for training step `step`.
  virtual Batch batch_for_step(std::uint64_t step) const { return Batch{{}, step, false}; }

  double full_loss(const Params& params) const { return evaluate(params, Batch{}, nullptr); }
};

std::unique_ptr<ToyTask> make_task(const TaskSpec& spec);

}  // namespace precond::harness
