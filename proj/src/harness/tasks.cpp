#include "precond/harness/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "precond/decomp.hpp"
#include "precond/errors.hpp"

namespace precond::harness {

std::string_view to_string(TaskKind k) {
  switch (k) {
    case TaskKind::Quadratic: return "quadratic";
    case TaskKind::MatrixFactorization: return "matrix-factorization";
    case TaskKind::SoftmaxRegression: return "softmax-regression";
    case TaskKind::TwoLayerMlp: return "two-layer-mlp";
  }
  return "?";
}

TaskKind parse_task(std::string_view s) {
  if (s == "quadratic") return TaskKind::Quadratic;
  if (s == "matrix-factorization" || s == "mf") return TaskKind::MatrixFactorization;
  if (s == "softmax-regression" || s == "softmax") return TaskKind::SoftmaxRegression;
  if (s == "two-layer-mlp" || s == "mlp") return TaskKind::TwoLayerMlp;
  throw ArgumentError("unknown task '" + std::string(s) + "'");
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt), static_cast<std::uint32_t>(salt >> 32)};
  return std::mt19937_64(seq);
}

StorageMatrix gaussian(std::size_t r, std::size_t c, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(r * c);
  for (double& x : v) x = scale * n(rng);
  return StorageMatrix::from_double(r, c, std::move(v));
}

/// U Diag(a) U^T with U Haar-ish orthogonal and a uniform in [lo, hi].
StorageMatrix random_spd(std::size_t d, double lo, double hi, std::mt19937_64& rng) {
  const StorageMatrix u = qr_sign_fixed(gaussian(d, d, 1.0, rng)).q;
  std::uniform_real_distribution<double> unif(lo, hi);
  std::vector<double> a(d);
  for (double& x : a) x = unif(rng);
  return symmetrized(matmul(scale_cols(u, a), transpose(u)));
}

double dot(const StorageMatrix& a, const StorageMatrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.get(i) * b.get(i);
  return s;
}

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t k, std::uint64_t seed,
                                     std::uint64_t step) {
  auto rng = stream(seed ^ 0x5EED5EED5EEDULL, step);
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> dims_or(const std::vector<std::size_t>& dims,
                                 std::vector<std::size_t> fallback, std::string_view task) {
  if (dims.empty()) return fallback;
  if (dims.size() != fallback.size()) {
    throw ArgumentError(std::string(task) + " expects " + std::to_string(fallback.size()) +
                        " dims, got " + std::to_string(dims.size()));
  }
  for (std::size_t d : dims) {
    if (d == 0) throw ArgumentError(std::string(task) + ": dims must be positive");
  }
  return dims;
}

// L(X) = 1/2 tr((X - X*)^T A (X - X*) C), minimum 0 at X*.
class Quadratic : public ToyTask {
 public:
  explicit Quadratic(const TaskSpec& spec) : spec_(spec) {
    const auto d = dims_or(spec.dims, {8, 12}, "quadratic");
    auto rng = stream(spec.dataset_seed, 1);
    a_ = random_spd(d[0], 0.5, 2.0, rng);
    c_ = random_spd(d[1], 0.5, 2.0, rng);
    target_ = gaussian(d[0], d[1], 1.0, rng);
  }

  std::vector<std::pair<std::size_t, std::size_t>> shapes() const override {
    return {{target_.rows(), target_.cols()}};
  }
  Params initial_params(std::uint64_t) const override {
    return {StorageMatrix(target_.rows(), target_.cols())};
  }
  std::optional<double> optimum() const override { return 0.0; }

  Batch batch_for_step(std::uint64_t step) const override {
    return Batch{{}, step, spec_.noise_scale > 0.0};
  }

  double evaluate(const Params& p, const Batch& batch, Params* grads) const override {
    const StorageMatrix e = axpby(1.0, p.at(0), -1.0, target_);
    const StorageMatrix g = matmul(matmul(a_, e), c_);
    if (grads) {
      StorageMatrix out = g;
      if (batch.noisy) {
        auto rng = stream(spec_.dataset_seed ^ 0xA0A0ULL, batch.noise_seed);
        out = axpby(1.0, g, 1.0, gaussian(g.rows(), g.cols(), spec_.noise_scale, rng));
      }
      *grads = {std::move(out)};
    }
    return 0.5 * dot(e, g);
  }

 private:
  TaskSpec spec_;
  StorageMatrix a_, c_, target_;
};

// L(X, Y) = ||A - X Y||_F^2 / (2 m n).
class MatrixFactorization : public ToyTask {
 public:
  explicit MatrixFactorization(const TaskSpec& spec) : spec_(spec) {
    const auto d = dims_or(spec.dims, {64, 48, 16}, "matrix-factorization");
    m_ = d[0];
    n_ = d[1];
    r_ = d[2];
    auto rng = stream(spec.dataset_seed, 2);
    const double s = std::pow(static_cast<double>(r_), -0.25);
    target_ = matmul(gaussian(m_, r_, s, rng), gaussian(r_, n_, s, rng));
    if (spec.noise_scale > 0.0) {
      target_ = axpby(1.0, target_, 1.0, gaussian(m_, n_, spec.noise_scale, rng));
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> shapes() const override {
    return {{m_, r_}, {r_, n_}};
  }
  Params initial_params(std::uint64_t seed) const override {
    auto rng = stream(seed, 102);
    const double s = std::pow(static_cast<double>(r_), -0.25);
    return {gaussian(m_, r_, s, rng), gaussian(r_, n_, s, rng)};
  }
  std::optional<double> optimum() const override {
    if (spec_.noise_scale == 0.0) return 0.0;
    return std::nullopt;
  }

  double evaluate(const Params& p, const Batch&, Params* grads) const override {
    const StorageMatrix& x = p.at(0);
    const StorageMatrix& y = p.at(1);
    const StorageMatrix resid = axpby(1.0, matmul(x, y), -1.0, target_);
    const double scale = 1.0 / static_cast<double>(m_ * n_);
    if (grads) {
      *grads = {scaled(matmul(resid, transpose(y)), scale),
                scaled(matmul(transpose(x), resid), scale)};
    }
    return 0.5 * scale * dot(resid, resid);
  }

 private:
  TaskSpec spec_;
  std::size_t m_ = 0, n_ = 0, r_ = 0;
  StorageMatrix target_;
};

// Mean cross-entropy of softmax(W x) against teacher labels.
class SoftmaxRegression : public ToyTask {
 public:
  explicit SoftmaxRegression(const TaskSpec& spec) : spec_(spec) {
    const auto d = dims_or(spec.dims, {20, 10, 512}, "softmax-regression");
    f_ = d[0];
    c_ = d[1];
    n_ = d[2];
    auto rng = stream(spec.dataset_seed, 3);
    x_ = gaussian(n_, f_, 1.0, rng);
    const StorageMatrix teacher = gaussian(c_, f_, 3.0 / std::sqrt(static_cast<double>(f_)), rng);
    const StorageMatrix logits = matmul(x_, transpose(teacher));
    std::normal_distribution<double> noise(0.0, 1.0);
    labels_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      std::size_t best = 0;
      double best_v = -INFINITY;
      for (std::size_t k = 0; k < c_; ++k) {
        const double v = logits(i, k) + spec.noise_scale * noise(rng);
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      labels_[i] = best;
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> shapes() const override { return {{c_, f_}}; }
  Params initial_params(std::uint64_t) const override { return {StorageMatrix(c_, f_)}; }

  Batch batch_for_step(std::uint64_t step) const override {
    if (spec_.batch_size == 0 || spec_.batch_size >= n_) return Batch{};
    return Batch{sample_rows(n_, spec_.batch_size, spec_.dataset_seed, step), step, false};
  }

  double evaluate(const Params& p, const Batch& batch, Params* grads) const override {
    const std::vector<std::size_t> rows = batch.rows.empty() ? iota_indices(n_) : batch.rows;
    const StorageMatrix xb = gather(x_, rows, iota_indices(f_));
    const StorageMatrix logits = matmul(xb, transpose(p.at(0)));
    StorageMatrix dlogits(rows.size(), c_);
    double loss = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double mx = -INFINITY;
      for (std::size_t k = 0; k < c_; ++k) mx = std::max(mx, logits(i, k));
      double z = 0.0;
      for (std::size_t k = 0; k < c_; ++k) z += std::exp(logits(i, k) - mx);
      const std::size_t y = labels_[rows[i]];
      loss += std::log(z) + mx - logits(i, y);
      for (std::size_t k = 0; k < c_; ++k) {
        dlogits.set(i, k, std::exp(logits(i, k) - mx) / z - (k == y ? 1.0 : 0.0));
      }
    }
    const double inv = 1.0 / static_cast<double>(rows.size());
    if (grads) *grads = {scaled(matmul(transpose(dlogits), xb), inv)};
    return loss * inv;
  }

 private:
  TaskSpec spec_;
  std::size_t f_ = 0, c_ = 0, n_ = 0;
  StorageMatrix x_;
  std::vector<std::size_t> labels_;
};

// 1/2 mean ||y - W2 tanh(W1 x)||^2 against a noisy teacher network.
class TwoLayerMlp : public ToyTask {
 public:
  explicit TwoLayerMlp(const TaskSpec& spec) : spec_(spec) {
    const auto d = dims_or(spec.dims, {16, 32, 8, 256}, "two-layer-mlp");
    in_ = d[0];
    hidden_ = d[1];
    out_ = d[2];
    n_ = d[3];
    auto rng = stream(spec.dataset_seed, 4);
    x_ = gaussian(n_, in_, 1.0, rng);
    const StorageMatrix w1 = gaussian(hidden_, in_, 1.0 / std::sqrt(double(in_)), rng);
    const StorageMatrix w2 = gaussian(out_, hidden_, 1.0 / std::sqrt(double(hidden_)), rng);
    y_ = forward(x_, w1, w2).second;
    if (spec.noise_scale > 0.0) y_ = axpby(1.0, y_, 1.0, gaussian(n_, out_, spec.noise_scale, rng));
  }

  std::vector<std::pair<std::size_t, std::size_t>> shapes() const override {
    return {{hidden_, in_}, {out_, hidden_}};
  }
  Params initial_params(std::uint64_t seed) const override {
    auto rng = stream(seed, 104);
    return {gaussian(hidden_, in_, 1.0 / std::sqrt(double(in_)), rng),
            gaussian(out_, hidden_, 1.0 / std::sqrt(double(hidden_)), rng)};
  }

  Batch batch_for_step(std::uint64_t step) const override {
    if (spec_.batch_size == 0 || spec_.batch_size >= n_) return Batch{};
    return Batch{sample_rows(n_, spec_.batch_size, spec_.dataset_seed, step), step, false};
  }

  double evaluate(const Params& p, const Batch& batch, Params* grads) const override {
    const std::vector<std::size_t> rows = batch.rows.empty() ? iota_indices(n_) : batch.rows;
    const StorageMatrix xb = gather(x_, rows, iota_indices(in_));
    const StorageMatrix yb = gather(y_, rows, iota_indices(out_));
    const auto [h, pred] = forward(xb, p.at(0), p.at(1));
    const StorageMatrix resid = axpby(1.0, pred, -1.0, yb);
    const double inv = 1.0 / static_cast<double>(rows.size());
    if (grads) {
      const StorageMatrix dw2 = scaled(matmul(transpose(resid), h), inv);
      StorageMatrix dpre = matmul(resid, p.at(1));
      for (std::size_t i = 0; i < dpre.size(); ++i) {
        const double t = h.get(i);
        dpre.set(i, dpre.get(i) * (1.0 - t * t));
      }
      *grads = {scaled(matmul(transpose(dpre), xb), inv), dw2};
    }
    return 0.5 * inv * dot(resid, resid);
  }

 private:
  static std::pair<StorageMatrix, StorageMatrix> forward(const StorageMatrix& x,
                                                         const StorageMatrix& w1,
                                                         const StorageMatrix& w2) {
    StorageMatrix h = matmul(x, transpose(w1));
    for (std::size_t i = 0; i < h.size(); ++i) h.set(i, std::tanh(h.get(i)));
    StorageMatrix pred = matmul(h, transpose(w2));
    return {std::move(h), std::move(pred)};
  }

  TaskSpec spec_;
  std::size_t in_ = 0, hidden_ = 0, out_ = 0, n_ = 0;
  StorageMatrix x_, y_;
};

}  // namespace

std::unique_ptr<ToyTask> make_task(const TaskSpec& spec) {
  switch (spec.kind) {
    case TaskKind::Quadratic: return std::make_unique<Quadratic>(spec);
    case TaskKind::MatrixFactorization: return std::make_unique<MatrixFactorization>(spec);
    case TaskKind::SoftmaxRegression: return std::make_unique<SoftmaxRegression>(spec);
    case TaskKind::TwoLayerMlp: return std::make_unique<TwoLayerMlp>(spec);
  }
  throw ArgumentError("make_task: unknown kind");
}

}  // namespace precond::harness
