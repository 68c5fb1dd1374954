#include "precond/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "precond/decomp.hpp"
#include "precond/errors.hpp"

namespace precond {

std::size_t block_size(std::size_t d, double B) {
  if (d < 2) throw ArgumentError("block_size: dimension " + std::to_string(d) + " < 2");
  if (!(B > 0.0 && B <= 1.0)) throw ArgumentError("block_size: B must lie in (0, 1]");
  // nearbyint honours the default round-to-nearest-even mode.
  const double raw = std::nearbyint(B * static_cast<double>(d));
  const auto b = static_cast<std::size_t>(std::max(2.0, raw));
  return std::min(b, d);
}

BlockIndexSet select_random(const StorageMatrix& P, std::size_t b, std::mt19937_64& rng) {
  const std::size_t d = P.rows();
  if (b > d) throw ArgumentError("select_random: block larger than matrix");
  std::vector<std::size_t> pool = iota_indices(d);
  // Partial Fisher-Yates: the first b slots end up a uniform b-subset.
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, d - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(b);
  std::sort(pool.begin(), pool.end());
  return {std::move(pool), d};
}

BlockIndexSet select_greedy(const StorageMatrix& P, std::size_t b) {
  if (!P.square()) throw ShapeError("select_greedy: matrix not square");
  const std::size_t d = P.rows();
  if (b < 2) throw ArgumentError("select_greedy: block size must be >= 2");
  if (b > d) throw ArgumentError("select_greedy: block larger than matrix");

  auto sym = [&](std::size_t r, std::size_t c) { return 0.5 * (P(r, c) + P(c, r)); };

  std::size_t k_star = 0, j_star = 1;
  double best = -1.0;
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      if (k == j) continue;
      const double v = sym(k, j);
      if (v * v > best) {
        best = v * v;
        k_star = k;
        j_star = j;
      }
    }
  }

  std::vector<std::size_t> candidates;
  std::vector<double> scores;
  for (std::size_t x = 0; x < d; ++x) {
    if (x == k_star || x == j_star) continue;
    const double a = sym(x, k_star), c = sym(x, j_star);
    candidates.push_back(x);
    scores.push_back(a * a + c * c);
  }
  std::vector<std::size_t> chosen{k_star, j_star};
  for (std::size_t pos : top_k(scores, b - 2)) chosen.push_back(candidates[pos]);
  std::sort(chosen.begin(), chosen.end());
  return {std::move(chosen), d};
}

double off_diagonal_frobenius(const StorageMatrix& P) {
  if (!P.square()) throw ShapeError("off_diagonal_frobenius: matrix not square");
  double s = 0.0;
  for (std::size_t r = 0; r < P.rows(); ++r) {
    for (std::size_t c = 0; c < P.cols(); ++c) {
      if (r != c) s += P(r, c) * P(r, c);
    }
  }
  return std::sqrt(s);
}

std::uint64_t selection_seed(std::uint64_t seed, std::uint64_t layer_id, std::uint64_t step,
                             unsigned factor, unsigned pass) {
  // splitmix64 finalizer folded over the tuple.
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (std::uint64_t v : {layer_id, step, std::uint64_t{factor}, std::uint64_t{pass}}) {
    h = mix(h ^ v);
  }
  return h;
}

RotationPass subspace_pass(StorageMatrix& q, StorageMatrix& p,
                           const std::vector<std::size_t>& indices, BasisSolver solver,
                           CostLedger* ledger) {
  const std::size_t d = p.rows();
  const std::vector<std::size_t> all = iota_indices(d);
  SubspaceScope scope(ledger, d);

  const StorageMatrix block = gather(p, indices, indices);
  StorageMatrix o;
  if (solver == BasisSolver::Qr) {
    if (ledger) ledger->charge_qr();
    o = qr_sign_fixed(block).q;
  } else {
    if (ledger) ledger->charge_eig();
    const StorageMatrix v = eig_symmetric(block).vectors;
    // Descending eigenvalue order, so the rotated block's diagonal is sorted.
    std::vector<std::size_t> reversed(indices.size());
    std::iota(reversed.rbegin(), reversed.rend(), std::size_t{0});
    o = gather(v, iota_indices(v.rows()), reversed);
  }

  scatter(q, all, indices, matmul(gather(q, all, indices), o, ledger));
  scatter(p, all, indices, matmul(gather(p, all, indices), o, ledger));
  scatter(p, indices, all, matmul(transpose(o), gather(p, indices, all), ledger));

  // Re-symmetrize every entry the rotation touched; the (Y, Y) block stays as is.
  const StorageMatrix s = symmetrized(p);
  for (std::size_t i : indices) {
    for (std::size_t j = 0; j < d; ++j) {
      p.set(i, j, s(i, j));
      p.set(j, i, s(j, i));
    }
  }
  return {indices, std::move(o)};
}

BasisRotation subspace_refresh(LayerState& state, const OptimConfig& config) {
  CostLedger* ledger = &state.ledger;
  BasisRotation rotation;
  const bool old = state.parametrization() == Parametrization::Old;

  auto refresh = [&](FactorState& f, unsigned factor_no, std::vector<RotationPass>& passes,
                     bool& skipped) {
    const std::size_t d = f.dim();
    if (d < 2) {
      skipped = true;
      return;
    }
    const Precision work = compute_precision(f.storage());
    StorageMatrix q = f.basis().converted(work);
    StorageMatrix p;
    if (old) {
      const StorageMatrix sq = matmul(f.companion(), f.basis(), ledger);
      p = symmetrized(matmul(transpose(f.basis()), sq, ledger)).converted(work);
    } else {
      p = f.companion().converted(work);
    }

    const std::size_t b = block_size(d, config.subspace_fraction_B);
    for (int pass = 0; pass < config.inner_steps_K; ++pass) {
      BlockIndexSet set;
      switch (config.selection) {
        case Selection::Full:
          set = {iota_indices(d), d};
          break;
        case Selection::Random: {
          std::mt19937_64 rng(selection_seed(config.seed, state.layer_id, state.step_count,
                                             factor_no, static_cast<unsigned>(pass)));
          set = select_random(p, b, rng);
          break;
        }
        case Selection::Greedy:
          set = select_greedy(p, b);
          break;
      }
      try {
        passes.push_back(subspace_pass(q, p, set.indices, config.basis_solver, ledger));
      } catch (const SingularityError& e) {
        throw SingularityError("factor " + std::to_string(factor_no) + ", pass " +
                                   std::to_string(pass) + ": " + e.what(),
                               e.column());
      }
    }
    f.set_basis(q);
    if (!old) f.set_companion(p);
  };

  refresh(state.factor1, 1, rotation.factor1, rotation.factor1_skipped);
  refresh(state.factor2, 2, rotation.factor2, rotation.factor2_skipped);
  state.cached_rotated_grad.reset();
  return rotation;
}

}  // namespace precond
