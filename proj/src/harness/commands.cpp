#include "precond/harness/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <random>
#include <thread>

#include "precond/decomp.hpp"
#include "precond/errors.hpp"
#include "precond/harness/checkpoint.hpp"
#include "precond/harness/tasks.hpp"
#include "precond/optimizer.hpp"
#include "precond/shampoo.hpp"
#include "precond/soap.hpp"
#include "precond/subspace.hpp"

namespace precond::harness {

namespace {

std::mt19937_64 rng_for(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

StorageMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng,
                            Precision p = Precision::FP64) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(r * c);
  for (double& x : v) x = n(rng);
  return StorageMatrix::from_values(r, c, v, p);
}

std::string fmt(double x) { return format_double(x); }

}  // namespace

// ---------------------------------------------------------------- train

TrainResult run_training(const RunConfig& cfg) {
  TrainResult res;
  const auto task = make_task(cfg.task);
  const auto shapes = task->shapes();
  const OptimConfig base = cfg.optim;
  const Params init = task->initial_params(base.seed);
  const Precision work = compute_precision(base.storage);

  for (std::size_t i = 0; i < shapes.size(); ++i) {
    LayerState s = init_layer(shapes[i].first, shapes[i].second, base, i);
    s.theta = init[i].converted(weight_precision(base.storage));
    res.layers.push_back(std::move(s));
  }
  auto current_params = [&] {
    Params p;
    for (const LayerState& s : res.layers) p.push_back(s.theta.converted(Precision::FP64));
    return p;
  };

  const Schedule schedule = cfg.make_schedule();
  std::uint64_t t = 0;
  try {
    for (t = 0; t < cfg.steps; ++t) {
      const auto start = std::chrono::steady_clock::now();
      Params grads;
      const double train_loss = task->evaluate(current_params(), task->batch_for_step(t), &grads);
      if (!std::isfinite(train_loss)) {
        res.exit_code = kExitNumerical;
        res.error = "step " + std::to_string(t) + ": non-finite training loss";
        return res;
      }
      OptimConfig oc = base;
      oc.gamma = schedule.at(t);

      std::vector<StepReport> reports(res.layers.size());
      auto run_layer = [&](std::size_t i) {
        reports[i] = step(res.layers[i], grads[i].converted(work), oc, cfg.timing);
      };
      if (cfg.parallel_layers && res.layers.size() > 1) {
        std::vector<std::exception_ptr> errors(res.layers.size());
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < res.layers.size(); ++i) {
          pool.emplace_back([&, i] {
            try {
              run_layer(i);
            } catch (...) {
              errors[i] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors) {
          if (e) std::rethrow_exception(e);
        }
      } else {
        for (std::size_t i = 0; i < res.layers.size(); ++i) run_layer(i);
      }

      RunRecord rec;
      rec.step = t;
      rec.train_loss = train_loss;
      rec.eval_loss = task->full_loss(current_params());
      double off1 = 0.0, off2 = 0.0;
      bool have_off = false;
      for (std::size_t i = 0; i < res.layers.size(); ++i) {
        const CostLedger& l = res.layers[i].ledger;
        rec.mm += l.mm_count;
        rec.smm += l.smm_count;
        rec.qr += l.qr_count;
        rec.eig += l.eig_count;
        if (reports[i].offdiag_p1) {
          have_off = true;
          off1 += *reports[i].offdiag_p1 * *reports[i].offdiag_p1;
          off2 += *reports[i].offdiag_p2 * *reports[i].offdiag_p2;
        }
      }
      if (have_off) {
        rec.offdiag_p1 = std::sqrt(off1);
        rec.offdiag_p2 = std::sqrt(off2);
      }
      if (cfg.timing) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                start)
                          .count();
      }
      res.records.push_back(rec);
      if (!std::isfinite(rec.eval_loss)) {
        res.exit_code = kExitNumerical;
        res.error = "step " + std::to_string(t) + ": non-finite evaluation loss";
        return res;
      }
    }
  } catch (const SingularityError& e) {
    res.exit_code = kExitNumerical;
    res.error = "step " + std::to_string(t) + ": decomposition failed: " + e.what();
  }
  return res;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  try {
    validate(cfg);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  TrainResult res;
  try {
    res = run_training(cfg);
  } catch (const std::invalid_argument& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  std::ofstream csv(cfg.out, std::ios::binary | std::ios::trunc);
  if (!csv) {
    log << "cannot write '" << cfg.out << "'\n";
    return kExitConfig;
  }
  write_csv(csv, res.records);
  if (res.exit_code != kExitOk) {
    log << "numerical error: " << res.error << '\n';
    return res.exit_code;
  }
  save_checkpoint(cfg.checkpoint_path(), res.layers);
  const RunRecord& last = res.records.back();
  log << "steps " << res.records.size() << ", final train loss " << fmt(last.train_loss)
      << ", eval loss " << fmt(last.eval_loss) << '\n';
  return kExitOk;
}

// ---------------------------------------------------- check-equivalence

namespace {

BasisRotation refresh_old_unsigned(LayerState& state) {
  BasisRotation rotation;
  auto refresh = [&](FactorState& f, std::vector<RotationPass>& passes) {
    const StorageMatrix z = matmul(f.companion(), f.basis(), &state.ledger);
    state.ledger.charge_qr();
    const StorageMatrix q = householder_qr(z).q;
    if (state.moments) passes.push_back({iota_indices(f.dim()), matmul(transpose(f.basis()), q)});
    f.set_basis(q);
  };
  refresh(state.factor1, rotation.factor1);
  refresh(state.factor2, rotation.factor2);
  state.cached_rotated_grad.reset();
  return rotation;
}

// The regular pipeline with the sign fix removed from the basis refresh.
void step_old_unsigned(LayerState& state, const StorageMatrix& grad, const OptimConfig& config) {
  state.scratch = {};
  if (is_soap_type(config.method)) {
    covariance_variant(state, grad, config);
  } else {
    step_covariance_old(state, grad, config);
  }
  if (config.method != Method::Soap) track_eigenvalues(state, config);
  if (state.step_count % static_cast<std::uint64_t>(config.interval_T) == 0) {
    const BasisRotation rotation = refresh_old_unsigned(state);
    if (state.moments) rotate_moments(*state.moments, rotation, config.rotate_v);
  }
  if (is_soap_type(config.method)) {
    soap_precondition(state, grad, config);
  } else {
    precondition(state, grad, config);
  }
  state.cached_rotated_grad.reset();
  ++state.step_count;
}

}  // namespace

EquivalenceResult run_equivalence(const EquivalenceOptions& opt) {
  OptimConfig cfg;
  cfg.gamma = opt.gamma;
  cfg.beta1 = opt.beta1;
  cfg.beta2 = opt.beta2;
  cfg.damping = opt.damping;
  cfg.interval_T = opt.T;
  cfg.method = opt.method;
  cfg.storage = Precision::FP64;
  cfg.seed = opt.seed;

  OptimConfig old_cfg = cfg, new_cfg = cfg;
  old_cfg.parametrization = Parametrization::Old;
  new_cfg.parametrization = Parametrization::New;
  old_cfg.validate();
  new_cfg.validate();
  LayerState old_state = init_layer(opt.d1, opt.d2, old_cfg);
  LayerState new_state = init_layer(opt.d1, opt.d2, new_cfg);

  EquivalenceResult res;
  for (std::uint64_t t = 0; t < opt.steps; ++t) {
    auto rng = rng_for(opt.seed, t);
    const StorageMatrix g = random_matrix(opt.d1, opt.d2, rng);
    if (opt.skip_sign_fix) {
      step_old_unsigned(old_state, g, old_cfg);
    } else {
      step(old_state, g, old_cfg);
    }
    step(new_state, g, new_cfg);

    const double scale = std::max(max_abs(old_state.theta), 1e-300);
    const double theta_rel = max_abs_diff(new_state.theta, old_state.theta) / scale;
    double p_dev = 0.0;
    for (auto [fo, fn] : {std::pair{&old_state.factor1, &new_state.factor1},
                          std::pair{&old_state.factor2, &new_state.factor2}}) {
      const StorageMatrix q = fo->basis();
      const StorageMatrix expected = matmul(transpose(q), matmul(fo->companion(), q));
      p_dev = std::max(p_dev, max_abs_diff(fn->companion(), expected));
    }
    res.max_theta_rel = std::max(res.max_theta_rel, theta_rel);
    res.max_p_dev = std::max(res.max_p_dev, p_dev);
    if (!res.first_violation && (theta_rel > opt.theta_tol || p_dev > opt.p_tol)) {
      res.first_violation = t;
    }
  }
  return res;
}

int cmd_check_equivalence(const EquivalenceOptions& opt, std::ostream& out) {
  EquivalenceResult res;
  try {
    res = run_equivalence(opt);
  } catch (const std::invalid_argument& e) {
    out << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  out << "method " << to_string(opt.method) << ", " << opt.d1 << "x" << opt.d2 << ", T=" << opt.T
      << ", steps " << opt.steps << (opt.skip_sign_fix ? ", sign fix skipped in old path" : "")
      << '\n';
  out << "max relative theta deviation " << fmt(res.max_theta_rel) << " (tol " << fmt(opt.theta_tol)
      << ")\n";
  out << "max |P - Q^T S Q| " << fmt(res.max_p_dev) << " (tol " << fmt(opt.p_tol) << ")\n";
  if (res.pass()) {
    out << "PASS\n";
    return kExitOk;
  }
  out << "FAIL: first violation at step " << *res.first_violation << '\n';
  return kExitViolation;
}

// --------------------------------------------------------- bench-decomp

namespace {

template <typename F>
double median_ms(int reps, F&& f) {
  std::vector<double> times;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    times.push_back(
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t n = times.size();
  return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
}

// Keeps results observable so the optimizer cannot drop the work.
volatile double g_sink = 0.0;

}  // namespace

std::vector<BenchRow> run_bench(const BenchOptions& opt) {
  if (opt.reps < 1) throw ArgumentError("reps must be >= 1");
  std::vector<BenchRow> rows;
  for (std::size_t d : opt.sizes) {
    if (d < 2) throw ArgumentError("bench sizes must be >= 2");
    auto rng = rng_for(opt.seed, d);
    const StorageMatrix a = random_matrix(d, d, rng, opt.precision);
    const StorageMatrix b = random_matrix(d, d, rng, opt.precision);
    // Diagonally loaded Gram matrix: symmetric and well conditioned.
    const StorageMatrix spd = axpby(1.0 / static_cast<double>(d), matmul(a, transpose(a)), 1.0,
                                    StorageMatrix::identity(d, opt.precision))
                                  .converted(opt.precision);

    rows.push_back({"full_qr", d, 1.0,
                    median_ms(opt.reps, [&] { g_sink = qr_sign_fixed(spd).q(0, 0); })});
    for (double B : opt.fractions) {
      const std::size_t bs = block_size(d, B);
      const std::vector<std::size_t> idx = iota_indices(bs);
      const StorageMatrix block = gather(spd, idx, idx).converted(opt.precision);
      rows.push_back({"subspace_qr", d, B,
                      median_ms(opt.reps, [&] { g_sink = qr_sign_fixed(block).q(0, 0); })});
    }
    rows.push_back({"full_eig", d, 1.0,
                    median_ms(opt.reps, [&] { g_sink = eig_symmetric(spd).values[0]; })});
    rows.push_back({"mm", d, 1.0, median_ms(opt.reps, [&] { g_sink = matmul(a, b)(0, 0); })});
  }
  return rows;
}

std::vector<std::string> bench_ordering_violations(const std::vector<BenchRow>& rows) {
  std::vector<std::string> out;
  auto find = [&](const std::string& k, std::size_t d, double B) -> const BenchRow* {
    for (const BenchRow& r : rows) {
      if (r.kernel == k && r.d == d && r.B == B) return &r;
    }
    return nullptr;
  };
  for (const BenchRow& r : rows) {
    if (r.d < 512) continue;
    const BenchRow* full = find("full_qr", r.d, 1.0);
    if (!full) continue;
    const std::string at = " at d=" + std::to_string(r.d);
    if (r.kernel == "subspace_qr" && r.B <= 0.5 && !(r.median_ms < full->median_ms)) {
      out.push_back("subspace_qr(B=" + fmt(r.B) + ") not faster than full_qr" + at);
    }
    if (r.kernel == "mm" && !(r.median_ms < full->median_ms)) {
      out.push_back("mm not faster than full_qr" + at);
    }
    if (r.kernel == "full_eig" && !(r.median_ms > full->median_ms)) {
      out.push_back("full_eig not slower than full_qr" + at);
    }
  }
  return out;
}

int cmd_bench_decomp(const BenchOptions& opt, std::ostream& out) {
  std::vector<BenchRow> rows;
  try {
    rows = run_bench(opt);
  } catch (const std::invalid_argument& e) {
    out << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  out << "kernel,d,B,median_ms\n";
  for (const BenchRow& r : rows) {
    out << csv_line({r.kernel, std::to_string(r.d), fmt(r.B), fmt(r.median_ms)}) << '\n';
  }
  const auto bad = bench_ordering_violations(rows);
  for (const auto& msg : bad) out << "# ordering violated: " << msg << '\n';
  return bad.empty() ? kExitOk : kExitViolation;
}

// ----------------------------------------------------------- cost-audit

namespace {

struct Expected {
  std::uint64_t covariance_mm, refresh_mm, refresh_qr, precondition_mm;
};

// Per-step product counts of the five-step pipeline, both factors together.
Expected expected_counts(Parametrization p, bool refresh) {
  if (p == Parametrization::Old) return {6, refresh ? 2u : 0u, refresh ? 2u : 0u, 4};
  return {4, refresh ? 6u : 0u, refresh ? 2u : 0u, refresh ? 4u : 2u};
}

}  // namespace

AuditResult run_cost_audit(const AuditOptions& opt) {
  AuditResult res;
  auto fail = [&](const std::string& msg) {
    res.pass = false;
    res.lines.push_back("FAIL " + msg);
  };

  for (int T : opt.intervals) {
    if (T < 1) throw ArgumentError("T must be >= 1");
    const std::uint64_t steps = opt.steps ? opt.steps : 5 * static_cast<std::uint64_t>(T);
    if (steps % static_cast<std::uint64_t>(T) != 0) {
      throw ArgumentError("steps " + std::to_string(steps) + " is not a multiple of T=" +
                          std::to_string(T));
    }
    std::uint64_t totals[2] = {0, 0};
    for (Parametrization p : {Parametrization::Old, Parametrization::New}) {
      OptimConfig cfg;
      cfg.parametrization = p;
      cfg.storage = Precision::FP64;
      cfg.interval_T = T;
      cfg.damping = 1e-2;
      LayerState s = init_layer(opt.d1, opt.d2, cfg);
      for (std::uint64_t t = 0; t < steps; ++t) {
        auto rng = rng_for(opt.seed, t);
        const StepReport r = step(s, random_matrix(opt.d1, opt.d2, rng), cfg);
        const Expected e = expected_counts(p, r.refreshed);
        const bool ok = r.covariance_cost.mm_count == e.covariance_mm &&
                        r.refresh_cost.mm_count == e.refresh_mm &&
                        r.refresh_cost.qr_count == e.refresh_qr &&
                        r.precondition_cost.mm_count == e.precondition_mm &&
                        r.total.smm_count == 0;
        if (!ok) {
          fail(std::string(to_string(p)) + " T=" + std::to_string(T) + " step " +
               std::to_string(t) + ": counts " + std::to_string(r.covariance_cost.mm_count) + "/" +
               std::to_string(r.refresh_cost.mm_count) + "/" +
               std::to_string(r.refresh_cost.qr_count) + "/" +
               std::to_string(r.precondition_cost.mm_count));
        }
      }
      totals[static_cast<int>(p)] = s.ledger.mm_count;
    }
    const std::uint64_t old_mm = totals[0], new_mm = totals[1];
    std::string line = "T=" + std::to_string(T) + " steps=" + std::to_string(steps) +
                       " old_mm=" + std::to_string(old_mm) + " new_mm=" + std::to_string(new_mm);
    if (T >= 2) {
      if (new_mm < old_mm) {
        res.lines.push_back("ok   " + line + " (new cheaper)");
      } else {
        fail(line + " (new not cheaper)");
      }
    } else {
      res.lines.push_back("note " + line + " (new costs more at T=1, amortizes for T>=2)");
    }
  }

  // Subspace refresh: smm counts and their B^2-weighted cost.
  for (Parametrization p : {Parametrization::Old, Parametrization::New}) {
    OptimConfig cfg;
    cfg.parametrization = p;
    cfg.storage = Precision::FP64;
    cfg.interval_T = 1;
    cfg.damping = 1e-2;
    cfg.subspace_fraction_B = opt.subspace_B;
    cfg.inner_steps_K = opt.subspace_K;
    cfg.selection = opt.subspace_B < 1.0 ? Selection::Random : Selection::Full;
    cfg.validate();
    LayerState s = init_layer(opt.d1, opt.d2, cfg);
    const double f1 = static_cast<double>(block_size(opt.d1, cfg.subspace_fraction_B)) /
                      static_cast<double>(opt.d1);
    const double f2 = static_cast<double>(block_size(opt.d2, cfg.subspace_fraction_B)) /
                      static_cast<double>(opt.d2);
    const double want_fraction = opt.subspace_K * 3.0 * (f1 * f1 + f2 * f2);
    bool ok = true;
    double got_fraction = 0.0;
    for (std::uint64_t t = 0; t < 4; ++t) {
      auto rng = rng_for(opt.seed, t);
      const StepReport r = step(s, random_matrix(opt.d1, opt.d2, rng), cfg);
      const CostLedger& c = r.refresh_cost;
      got_fraction = c.smm_fraction_sum;
      const std::uint64_t want_mm = p == Parametrization::Old ? 4 : 0;
      const auto K = static_cast<std::uint64_t>(opt.subspace_K);
      ok = ok && c.mm_count == want_mm && c.smm_count == 6 * K && c.qr_count == 2 * K &&
           std::abs(c.smm_fraction_sum - want_fraction) <= 1e-12 * want_fraction;
    }
    const std::string line = std::string("subspace ") + std::string(to_string(p)) +
                             " B=" + fmt(opt.subspace_B) + " K=" + std::to_string(opt.subspace_K) +
                             " smm_fraction=" + fmt(got_fraction) + " expected=" +
                             fmt(want_fraction);
    if (ok) {
      res.lines.push_back("ok   " + line);
    } else {
      fail(line);
    }
  }
  return res;
}

int cmd_cost_audit(const AuditOptions& opt, std::ostream& out) {
  AuditResult res;
  try {
    res = run_cost_audit(opt);
  } catch (const std::invalid_argument& e) {
    out << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  for (const auto& l : res.lines) out << l << '\n';
  out << (res.pass ? "PASS" : "FAIL") << '\n';
  return res.pass ? kExitOk : kExitViolation;
}

// ----------------------------------------------------------- ckpt-dump

int cmd_ckpt_dump(const std::string& path, std::ostream& out, std::ostream& err) {
  std::vector<LayerRecord> records;
  try {
    records = read_records(path);
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitConfig;
  }
  static const char* kNames[] = {"theta", "lambda1", "Q1", "companion1", "lambda2",
                                 "Q2",    "companion2"};
  out << "version " << kCheckpointVersion << ", layers " << records.size() << '\n';
  for (std::size_t l = 0; l < records.size(); ++l) {
    const LayerRecord& rec = records[l];
    out << "layer " << l << ": param " << to_string(rec.parametrization) << ", method "
        << to_string(rec.method) << '\n';
    const bool soap = is_soap_type(rec.method);
    for (std::size_t i = 0; i < rec.tensors.size(); ++i) {
      const Tensor& t = rec.tensors[i];
      std::string name;
      if (i < 7) name = kNames[i];
      else if (i + 1 == rec.tensors.size()) name = "step_count";
      else if (soap) name = i == 7 ? "m" : i == 8 ? "v" : "moment_t";
      std::string dims;
      for (std::size_t k = 0; k < t.dims.size(); ++k) {
        dims += (k ? "x" : "") + std::to_string(t.dims[k]);
      }
      if (dims.empty()) dims = "scalar";
      out << "  " << name << " " << to_string(t.dtype) << " " << dims;
      if (t.dims.empty()) {
        out << " = " << fmt(t.data(0, 0));
      } else {
        out << " frobenius " << fmt(frobenius(t.data));
      }
      out << '\n';
    }
  }
  return kExitOk;
}

}  // namespace precond::harness
