#pragma once

// The five subcommands of the `precond` tool. Each run_* function does the
// work and returns data; each cmd_* wrapper prints and maps to an exit code.
//
// Exit codes: 0 success, 2 bad configuration or input file, 3 numerical
// failure during training, 4 a checked property was violated.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "precond/config.hpp"
#include "precond/harness/csv.hpp"
#include "precond/harness/run_config.hpp"
#include "precond/state.hpp"

namespace precond::harness {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitViolation = 4;

// ---------------------------------------------------------------- train

struct TrainResult {
  int exit_code = kExitOk;
  std::string error;
  std::vector<RunRecord> records;
  std::vector<LayerState> layers;
};

/// Runs the configured task without touching the file system.
TrainResult run_training(const RunConfig& cfg);
/// Runs, writes the CSV to cfg.out and the checkpoint, reports on `log`.
int cmd_train(const RunConfig& cfg, std::ostream& log);

// ---------------------------------------------------- check-equivalence

struct EquivalenceOptions {
  std::size_t d1 = 8;
  std::size_t d2 = 12;
  std::uint64_t steps = 200;
  int T = 5;
  std::uint64_t seed = 0;
  Method method = Method::KlShampoo;
  double gamma = 0.05;
  double beta1 = 0.1;
  double beta2 = 0.05;
  double damping = 1e-2;
  /// Runs the original parametrization with an unsigned Householder QR.
  bool skip_sign_fix = false;
  double theta_tol = 1e-9;
  double p_tol = 1e-10;
};

struct EquivalenceResult {
  double max_theta_rel = 0.0;  // max |theta_new - theta_old| / max |theta_old|
  double max_p_dev = 0.0;      // max |P_new - Q_old^T S_old Q_old|
  std::optional<std::uint64_t> first_violation;
  bool pass() const { return !first_violation; }
};

/// Original and reparametrized optimizers in lockstep on one FP64 gradient
/// stream, compared after every step.
EquivalenceResult run_equivalence(const EquivalenceOptions& opt);
int cmd_check_equivalence(const EquivalenceOptions& opt, std::ostream& out);

// --------------------------------------------------------- bench-decomp

struct BenchOptions {
  std::vector<std::size_t> sizes{512};
  std::vector<double> fractions{0.25, 0.5};
  Precision precision = Precision::FP32;
  int reps = 3;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string kernel;  // full_qr, subspace_qr, full_eig, mm
  std::size_t d = 0;
  double B = 1.0;
  double median_ms = 0.0;
};

std::vector<BenchRow> run_bench(const BenchOptions& opt);
/// Orderings that must hold at d >= 512; returns the violated ones.
std::vector<std::string> bench_ordering_violations(const std::vector<BenchRow>& rows);
int cmd_bench_decomp(const BenchOptions& opt, std::ostream& out);

// ----------------------------------------------------------- cost-audit

struct AuditOptions {
  std::size_t d1 = 8;
  std::size_t d2 = 8;
  std::vector<int> intervals{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  /// Steps per interval; 0 means 5 T. Must be a multiple of every T.
  std::uint64_t steps = 0;
  /// Subspace check: fraction and inner steps used for the smm audit.
  double subspace_B = 0.5;
  int subspace_K = 1;
  std::uint64_t seed = 0;
};

struct AuditResult {
  bool pass = true;
  std::vector<std::string> lines;
};

AuditResult run_cost_audit(const AuditOptions& opt);
int cmd_cost_audit(const AuditOptions& opt, std::ostream& out);

// ----------------------------------------------------------- ckpt-dump

int cmd_ckpt_dump(const std::string& path, std::ostream& out, std::ostream& err);

}  // namespace precond::harness
