#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "precond/errors.hpp"
#include "precond/harness/commands.hpp"
#include "precond/harness/run_config.hpp"

using namespace precond;
using namespace precond::harness;

namespace {

// Flags of `train`, in the order they are applied on top of the config file.
const char* const kTrainKeys[] = {
    "task",   "dims",     "batch",  "noise", "dataset-seed", "method", "param", "precision",
    "T",      "B",        "K",      "select", "basis",       "lr",     "beta1", "beta2",
    "damping", "wd",      "steps",  "seed",  "rotate-v",     "schedule", "lr-min", "warmup",
    "cooldown", "out",    "ckpt"};

std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (true) {
    const auto end = s.find_first_of("x,", start);
    out.push_back(std::stoul(s.substr(start, end - start)));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::vector<int> parse_intervals(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (true) {
    const auto end = s.find(',', start);
    const std::string piece = s.substr(start, end - start);
    const auto dash = piece.find('-');
    if (dash == std::string::npos) {
      out.push_back(std::stoi(piece));
    } else {
      for (int t = std::stoi(piece.substr(0, dash)); t <= std::stoi(piece.substr(dash + 1)); ++t) {
        out.push_back(t);
      }
    }
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shampoo-family preconditioners: training harness and property checks"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a toy task and write a CSV log and checkpoint");
  std::string config_path;
  std::map<std::string, std::string> train_values;
  bool refresh_lambda = false, parallel_layers = false, timing = false;
  train->add_option("--config", config_path, "key=value config file; flags override it");
  for (const char* key : kTrainKeys) {
    train->add_option(std::string("--") + key, train_values[key]);
  }
  train->add_flag("--refresh-lambda", refresh_lambda, "set lambda to diag(P) after each refresh");
  train->add_flag("--parallel-layers", parallel_layers, "step layers on separate threads");
  train->add_flag("--timing", timing, "record wall-clock time per step (non-deterministic)");

  // check-equivalence
  auto* equiv = app.add_subcommand("check-equivalence",
                                   "run both parametrizations in lockstep and compare iterates");
  EquivalenceOptions eq;
  std::string eq_dims = "8x12", eq_method = "kl-shampoo";
  equiv->add_option("--dims", eq_dims, "d1xd2");
  equiv->add_option("--steps", eq.steps);
  equiv->add_option("--T", eq.T);
  equiv->add_option("--seed", eq.seed);
  equiv->add_option("--method", eq_method);
  equiv->add_option("--lr", eq.gamma);
  equiv->add_option("--beta1", eq.beta1);
  equiv->add_option("--beta2", eq.beta2);
  equiv->add_option("--damping", eq.damping);
  equiv->add_flag("--skip-sign-fix", eq.skip_sign_fix,
                  "use an unsigned QR in the original parametrization (expected to fail)");

  // bench-decomp
  auto* bench = app.add_subcommand("bench-decomp", "time QR, subspace QR, eig and mm");
  BenchOptions bo;
  std::string bench_sizes = "512", bench_B = "1/4,1/2", bench_prec = "fp32", bench_out;
  bench->add_option("--sizes", bench_sizes, "comma separated matrix sizes");
  bench->add_option("--B", bench_B, "comma separated subspace fractions");
  bench->add_option("--precision", bench_prec);
  bench->add_option("--reps", bo.reps);
  bench->add_option("--seed", bo.seed);
  bench->add_option("--out", bench_out, "CSV path (default stdout)");

  // cost-audit
  auto* audit = app.add_subcommand("cost-audit", "check matrix-product counts of both paths");
  AuditOptions ao;
  std::string audit_dims = "8x8", audit_T = "1-10", audit_B = "1/2";
  audit->add_option("--dims", audit_dims, "d1xd2");
  audit->add_option("--T", audit_T, "intervals, e.g. 2-10 or 1,5,10");
  audit->add_option("--steps", ao.steps, "steps per interval (default 5T)");
  audit->add_option("--B", audit_B, "subspace fraction for the smm audit");
  audit->add_option("--K", ao.subspace_K);
  audit->add_option("--seed", ao.seed);

  // ckpt-dump
  auto* dump = app.add_subcommand("ckpt-dump", "print the contents of a checkpoint");
  std::string dump_path;
  dump->add_option("path", dump_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      RunConfig cfg;
      if (!config_path.empty()) apply_config_file(cfg, config_path);
      for (const char* key : kTrainKeys) {
        if (train->count(std::string("--") + key) > 0) apply_setting(cfg, key, train_values[key]);
      }
      if (refresh_lambda) cfg.optim.refresh_lambda = true;
      if (parallel_layers) cfg.parallel_layers = true;
      if (timing) cfg.timing = true;
      return cmd_train(cfg, std::cerr);
    }
    if (*equiv) {
      const auto d = parse_dims(eq_dims);
      if (d.size() != 2) throw ArgumentError("--dims expects d1xd2");
      eq.d1 = d[0];
      eq.d2 = d[1];
      eq.method = parse_method(eq_method);
      return cmd_check_equivalence(eq, std::cout);
    }
    if (*bench) {
      bo.sizes = parse_dims(bench_sizes);
      bo.fractions.clear();
      std::size_t start = 0;
      while (true) {
        const auto end = bench_B.find(',', start);
        bo.fractions.push_back(parse_rational(bench_B.substr(start, end - start)));
        if (end == std::string::npos) break;
        start = end + 1;
      }
      bo.precision = parse_precision(bench_prec);
      if (bench_out.empty()) return cmd_bench_decomp(bo, std::cout);
      std::ofstream out(bench_out, std::ios::binary | std::ios::trunc);
      if (!out) throw ArgumentError("cannot write '" + bench_out + "'");
      return cmd_bench_decomp(bo, out);
    }
    if (*audit) {
      const auto d = parse_dims(audit_dims);
      if (d.size() != 2) throw ArgumentError("--dims expects d1xd2");
      ao.d1 = d[0];
      ao.d2 = d[1];
      ao.intervals = parse_intervals(audit_T);
      ao.subspace_B = parse_rational(audit_B);
      return cmd_cost_audit(ao, std::cout);
    }
    if (*dump) return cmd_ckpt_dump(dump_path, std::cout, std::cerr);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
