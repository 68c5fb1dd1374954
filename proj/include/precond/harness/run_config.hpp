#pragma once

// Flat key=value run configuration. Keys mirror the long CLI flags without
// the leading dashes; a file is applied first and flags override it.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "precond/config.hpp"
#include "precond/harness/schedule.hpp"
#include "precond/harness/tasks.hpp"

namespace precond::harness {

/// Bad configuration: `line` is 0 for values that came from the command line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, std::string field, const std::string& message);
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

struct RunConfig {
  OptimConfig optim;
  TaskSpec task;
  std::uint64_t steps = 100;
  ScheduleKind schedule = ScheduleKind::Constant;
  double lr_min = 0.0;
  std::uint64_t warmup = 0;
  std::uint64_t cooldown = 0;
  std::string out = "run.csv";
  std::string ckpt;  // empty: <out>.kprc
  bool parallel_layers = false;
  bool timing = false;

  Schedule make_schedule() const;
  std::string checkpoint_path() const;
};

/// "0.25", "1/4" or "1" -> 0.25, 0.25, 1.
double parse_rational(std::string_view s);

/// Sets one key. Throws ConfigError(line, key, ...) for unknown keys and bad
/// values.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value,
                   std::size_t line = 0);

/// Applies every line of a key=value text. '#' starts a comment.
void apply_config_text(RunConfig& cfg, std::string_view text);
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Cross-field checks; throws ConfigError.
void validate(const RunConfig& cfg);

}  // namespace precond::harness
