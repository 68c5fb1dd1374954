#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace precond::harness {

/// One row of a training log. Counts are cumulative over all layers.
struct RunRecord {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  double eval_loss = 0.0;
  std::uint64_t mm = 0;
  std::uint64_t smm = 0;
  std::uint64_t qr = 0;
  std::uint64_t eig = 0;
  std::optional<double> offdiag_p1;  // empty for the original parametrization
  std::optional<double> offdiag_p2;
  double wall_ms = 0.0;
};

/// Shortest round-trip decimal form, '.' separator, locale independent.
std::string format_double(double x);

std::string csv_header();
std::string csv_row(const RunRecord& r);

/// Writes header plus rows, LF line endings.
void write_csv(std::ostream& out, const std::vector<RunRecord>& rows);

/// Generic table writer used by the bench and audit commands.
std::string csv_line(const std::vector<std::string>& fields);

}  // namespace precond::harness
