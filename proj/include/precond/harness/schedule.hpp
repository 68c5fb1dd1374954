#pragma once

#include <cstdint>
#include <string_view>

namespace precond::harness {

enum class ScheduleKind { Constant, Cosine, WarmupConstant };

std::string_view to_string(ScheduleKind k);
ScheduleKind parse_schedule(std::string_view s);

/// Learning rate as a function of the step index t in [0, total).
///
/// cosine: gamma at t = 0 down to gamma_min at t = total - 1, both exact.
/// warmup-constant: gamma (t + 1) / warmup for t < warmup, then gamma, then a
/// linear cooldown gamma (total - t) / cooldown over the last `cooldown` steps.
struct Schedule {
  ScheduleKind kind = ScheduleKind::Constant;
  double gamma = 1e-3;
  double gamma_min = 0.0;
  std::uint64_t total = 1;
  std::uint64_t warmup = 0;
  std::uint64_t cooldown = 0;

  double at(std::uint64_t t) const;
};

}  // namespace precond::harness
