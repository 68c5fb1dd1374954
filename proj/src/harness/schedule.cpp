#include "precond/harness/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "precond/errors.hpp"

namespace precond::harness {

std::string_view to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::WarmupConstant: return "warmup-constant";
  }
  return "?";
}

ScheduleKind parse_schedule(std::string_view s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "warmup-constant") return ScheduleKind::WarmupConstant;
  throw ArgumentError("unknown schedule '" + std::string(s) + "'");
}

double Schedule::at(std::uint64_t t) const {
  switch (kind) {
    case ScheduleKind::Constant:
      return gamma;
    case ScheduleKind::Cosine: {
      if (t == 0 || total <= 1) return gamma;
      if (t >= total - 1) return gamma_min;
      const double frac = static_cast<double>(t) / static_cast<double>(total - 1);
      return gamma_min + (gamma - gamma_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    }
    case ScheduleKind::WarmupConstant: {
      if (t < warmup) return gamma * static_cast<double>(t + 1) / static_cast<double>(warmup);
      if (cooldown > 0 && t + cooldown >= total) {
        const std::uint64_t left = total > t ? total - t : 0;
        return gamma * static_cast<double>(std::min(left, cooldown)) /
               static_cast<double>(cooldown);
      }
      return gamma;
    }
  }
  return gamma;
}

}  // namespace precond::harness
