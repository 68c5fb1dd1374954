#include "precond/harness/csv.hpp"

#include <charconv>
#include <cmath>

namespace precond::harness {

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string csv_header() {
  return "step,train_loss,eval_loss,mm,smm,qr,eig,offdiag_p1,offdiag_p2,wall_ms";
}

std::string csv_row(const RunRecord& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  return csv_line({std::to_string(r.step), format_double(r.train_loss), format_double(r.eval_loss),
                   std::to_string(r.mm), std::to_string(r.smm), std::to_string(r.qr),
                   std::to_string(r.eig), opt(r.offdiag_p1), opt(r.offdiag_p2),
                   format_double(r.wall_ms)});
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += fields[i];
  }
  return line;
}

void write_csv(std::ostream& out, const std::vector<RunRecord>& rows) {
  out << csv_header() << '\n';
  for (const RunRecord& r : rows) out << csv_row(r) << '\n';
}

}  // namespace precond::harness
