#include "precond/harness/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "precond/errors.hpp"

namespace precond::harness {

namespace {

std::string describe(std::size_t line, const std::string& field, const std::string& message) {
  std::string out = line > 0 ? "line " + std::to_string(line) + ": " : std::string();
  if (!field.empty()) out += "field '" + field + "': ";
  return out + message;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view s) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ArgumentError("not a number: '" + std::string(s) + "'");
  }
  return value;
}

bool parse_bool(std::string_view s) {
  if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
  if (s == "0" || s == "false" || s == "no" || s == "off") return false;
  throw ArgumentError("not a boolean: '" + std::string(s) + "'");
}

std::vector<std::size_t> parse_dims(std::string_view s) {
  std::vector<std::size_t> dims;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find_first_of("x,", start);
    const auto piece = s.substr(start, end == std::string_view::npos ? s.npos : end - start);
    dims.push_back(parse_number<std::size_t>(trim(piece)));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return dims;
}

}  // namespace

ConfigError::ConfigError(std::size_t line, std::string field, const std::string& message)
    : std::runtime_error(describe(line, field, message)), line_(line), field_(std::move(field)) {}

Schedule RunConfig::make_schedule() const {
  return Schedule{schedule, optim.gamma, lr_min, steps, warmup, cooldown};
}

std::string RunConfig::checkpoint_path() const { return ckpt.empty() ? out + ".kprc" : ckpt; }

double parse_rational(std::string_view s) {
  s = trim(s);
  const auto slash = s.find('/');
  if (slash == std::string_view::npos) return parse_number<double>(s);
  const double num = parse_number<double>(trim(s.substr(0, slash)));
  const double den = parse_number<double>(trim(s.substr(slash + 1)));
  if (den == 0.0) throw ArgumentError("zero denominator");
  return num / den;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value,
                   std::size_t line) {
  const std::string k(key);
  value = trim(value);
  try {
    OptimConfig& o = cfg.optim;
    if (k == "method") o.method = parse_method(value);
    else if (k == "param") o.parametrization = parse_parametrization(value);
    else if (k == "precision") o.storage = parse_precision(value);
    else if (k == "T") o.interval_T = parse_number<int>(value);
    else if (k == "B") o.subspace_fraction_B = parse_rational(value);
    else if (k == "K") o.inner_steps_K = parse_number<int>(value);
    else if (k == "select") o.selection = parse_selection(value);
    else if (k == "basis") o.basis_solver = parse_basis_solver(value);
    else if (k == "lr") o.gamma = parse_number<double>(value);
    else if (k == "beta1") o.beta1 = parse_number<double>(value);
    else if (k == "beta2") o.beta2 = parse_number<double>(value);
    else if (k == "damping") o.damping = parse_number<double>(value);
    else if (k == "wd") o.weight_decay = parse_number<double>(value);
    else if (k == "seed") o.seed = parse_number<std::uint64_t>(value);
    else if (k == "refresh-lambda") o.refresh_lambda = parse_bool(value);
    else if (k == "rotate-v") o.rotate_v = parse_rotate_v(value);
    else if (k == "steps") cfg.steps = parse_number<std::uint64_t>(value);
    else if (k == "task") cfg.task.kind = parse_task(value);
    else if (k == "dims") cfg.task.dims = parse_dims(value);
    else if (k == "batch") cfg.task.batch_size = parse_number<std::size_t>(value);
    else if (k == "noise") cfg.task.noise_scale = parse_number<double>(value);
    else if (k == "dataset-seed") cfg.task.dataset_seed = parse_number<std::uint64_t>(value);
    else if (k == "schedule") cfg.schedule = parse_schedule(value);
    else if (k == "lr-min") cfg.lr_min = parse_number<double>(value);
    else if (k == "warmup") cfg.warmup = parse_number<std::uint64_t>(value);
    else if (k == "cooldown") cfg.cooldown = parse_number<std::uint64_t>(value);
    else if (k == "out") cfg.out = std::string(value);
    else if (k == "ckpt") cfg.ckpt = std::string(value);
    else if (k == "parallel-layers") cfg.parallel_layers = parse_bool(value);
    else if (k == "timing") cfg.timing = parse_bool(value);
    else throw ConfigError(line, k, "unknown key");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(line, k, e.what());
  }
}

void apply_config_text(RunConfig& cfg, std::string_view text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "", "expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(line_no, "", "empty key");
    apply_setting(cfg, key, line.substr(eq + 1), line_no);
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(0, "config", "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

void validate(const RunConfig& cfg) {
  try {
    cfg.optim.validate();
  } catch (const std::exception& e) {
    throw ConfigError(0, "", e.what());
  }
  if (cfg.steps < 1) throw ConfigError(0, "steps", "must be >= 1");
  if (cfg.schedule == ScheduleKind::WarmupConstant && cfg.warmup + cfg.cooldown > cfg.steps) {
    throw ConfigError(0, "warmup", "warmup + cooldown exceeds steps");
  }
  if (cfg.out.empty()) throw ConfigError(0, "out", "must not be empty");
}

}  // namespace precond::harness
