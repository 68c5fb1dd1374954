#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "precond/errors.hpp"
#include "precond/harness/checkpoint.hpp"
#include "precond/harness/commands.hpp"
#include "precond/harness/csv.hpp"
#include "precond/harness/run_config.hpp"
#include "precond/harness/schedule.hpp"
#include "precond/harness/tasks.hpp"
#include "precond/optimizer.hpp"
#include "precond/shampoo.hpp"

using namespace precond;
using namespace precond::harness;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("precond_test_" + name)).string();
}

RunConfig small_run(TaskKind kind, Method m = Method::KlShampoo,
                    Parametrization p = Parametrization::New) {
  RunConfig cfg;
  cfg.task.kind = kind;
  cfg.optim.method = m;
  cfg.optim.parametrization = p;
  cfg.optim.storage = Precision::FP64;
  cfg.optim.gamma = 0.01;
  cfg.optim.damping = 1e-3;
  cfg.optim.interval_T = 2;
  cfg.steps = 12;
  return cfg;
}

std::string csv_text(const std::vector<RunRecord>& rows) {
  std::ostringstream os;
  write_csv(os, rows);
  return os.str();
}

}  // namespace

TEST_CASE("task gradients match central differences") {
  const std::vector<TaskSpec> specs{
      {TaskKind::Quadratic, {4, 5}, 1, 0, 0.0},
      {TaskKind::MatrixFactorization, {6, 5, 2}, 2, 0, 0.1},
      {TaskKind::SoftmaxRegression, {4, 3, 20}, 3, 0, 0.1},
      {TaskKind::TwoLayerMlp, {3, 5, 2, 12}, 4, 0, 0.1},
  };
  for (const TaskSpec& spec : specs) {
    CAPTURE(to_string(spec.kind));
    const auto task = make_task(spec);
    Params params = task->initial_params(7);
    // Move off the initial point so no gradient is trivially zero.
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 0.3);
    for (StorageMatrix& p : params)
      for (std::size_t i = 0; i < p.size(); ++i) p.set(i, p.get(i) + n(rng));

    Params grads;
    task->evaluate(params, Batch{}, &grads);
    REQUIRE(grads.size() == params.size());
    const double h = 1e-6;
    for (std::size_t l = 0; l < params.size(); ++l) {
      double gmax = 0.0, err = 0.0;
      for (std::size_t i = 0; i < params[l].size(); ++i) {
        const double x = params[l].get(i);
        params[l].set(i, x + h);
        const double up = task->full_loss(params);
        params[l].set(i, x - h);
        const double down = task->full_loss(params);
        params[l].set(i, x);
        const double fd = (up - down) / (2 * h);
        gmax = std::max(gmax, std::abs(grads[l].get(i)));
        err = std::max(err, std::abs(fd - grads[l].get(i)));
      }
      CHECK(err <= 1e-4 * gmax);
    }
  }
}

TEST_CASE("task shapes and parsing") {
  CHECK(parse_task("quadratic") == TaskKind::Quadratic);
  CHECK(parse_task("mf") == TaskKind::MatrixFactorization);
  CHECK(parse_task("softmax-regression") == TaskKind::SoftmaxRegression);
  CHECK(parse_task("mlp") == TaskKind::TwoLayerMlp);
  CHECK_THROWS(parse_task("resnet"));
  const auto mlp = make_task({TaskKind::TwoLayerMlp, {3, 5, 2, 12}, 0, 0, 0.0});
  const auto shapes = mlp->shapes();
  REQUIRE(shapes.size() == 2);
  CHECK(shapes[0] == std::pair<std::size_t, std::size_t>{5, 3});
  CHECK(shapes[1] == std::pair<std::size_t, std::size_t>{2, 5});
  const auto quad = make_task({TaskKind::Quadratic, {3, 4}, 0, 0, 0.0});
  REQUIRE(quad->optimum());
  CHECK(*quad->optimum() == 0.0);
}

TEST_CASE("schedules") {
  Schedule cos{ScheduleKind::Cosine, 0.3, 0.01, 101, 0, 0};
  CHECK(cos.at(0) == 0.3);
  CHECK(cos.at(100) == 0.01);
  CHECK(cos.at(50) == doctest::Approx(0.155).epsilon(1e-12));
  for (std::uint64_t t = 1; t < 101; ++t) CHECK(cos.at(t) <= cos.at(t - 1));

  Schedule warm{ScheduleKind::WarmupConstant, 0.2, 0.0, 100, 10, 20};
  for (std::uint64_t t = 0; t < 10; ++t)
    CHECK(std::abs(warm.at(t) - 0.2 * double(t + 1) / 10) <= 1e-16);
  CHECK(warm.at(10) == 0.2);
  CHECK(warm.at(79) == 0.2);
  CHECK(warm.at(80) == doctest::Approx(0.2));
  CHECK(warm.at(99) == doctest::Approx(0.2 / 20));

  Schedule constant{ScheduleKind::Constant, 0.7, 0.0, 5, 0, 0};
  for (std::uint64_t t = 0; t < 5; ++t) CHECK(constant.at(t) == 0.7);
  CHECK(parse_schedule("cosine") == ScheduleKind::Cosine);
  CHECK_THROWS(parse_schedule("linear"));
}

TEST_CASE("config parsing") {
  RunConfig cfg;
  apply_config_text(cfg,
                    "# comment\n"
                    "method = kl-soap\n"
                    "param=old\n"
                    "precision=bf16\n"
                    "T=4\nB=1/4\nK=3\nselect=greedy\nbasis=eig\n"
                    "lr=0.02  # trailing\n"
                    "steps=50\ntask=mf\ndims=10x8x2\nrotate-v=approx\nrefresh-lambda=true\n");
  CHECK(cfg.optim.method == Method::KlSoap);
  CHECK(cfg.optim.parametrization == Parametrization::Old);
  CHECK(cfg.optim.storage == Precision::BF16);
  CHECK(cfg.optim.interval_T == 4);
  CHECK(cfg.optim.subspace_fraction_B == 0.25);
  CHECK(cfg.optim.inner_steps_K == 3);
  CHECK(cfg.optim.selection == Selection::Greedy);
  CHECK(cfg.optim.basis_solver == BasisSolver::Eig);
  CHECK(cfg.optim.gamma == 0.02);
  CHECK(cfg.optim.rotate_v == RotateV::Approx);
  CHECK(cfg.optim.refresh_lambda);
  CHECK(cfg.steps == 50);
  CHECK(cfg.task.kind == TaskKind::MatrixFactorization);
  CHECK(cfg.task.dims == std::vector<std::size_t>{10, 8, 2});

  // Command-line values override the file.
  apply_setting(cfg, "lr", "0.5");
  CHECK(cfg.optim.gamma == 0.5);

  CHECK(parse_rational("1/2") == 0.5);
  CHECK(parse_rational("0.125") == 0.125);
  CHECK_THROWS(parse_rational("1/0"));
  CHECK_THROWS(parse_rational("x"));
}

TEST_CASE("config errors name line and field") {
  RunConfig cfg;
  try {
    apply_config_text(cfg, "lr=0.1\n\nmomentum=0.9\n");
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 3);
    CHECK(e.field() == "momentum");
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  try {
    apply_config_text(cfg, "T=abc\n");
    FAIL("bad integer accepted");
  } catch (const ConfigError& e) {
    CHECK(e.line() == 1);
    CHECK(e.field() == "T");
  }
  CHECK_THROWS_AS(apply_config_text(cfg, "no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "precision", "fp16"), ConfigError);

  RunConfig bad;
  bad.optim.interval_T = 0;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("csv formatting") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e-300) == "1e-300");
  CHECK(format_double(-2.0) == "-2");
  CHECK(std::stod(format_double(1.0 / 3.0)) == 1.0 / 3.0);
  CHECK(csv_header() == "step,train_loss,eval_loss,mm,smm,qr,eig,offdiag_p1,offdiag_p2,wall_ms");
  RunRecord r;
  r.step = 3;
  r.train_loss = 0.5;
  r.eval_loss = 0.25;
  r.mm = 7;
  CHECK(csv_row(r) == "3,0.5,0.25,7,0,0,0,,,0");
  r.offdiag_p1 = 1.5;
  r.offdiag_p2 = 2.0;
  CHECK(csv_row(r) == "3,0.5,0.25,7,0,0,0,1.5,2,0");
  const std::string text = csv_text({r, r});
  CHECK(text.find('\r') == std::string::npos);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("training is deterministic") {
  for (TaskKind kind : {TaskKind::Quadratic, TaskKind::SoftmaxRegression}) {
    RunConfig cfg = small_run(kind, Method::KlSoap);
    cfg.task.batch_size = kind == TaskKind::SoftmaxRegression ? 32 : 0;
    const TrainResult a = run_training(cfg), b = run_training(cfg);
    REQUIRE(a.exit_code == kExitOk);
    CHECK(csv_text(a.records) == csv_text(b.records));
    CHECK(encode({to_record(a.layers[0])}) == encode({to_record(b.layers[0])}));
    for (std::size_t i = 1; i < a.records.size(); ++i) CHECK(a.records[i].step > a.records[i - 1].step);
  }
}

TEST_CASE("parallel layers give the same run") {
  RunConfig cfg = small_run(TaskKind::TwoLayerMlp);
  const TrainResult a = run_training(cfg);
  cfg.parallel_layers = true;
  const TrainResult b = run_training(cfg);
  CHECK(csv_text(a.records) == csv_text(b.records));
}

TEST_CASE("zero learning rate keeps the loss constant") {
  RunConfig cfg = small_run(TaskKind::MatrixFactorization, Method::KlShampoo, Parametrization::Old);
  cfg.optim.gamma = 0.0;
  const TrainResult r = run_training(cfg);
  REQUIRE(r.exit_code == kExitOk);
  for (const RunRecord& rec : r.records) CHECK(rec.eval_loss == r.records.front().eval_loss);
}

TEST_CASE("training counts products") {
  RunConfig cfg = small_run(TaskKind::Quadratic);
  cfg.optim.interval_T = 1;
  cfg.steps = 3;
  const TrainResult r = run_training(cfg);
  REQUIRE(r.records.size() == 3);
  // 4 + 6 + 4 per step at T = 1 for the new parametrization.
  CHECK(r.records[0].mm == 14);
  CHECK(r.records[2].mm == 42);
  CHECK(r.records[2].qr == 6);
  CHECK(r.records[0].offdiag_p1);
}

TEST_CASE("checkpoint round trip") {
  for (Precision prec : {Precision::FP64, Precision::FP32, Precision::BF16}) {
    RunConfig cfg = small_run(TaskKind::TwoLayerMlp, Method::Soap);
    cfg.optim.storage = prec;
    const TrainResult r = run_training(cfg);
    REQUIRE(r.exit_code == kExitOk);
    const std::string path = temp_path("roundtrip.kprc");
    save_checkpoint(path, r.layers);
    const auto back = load_checkpoint(path, prec);
    REQUIRE(back.size() == r.layers.size());
    for (std::size_t l = 0; l < back.size(); ++l) {
      const LayerState& x = r.layers[l];
      const LayerState& y = back[l];
      CHECK(x.theta.bitwise_equal(y.theta));
      CHECK(x.factor1.basis().bitwise_equal(y.factor1.basis()));
      CHECK(x.factor2.companion().bitwise_equal(y.factor2.companion()));
      CHECK(x.factor1.lambda_storage().bitwise_equal(y.factor1.lambda_storage()));
      CHECK(x.moments->m.bitwise_equal(y.moments->m));
      CHECK(x.moments->d_second.bitwise_equal(y.moments->d_second));
      CHECK(x.moments->t == y.moments->t);
      CHECK(x.step_count == y.step_count);
      CHECK(y.method == Method::Soap);
      CHECK(y.factor1.basis().precision() == prec);
    }
    CHECK(encode([&] {
            std::vector<LayerRecord> v;
            for (const auto& s : back) v.push_back(to_record(s));
            return v;
          }()) == encode([&] {
            std::vector<LayerRecord> v;
            for (const auto& s : r.layers) v.push_back(to_record(s));
            return v;
          }()));
    std::remove(path.c_str());
  }
}

TEST_CASE("restored state continues the same trajectory") {
  OptimConfig c;
  c.storage = Precision::BF16;
  c.interval_T = 3;
  LayerState s = init_layer(4, 3, c);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  auto grad = [&] {
    std::vector<double> v(12);
    for (double& x : v) x = n(rng);
    return StorageMatrix::from_values(4, 3, v, Precision::FP32);
  };
  for (int t = 0; t < 5; ++t) step(s, grad(), c);
  LayerState copy = from_record(decode(encode({to_record(s)}))[0], Precision::BF16, 0);
  const StorageMatrix g = grad();
  step(s, g, c);
  step(copy, g, c);
  CHECK(s.theta.bitwise_equal(copy.theta));
  CHECK(s.factor2.basis().bitwise_equal(copy.factor2.basis()));
}

TEST_CASE("checkpoint errors") {
  OptimConfig c;
  c.storage = Precision::FP32;
  const std::vector<std::byte> good = encode({to_record(init_layer(3, 2, c))});

  SUBCASE("magic") {
    auto bytes = good;
    bytes[0] = std::byte{'X'};
    try {
      decode(bytes);
      FAIL("bad magic accepted");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::Format);
    }
  }

  SUBCASE("version") {
    auto bytes = good;
    bytes[4] = std::byte{9};
    CHECK_THROWS_AS(decode(bytes), CheckpointError);
  }

  SUBCASE("truncation at every length") {
    for (std::size_t len = 0; len < good.size(); ++len) {
      const std::vector<std::byte> cut(good.begin(), good.begin() + static_cast<long>(len));
      try {
        decode(cut);
        FAIL("truncated file accepted at length " << len);
      } catch (const CheckpointError& e) {
        CHECK(e.kind() == CheckpointError::Kind::Io);
      }
    }
  }

  SUBCASE("trailing bytes") {
    auto bytes = good;
    bytes.push_back(std::byte{0});
    CHECK_THROWS_AS(decode(bytes), CheckpointError);
  }

  SUBCASE("unknown dtype code") {
    // First tensor header sits after magic, version, count, param, method.
    auto bytes = good;
    bytes[12] = std::byte{3};
    try {
      decode(bytes);
      FAIL("dtype 3 accepted");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::Format);
    }
  }

  SUBCASE("missing file") {
    try {
      read_records(temp_path("does_not_exist.kprc"));
      FAIL("missing file accepted");
    } catch (const CheckpointError& e) {
      CHECK(e.kind() == CheckpointError::Kind::Io);
    }
  }
}

TEST_CASE("precision guard enumerates dtype codes") {
  const Precision all[] = {Precision::FP64, Precision::FP32, Precision::BF16};
  for (Precision saved : all) {
    OptimConfig c;
    c.storage = saved;
    c.method = Method::KlSoap;
    const LayerRecord rec = to_record(init_layer(3, 2, c));
    for (Precision expected : all) {
      CAPTURE(to_string(saved));
      CAPTURE(to_string(expected));
      if (saved == expected) {
        CHECK_NOTHROW(from_record(rec, expected, 0));
      } else {
        try {
          from_record(rec, expected, 0);
          FAIL("precision mismatch accepted");
        } catch (const CheckpointError& e) {
          CHECK(e.kind() == CheckpointError::Kind::PrecisionMismatch);
        }
      }
    }
    CHECK_NOTHROW(from_record(rec, std::nullopt, 0));
  }
}

TEST_CASE("cost audit passes") {
  const AuditResult r = run_cost_audit({});
  for (const auto& line : r.lines) MESSAGE(line);
  CHECK(r.pass);
}

TEST_CASE("equivalence checker") {
  EquivalenceOptions opt;
  opt.steps = 50;
  SUBCASE("first step from zero is identical") {
    opt.T = 1;
    opt.steps = 1;
    const auto r = run_equivalence(opt);
    CHECK(r.pass());
    CHECK(r.max_theta_rel <= 1e-15);
  }
  SUBCASE("lockstep run passes") {
    const auto r = run_equivalence(opt);
    CHECK(r.pass());
    CHECK(r.max_theta_rel <= 1e-9);
    CHECK(r.max_p_dev <= 1e-10);
  }
  SUBCASE("unsigned QR in one path is caught") {
    opt.skip_sign_fix = true;
    const auto r = run_equivalence(opt);
    CHECK(!r.pass());
    std::ostringstream out;
    CHECK(cmd_check_equivalence(opt, out) == kExitViolation);
  }
}

TEST_CASE("bench smoke") {
  BenchOptions opt;
  opt.sizes = {2};
  opt.fractions = {0.5};
  opt.reps = 1;
  const auto rows = run_bench(opt);
  CHECK(rows.size() == 4);
  for (const auto& row : rows) CHECK(row.median_ms >= 0.0);
  CHECK(bench_ordering_violations(rows).empty());

  std::vector<BenchRow> fake{{"full_qr", 512, 1.0, 1.0}, {"subspace_qr", 512, 0.25, 2.0},
                             {"subspace_qr", 512, 0.5, 0.5}, {"full_eig", 512, 1.0, 3.0},
                             {"mm", 512, 1.0, 0.1}};
  CHECK(!bench_ordering_violations(fake).empty());
}

TEST_CASE("train command writes csv and checkpoint") {
  RunConfig cfg = small_run(TaskKind::Quadratic);
  cfg.out = temp_path("train.csv");
  std::ostringstream log;
  REQUIRE(cmd_train(cfg, log) == kExitOk);
  std::ifstream in(cfg.out);
  std::string header;
  std::getline(in, header);
  CHECK(header == csv_header());
  CHECK(read_records(cfg.checkpoint_path()).size() == 1);
  std::ostringstream dump, err;
  CHECK(cmd_ckpt_dump(cfg.checkpoint_path(), dump, err) == kExitOk);
  CHECK(dump.str().find("theta") != std::string::npos);
  std::remove(cfg.out.c_str());
  std::remove(cfg.checkpoint_path().c_str());

  RunConfig bad = cfg;
  bad.optim.subspace_fraction_B = 2.0;
  CHECK(cmd_train(bad, log) == kExitConfig);
}

TEST_CASE("numerical failure exits with the step") {
  RunConfig cfg = small_run(TaskKind::Quadratic);
  cfg.optim.gamma = 1e300;
  cfg.optim.damping = 1e-300;
  const TrainResult r = run_training(cfg);
  CHECK(r.exit_code == kExitNumerical);
  CHECK(r.error.find("step") != std::string::npos);
}
