#include "doctest.h"

#include "tcq/qat.hpp"

#include <cmath>

using namespace tcq;

namespace {

const std::vector<std::size_t> kDims{16, 16, 8};

ToyModel small_teacher(std::uint64_t seed = 1) {
  return make_teacher(kDims, 0.3, seed);
}

QatRunConfig quick_config(std::size_t n_steps = 6) {
  QatRunConfig c;
  c.n_steps = n_steps;
  c.schedule = naive_schedule(0.02, std::max<std::size_t>(n_steps, 1));
  c.calibration_size = 32;
  c.heldout_size = 64;
  c.n_windows = 8;
  return c;
}

double kl_loss(const ToyModel &teacher, const ToyModel &student, const Matrix &x) {
  return mean(kl_per_sample(forward_all(teacher, x).back(),
                            forward_all(student, x).back()));
}

} // namespace

TEST_CASE("Adam per-step bound") {
  CHECK(adam_step_bound(1, 0.9, 0.999) == doctest::Approx(1.0).epsilon(1e-14));
  for (std::size_t t = 1; t < 50; ++t)
    CHECK(adam_step_bound(t, 0.9, 0.999) >= 1.0 - 1e-12);
  // beta1 = beta2 = 0 reduces to sign-SGD
  CHECK(adam_step_bound(7, 0.0, 0.0) == doctest::Approx(1.0));
  CHECK(adam_drift_bound(1e-3, 0, 0.9, 0.999) == 0.0);
  CHECK(adam_drift_bound(1e-3, 1, 0.9, 0.999) == doctest::Approx(1e-3));
}

TEST_CASE("backprop matches finite differences of the end-task KL") {
  const ToyModel teacher = small_teacher();
  ToyModel student = teacher;
  for (auto &w : student.weights)
    for (auto &v : w.data)
      v *= 1.1;
  const Matrix x = standard_normal_batch(12, kDims[0], 3);
  const auto t_logits = forward_all(teacher, x).back();
  for (std::size_t layer = 0; layer < student.n_layers(); ++layer) {
    const auto h = forward_all(student, x)[layer];
    const auto acts = forward_from(student, layer, h);
    const Matrix d = kl_logit_grad(t_logits, acts.back());
    const Matrix g = backprop_to_layer(student, layer, acts, d);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < g.size(); i += 7) {
      ToyModel p = student, m = student;
      p.weights[layer].data[i] += eps;
      m.weights[layer].data[i] -= eps;
      const double fd = (kl_loss(teacher, p, x) - kl_loss(teacher, m, x)) / (2 * eps);
      CHECK(std::abs(fd - g.data[i]) <= 1e-7 + 1e-5 * std::abs(fd));
    }
  }
}

TEST_CASE("layer_weight_grad matches finite differences of a layer MSE") {
  const Matrix h = standard_normal_batch(5, 4, 9);
  Matrix w(3, 4);
  fill_normal(w.data, 10, 0.5);
  const Matrix target = standard_normal_batch(5, 3, 11);
  for (bool last : {false, true}) {
    auto loss = [&](const Matrix &ww) {
      const Matrix y = layer_forward(ww, h, last);
      double s = 0;
      for (std::size_t i = 0; i < y.size(); ++i)
        s += 0.5 * (y.data[i] - target.data[i]) * (y.data[i] - target.data[i]);
      return s;
    };
    const Matrix y = layer_forward(w, h, last);
    Matrix dy(y.rows, y.cols);
    for (std::size_t i = 0; i < y.size(); ++i)
      dy.data[i] = y.data[i] - target.data[i];
    const Matrix g = layer_weight_grad(h, y, dy, last);
    for (std::size_t i = 0; i < w.size(); ++i) {
      Matrix p = w, m = w;
      p.data[i] += 1e-6;
      m.data[i] -= 1e-6;
      const double fd = (loss(p) - loss(m)) / 2e-6;
      CHECK(std::abs(fd - g.data[i]) <= 1e-7 + 1e-6 * std::abs(fd));
    }
  }
}

TEST_CASE("eval_hardened windows") {
  const ToyModel teacher = small_teacher();
  const Matrix x = standard_normal_batch(50, kDims[0], 4);
  const auto same = eval_hardened(teacher, teacher, x, 7);
  CHECK(same.loss == 0.0);
  ToyModel student = teacher;
  student.weights[1].data[0] += 0.5;
  const auto ev = eval_hardened(teacher, student, x, 7);
  CHECK(ev.loss > 0.0);
  double total = 0, weighted = 0;
  for (std::size_t w = 0; w < 7; ++w) {
    total += ev.window_size[w];
    weighted += ev.per_window[w] * ev.window_size[w];
  }
  CHECK(total == 50.0);
  CHECK(weighted / 50.0 == doctest::Approx(ev.loss).epsilon(1e-12));
  CHECK(eval_hardened(teacher, student, x, 7).per_window == ev.per_window);
  CHECK_THROWS_AS(eval_hardened(teacher, student, x, 51), ParameterError);
  CHECK_THROWS_AS(eval_hardened(teacher, student, x, 0), ParameterError);
}

TEST_CASE("zero steps returns the warm start") {
  const ToyModel teacher = small_teacher();
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  auto cfg = quick_config(0);
  const auto r = run_qat(teacher, 1, cfg, trellis);
  CHECK(r.snapshot.bits == r.warm_start.bits);
  CHECK(r.hardened_weights == dequantize_matrix(r.warm_start, trellis));
  REQUIRE(r.trajectory.size() == 1);
  CHECK(r.trajectory[0].drift == 0.0);
}

TEST_CASE("step-0 hardened loss equals the PTQ evaluation exactly") {
  const ToyModel teacher = small_teacher(2);
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  const auto cfg = quick_config();
  for (std::size_t layer = 0; layer < teacher.n_layers(); ++layer) {
    const auto r = run_qat(teacher, layer, cfg, trellis);
    const auto ptq = ptq_layer(teacher, layer, cfg, trellis);
    CHECK(ptq == r.warm_start);
    const auto student = with_layer(teacher, layer, dequantize_matrix(ptq, trellis));
    const double expect =
        eval_hardened(teacher, student, heldout_inputs(cfg, teacher.d_in()), cfg.n_windows)
            .loss;
    CHECK(r.trajectory.front().hardened_loss == expect);
    CHECK(r.trajectory.front().step == 0);
    CHECK(r.trajectory.front().temperature == 1.0);
  }
}

TEST_CASE("a tiny learning rate leaves the code unchanged") {
  const ToyModel teacher = small_teacher();
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  auto cfg = quick_config(3);
  cfg.learning_rate = 1e-6;
  const auto r = run_qat(teacher, 0, cfg, trellis);
  CHECK(r.snapshot.bits == r.warm_start.bits);
  CHECK(r.trajectory.back().hardened_loss == r.trajectory.front().hardened_loss);
}

TEST_CASE("drift respects the optimizer bounds") {
  const ToyModel teacher = small_teacher();
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  for (auto opt : {OptimizerKind::Sgd, OptimizerKind::Adam}) {
    auto cfg = quick_config(10);
    cfg.optimizer = opt;
    cfg.learning_rate = opt == OptimizerKind::Sgd ? 0.05 : 2e-3;
    cfg.grad_clip = 0.5;
    const auto r = run_qat(teacher, 1, cfg, trellis);
    CHECK_FALSE(r.aborted);
    for (const auto &c : r.trajectory) {
      if (opt == OptimizerKind::Sgd) {
        CHECK(c.drift <= cfg.learning_rate * static_cast<double>(c.step) * 0.5 + 1e-12);
      } else {
        CHECK(c.drift <= c.adam_drift_bound + 1e-12);
      }
    }
    CHECK(r.trajectory.back().drift > 0.0);
  }
}

TEST_CASE("checkpoint cadence") {
  const ToyModel teacher = small_teacher();
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  auto cfg = quick_config(7);
  cfg.checkpoint_every = 3;
  const auto r = run_qat(teacher, 0, cfg, trellis);
  std::vector<std::size_t> steps;
  for (const auto &c : r.trajectory)
    steps.push_back(c.step);
  CHECK(steps == std::vector<std::size_t>{0, 3, 6, 7});
  CHECK(r.trajectory.back().temperature == 0.02);
  const auto csv = trajectory_csv(r.trajectory);
  CHECK(csv.rfind("step,T,soft_loss,hardened_loss,drift,sgd_drift_bound,adam_drift_bound\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("STE forward and per-layer MSE objective run") {
  const ToyModel teacher = small_teacher();
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  auto cfg = quick_config(4);
  cfg.forward = ForwardMode::Ste;
  cfg.objective = Objective::PerLayerMSE;
  const auto a = run_qat(teacher, 0, cfg, trellis);
  CHECK_FALSE(a.aborted);
  CHECK(std::isfinite(a.trajectory.back().soft_loss));
  const auto b = run_qat(teacher, 0, cfg, trellis);
  CHECK(a.snapshot == b.snapshot);
  cfg.impl = BcjrImpl::Fused;
  const auto c = run_qat(teacher, 0, cfg, trellis);
  CHECK(std::isfinite(c.trajectory.back().hardened_loss));
}

TEST_CASE("greedy pipeline") {
  const ToyModel teacher = small_teacher();
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  const auto cfg = quick_config(4);
  const auto all = run_greedy_pipeline(teacher, cfg, trellis);
  REQUIRE(all.size() == 2);
  const auto first = run_qat(teacher, 0, cfg, trellis);
  CHECK(all[0].snapshot == first.snapshot);
  // the second layer sees the compressed first layer
  const auto alone = run_qat(teacher, 1, cfg, trellis);
  CHECK(all[1].trajectory.front().soft_loss != alone.trajectory.front().soft_loss);
}

TEST_CASE("a teacher on the code lattice has zero hardened loss at step 0") {
  const TrellisConfig trellis = build_trellis(16, 2, 2, 0);
  auto cfg = quick_config(2);
  cfg.scale_bits = 0;
  cfg.incoherence = false;
  bool found = false;
  for (std::uint64_t seed = 0; seed < 20 && !found; ++seed) {
    ToyModel t = small_teacher(seed);
    for (std::size_t l = 0; l < t.n_layers(); ++l)
      t.weights[l] = dequantize_matrix(ptq_layer(t, l, cfg, trellis), trellis);
    bool fixed = true;
    for (std::size_t l = 0; l < t.n_layers(); ++l)
      fixed = fixed &&
              dequantize_matrix(ptq_layer(t, l, cfg, trellis), trellis) == t.weights[l];
    if (!fixed)
      continue;
    found = true;
    for (const auto &r : run_greedy_pipeline(t, cfg, trellis))
      CHECK(r.trajectory.front().hardened_loss <= 1e-20);
  }
  CHECK(found);
}

TEST_CASE("QAT config validation and JSON") {
  QatRunConfig c = quick_config(5);
  CHECK_NOTHROW(validate(c));
  c.schedule = naive_schedule(0.02, 6);
  CHECK_THROWS_AS(validate(c), ParameterError);
  c.schedule = naive_schedule(0.02, 5);
  CHECK(qat_run_config_from_json(to_json(c)).n_steps == 5);
  CHECK(to_json(qat_run_config_from_json(to_json(c))) == to_json(c));
  CHECK_THROWS_AS(qat_run_config_from_json(parse_json(R"({"lr": 1})")), FormatError);
  CHECK_THROWS_AS(qat_run_config_from_json(parse_json(R"({"n_steps": -1})")), FormatError);
  c.learning_rate = -1;
  CHECK_THROWS_AS(validate(c), ParameterError);
}
