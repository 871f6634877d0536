#include "tcq/qat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <type_traits>

namespace tcq {

std::string to_string(Objective o) {
  return o == Objective::PerLayerMSE ? "per_layer_mse" : "end_to_end_kl";
}
std::string to_string(OptimizerKind o) {
  return o == OptimizerKind::Adam ? "adam" : "sgd";
}
std::string to_string(ForwardMode m) {
  return m == ForwardMode::Soft ? "soft" : "ste";
}

namespace {

Objective objective_from_string(const std::string &s) {
  if (s == "per_layer_mse")
    return Objective::PerLayerMSE;
  if (s == "end_to_end_kl")
    return Objective::EndToEndKL;
  throw ParameterError("unknown objective: " + s);
}
OptimizerKind optimizer_from_string(const std::string &s) {
  if (s == "adam")
    return OptimizerKind::Adam;
  if (s == "sgd")
    return OptimizerKind::Sgd;
  throw ParameterError("unknown optimizer: " + s);
}
ForwardMode forward_mode_from_string(const std::string &s) {
  if (s == "soft")
    return ForwardMode::Soft;
  if (s == "ste")
    return ForwardMode::Ste;
  throw ParameterError("unknown forward mode: " + s);
}

bool positive(double x) { return std::isfinite(x) && x > 0.0; }

} // namespace

void validate(const QatRunConfig &c) {
  if (!positive(c.learning_rate))
    throw ParameterError("learning_rate must be positive");
  if (!positive(c.grad_clip))
    throw ParameterError("grad_clip must be positive");
  if (c.calibration_size < 1 || c.heldout_size < 1)
    throw ParameterError("calibration and held-out sizes must be >= 1");
  if (c.n_windows < 1 || c.n_windows > c.heldout_size)
    throw ParameterError("n_windows must be in [1, heldout_size]");
  if (c.group_size < 1 || c.scale_bits > 16)
    throw ParameterError("invalid scale layout");
  if (c.checkpoint_every < 1 || c.chunk < 1)
    throw ParameterError("checkpoint_every and chunk must be >= 1");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 > 0.0 &&
        c.adam_beta2 < 1.0 && c.adam_eps >= 0.0))
    throw ParameterError("invalid Adam hyperparameters");
  validate(c.schedule);
  if (c.n_steps > 0 && c.schedule.n_steps != c.n_steps)
    throw ParameterError("schedule.n_steps must equal n_steps");
}

Json to_json(const QatRunConfig &c) {
  return Json{{"objective", to_string(c.objective)},
              {"learning_rate", c.learning_rate},
              {"n_steps", c.n_steps},
              {"schedule", to_json(c.schedule)},
              {"grad_clip", c.grad_clip},
              {"seed", c.seed},
              {"calibration_size", c.calibration_size},
              {"heldout_size", c.heldout_size},
              {"n_windows", c.n_windows},
              {"scale_bits", c.scale_bits},
              {"group_size", c.group_size},
              {"optimizer", to_string(c.optimizer)},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"forward", to_string(c.forward)},
              {"bcjr_impl", to_string(c.impl)},
              {"chunk", c.chunk},
              {"workers", c.workers},
              {"incoherence", c.incoherence},
              {"checkpoint_every", c.checkpoint_every}};
}

QatRunConfig qat_run_config_from_json(const Json &j) {
  require_known_keys(
      j,
      {"objective", "learning_rate", "n_steps", "schedule", "grad_clip", "seed",
       "calibration_size", "heldout_size", "n_windows", "scale_bits",
       "group_size", "optimizer", "adam_beta1", "adam_beta2", "adam_eps",
       "forward", "bcjr_impl", "chunk", "workers", "incoherence",
       "checkpoint_every"},
      "qat run config");
  QatRunConfig c;
  try {
    auto get = [&](const char *key, auto &out) {
      using T = std::remove_reference_t<decltype(out)>;
      if (!j.contains(key))
        return;
      if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> &&
                    !std::is_same_v<T, bool>)
        if (!j.at(key).is_number_unsigned())
          throw FormatError(std::string("qat run config: '") + key +
                            "' must be a non-negative integer");
      out = j.at(key).get<T>();
    };
    std::string s;
    s = to_string(c.objective), get("objective", s), c.objective = objective_from_string(s);
    get("learning_rate", c.learning_rate);
    get("n_steps", c.n_steps);
    if (j.contains("schedule"))
      c.schedule = schedule_from_json(j.at("schedule"));
    get("grad_clip", c.grad_clip);
    get("seed", c.seed);
    get("calibration_size", c.calibration_size);
    get("heldout_size", c.heldout_size);
    get("n_windows", c.n_windows);
    get("scale_bits", c.scale_bits);
    get("group_size", c.group_size);
    s = to_string(c.optimizer), get("optimizer", s), c.optimizer = optimizer_from_string(s);
    get("adam_beta1", c.adam_beta1);
    get("adam_beta2", c.adam_beta2);
    get("adam_eps", c.adam_eps);
    s = to_string(c.forward), get("forward", s), c.forward = forward_mode_from_string(s);
    s = to_string(c.impl), get("bcjr_impl", s), c.impl = bcjr_impl_from_string(s);
    get("chunk", c.chunk);
    get("workers", c.workers);
    get("incoherence", c.incoherence);
    get("checkpoint_every", c.checkpoint_every);
  } catch (const Json::exception &e) {
    throw FormatError(std::string("qat run config: ") + e.what());
  }
  validate(c);
  return c;
}

double adam_step_bound(std::size_t t, double beta1, double beta2) {
  if (t == 0)
    return 0.0;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  double acc = 0.0;
  for (std::size_t i = 1; i <= t; ++i) {
    const double age = static_cast<double>(t - i);
    const double a = (1.0 - beta1) * std::pow(beta1, age) / c1;
    const double b = (1.0 - beta2) * std::pow(beta2, age) / c2;
    if (a != 0.0)
      acc += b > 0.0 ? a * a / b : std::numeric_limits<double>::infinity();
  }
  return std::sqrt(acc);
}

double adam_drift_bound(double eta, std::size_t n_steps, double beta1,
                        double beta2) {
  double acc = 0.0;
  for (std::size_t t = 1; t <= n_steps; ++t)
    acc += adam_step_bound(t, beta1, beta2);
  return eta * acc;
}

std::uint64_t layer_transform_seed(std::uint64_t seed, std::size_t layer) {
  return derive_seed(derive_seed(seed, seed_stream::kIncoherence), layer);
}

Matrix calibration_inputs(const QatRunConfig &c, std::size_t d_in) {
  return standard_normal_batch(c.calibration_size, d_in,
                               derive_seed(c.seed, seed_stream::kCalibration));
}

Matrix heldout_inputs(const QatRunConfig &c, std::size_t d_in) {
  return standard_normal_batch(c.heldout_size, d_in,
                               derive_seed(c.seed, seed_stream::kHeldout));
}

ToyModel with_prefix(const ToyModel &teacher, std::span<const Matrix> prefix) {
  if (prefix.size() > teacher.n_layers())
    throw DimensionError("prefix longer than the model");
  ToyModel m = teacher;
  for (std::size_t l = 0; l < prefix.size(); ++l) {
    if (prefix[l].rows != m.weights[l].rows || prefix[l].cols != m.weights[l].cols)
      throw DimensionError("prefix layer shape mismatch");
    m.weights[l] = prefix[l];
  }
  return m;
}

ToyModel with_layer(const ToyModel &model, std::size_t layer, Matrix w) {
  if (layer >= model.n_layers())
    throw DimensionError("layer index out of range");
  if (w.rows != model.weights[layer].rows || w.cols != model.weights[layer].cols)
    throw DimensionError("layer shape mismatch");
  ToyModel m = model;
  m.weights[layer] = std::move(w);
  return m;
}

HardenedEval eval_hardened(const ToyModel &teacher, const ToyModel &student,
                           const Matrix &heldout, std::size_t n_windows) {
  if (n_windows < 1 || n_windows > heldout.rows)
    throw ParameterError("n_windows must be in [1, samples]");
  const auto t = forward_all(teacher, heldout).back();
  const auto s = forward_all(student, heldout).back();
  const auto kl = kl_per_sample(t, s);
  HardenedEval ev;
  ev.per_window.assign(n_windows, 0.0);
  ev.window_size.assign(n_windows, 0.0);
  for (std::size_t w = 0; w < n_windows; ++w) {
    const std::size_t lo = w * kl.size() / n_windows;
    const std::size_t hi = (w + 1) * kl.size() / n_windows;
    double acc = 0.0;
    for (std::size_t i = lo; i < hi; ++i)
      acc += kl[i];
    ev.per_window[w] = acc / static_cast<double>(hi - lo);
    ev.window_size[w] = static_cast<double>(hi - lo);
  }
  ev.loss = mean(kl);
  return ev;
}

QuantizedMatrix ptq_layer(const ToyModel &teacher, std::size_t layer_index,
                          const QatRunConfig &config,
                          const TrellisConfig &trellis) {
  if (layer_index >= teacher.n_layers())
    throw DimensionError("layer index out of range");
  const QuantizerConfig q{trellis.params(), config.scale_bits, config.group_size};
  return quantize_matrix(teacher.weights[layer_index], q,
                         layer_transform_seed(config.seed, layer_index),
                         config.incoherence, config.workers);
}

namespace {

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad; // d loss / d W_layer, original domain
};

// Everything a run needs that stays fixed across steps.
class LayerProblemState {
public:
  LayerProblemState(const ToyModel &teacher, std::size_t layer,
                    const QatRunConfig &cfg, std::span<const Matrix> prefix)
      : teacher_(teacher), layer_(layer), cfg_(cfg),
        student_(with_prefix(teacher, prefix)) {
    const Matrix x = calibration_inputs(cfg, teacher.d_in());
    const auto fp = forward_all(teacher, x);
    teacher_out_ = fp[layer + 1];
    teacher_logits_ = fp.back();
    h_student_ = forward_all(student_, x)[layer];
    heldout_ = heldout_inputs(cfg, teacher.d_in());
  }

  LossAndGrad loss_and_grad(const Matrix &w) const {
    const bool last = teacher_.is_last(layer_);
    if (cfg_.objective == Objective::PerLayerMSE) {
      const Matrix y = layer_forward(w, h_student_, last);
      const double inv_n = 1.0 / static_cast<double>(y.rows);
      Matrix dy(y.rows, y.cols);
      double loss = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = y.data[i] - teacher_out_.data[i];
        loss += d * d * inv_n;
        dy.data[i] = 2.0 * d * inv_n;
      }
      return {loss, layer_weight_grad(h_student_, y, dy, last)};
    }
    const ToyModel m = with_layer(student_, layer_, w);
    const auto acts = forward_from(m, layer_, h_student_);
    const double loss = mean(kl_per_sample(teacher_logits_, acts.back()));
    const Matrix d = kl_logit_grad(teacher_logits_, acts.back());
    return {loss, backprop_to_layer(m, layer_, acts, d)};
  }

  double hardened_loss(const Matrix &w) const {
    return eval_hardened(teacher_, with_layer(student_, layer_, w), heldout_,
                         cfg_.n_windows)
        .loss;
  }

private:
  const ToyModel &teacher_;
  std::size_t layer_;
  const QatRunConfig &cfg_;
  ToyModel student_;
  Matrix teacher_out_, teacher_logits_, h_student_, heldout_;
};

struct SoftForward {
  Matrix weights; // original domain
  std::vector<double> scaled;
  std::vector<SoftQuantOutput> saved;
};

} // namespace

QatResult run_qat(const ToyModel &teacher, std::size_t layer_index,
                  const QatRunConfig &config, const TrellisConfig &trellis,
                  std::span<const Matrix> prefix) {
  validate(config);
  if (layer_index >= teacher.n_layers())
    throw DimensionError("layer index out of range");
  if (prefix.size() > layer_index)
    throw DimensionError("prefix must only cover layers before layer_index");

  QatResult res;
  res.layer_index = layer_index;
  res.warm_start = ptq_layer(teacher, layer_index, config, trellis);
  const LayerGeometry &geo = res.warm_start.geometry;
  const ScaleTable &scales = res.warm_start.scales;
  const LayerProblemState problem(teacher, layer_index, config, prefix);
  const BatchOptions batch{config.impl, config.chunk, config.workers};
  const std::size_t n = geo.n_elements();

  std::vector<double> elem_scale(n);
  for (std::size_t i = 0; i < n; ++i)
    elem_scale[i] = scales.element_scale(i);

  // Latent starts on the warm-start codeword, in transformed raw units.
  const std::vector<double> z0 =
      dequantize_transformed(res.warm_start, trellis).data;
  std::vector<double> z = z0;

  auto snap = [&](std::span<const double> latent) {
    QuantizedMatrix q = res.warm_start;
    auto code = hard_quantize(latent, scales, trellis, config.workers);
    q.bits = std::move(code.bits);
    q.distortion = code.distortion;
    return q;
  };

  auto soft_forward = [&](double T) {
    SoftForward f;
    f.scaled.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      f.scaled[i] = elem_scale[i] > 0.0 ? z[i] / elem_scale[i] : 0.0;
    f.saved = soft_quantize_batch(f.scaled, T, trellis, batch);
    Matrix x(geo.padded_rows, geo.padded_cols);
    if (config.forward == ForwardMode::Ste) {
      x.data = hard_quantize(z, scales, trellis, config.workers).values;
    } else {
      const std::size_t L = trellis.L();
      for (std::size_t b = 0; b < f.saved.size(); ++b)
        for (std::size_t t = 0; t < L; ++t)
          x.data[b * L + t] = elem_scale[b * L + t] * f.saved[b].soft_codeword[t];
    }
    f.weights = geo.from_transformed(x);
    return f;
  };

  auto checkpoint = [&](std::size_t step, double T) {
    const auto f = soft_forward(T);
    Checkpoint c;
    c.step = step;
    c.temperature = T;
    c.soft_loss = problem.loss_and_grad(f.weights).loss;
    c.hardened_loss = problem.hardened_loss(dequantize_matrix(snap(z), trellis));
    for (std::size_t i = 0; i < n; ++i)
      c.drift = std::max(c.drift, std::abs(z[i] - z0[i]));
    c.sgd_drift_bound = config.learning_rate * static_cast<double>(step) *
                        config.grad_clip;
    c.adam_drift_bound = adam_drift_bound(config.learning_rate, step,
                                          config.adam_beta1, config.adam_beta2);
    res.trajectory.push_back(c);
  };

  checkpoint(0, temperature_at(config.schedule, 0));

  std::vector<double> m1(n, 0.0), m2(n, 0.0);
  for (std::size_t t = 1; t <= config.n_steps; ++t) {
    const double T = temperature_at(config.schedule, t);
    const auto f = soft_forward(T);
    const auto lg = problem.loss_and_grad(f.weights);
    if (!std::isfinite(lg.loss)) {
      res.aborted = true;
      res.diagnostic = "non-finite loss at step " + std::to_string(t);
      break;
    }
    const Matrix gx = geo.to_transformed(lg.grad);
    std::vector<double> upstream(n);
    for (std::size_t i = 0; i < n; ++i)
      upstream[i] = elem_scale[i] * gx.data[i];
    const auto gw =
        soft_quantize_vjp_batch(f.scaled, T, trellis, upstream, f.saved, batch);

    const double c1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < n; ++i) {
      double g = elem_scale[i] > 0.0 ? gw[i] / elem_scale[i] : 0.0;
      if (!std::isfinite(g)) {
        res.aborted = true;
        res.diagnostic = "non-finite gradient at step " + std::to_string(t);
        break;
      }
      g = std::clamp(g, -config.grad_clip, config.grad_clip);
      if (config.optimizer == OptimizerKind::Sgd) {
        z[i] -= config.learning_rate * g;
      } else {
        m1[i] = config.adam_beta1 * m1[i] + (1.0 - config.adam_beta1) * g;
        m2[i] = config.adam_beta2 * m2[i] + (1.0 - config.adam_beta2) * g * g;
        const double mh = m1[i] / c1, vh = m2[i] / c2;
        z[i] -= config.learning_rate * mh / (std::sqrt(vh) + config.adam_eps);
      }
    }
    if (res.aborted)
      break;
    if (t % config.checkpoint_every == 0 || t == config.n_steps)
      checkpoint(t, T);
  }

  res.snapshot = snap(z);
  res.hardened_weights = dequantize_matrix(res.snapshot, trellis);
  return res;
}

std::vector<QatResult> run_greedy_pipeline(const ToyModel &teacher,
                                           const QatRunConfig &config,
                                           const TrellisConfig &trellis) {
  std::vector<QatResult> out;
  std::vector<Matrix> prefix;
  for (std::size_t l = 0; l < teacher.n_layers(); ++l) {
    out.push_back(run_qat(teacher, l, config, trellis, prefix));
    prefix.push_back(out.back().hardened_weights);
  }
  return out;
}

std::string trajectory_csv(std::span<const Checkpoint> trajectory) {
  std::ostringstream os;
  os.precision(10);
  os << "step,T,soft_loss,hardened_loss,drift,sgd_drift_bound,adam_drift_bound\n";
  for (const auto &c : trajectory)
    os << c.step << ',' << c.temperature << ',' << c.soft_loss << ','
       << c.hardened_loss << ',' << c.drift << ',' << c.sgd_drift_bound << ','
       << c.adam_drift_bound << '\n';
  return os.str();
}

} // namespace tcq
