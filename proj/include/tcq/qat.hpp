#pragma once

#include "tcq/bcjr.hpp"
#include "tcq/layer_quant.hpp"
#include "tcq/schedule.hpp"
#include "tcq/serialization.hpp"
#include "tcq/toy_model.hpp"

#include <optional>

namespace tcq {

enum class Objective { PerLayerMSE, EndToEndKL };
enum class OptimizerKind { Adam, Sgd };
// Soft: BCJR soft codeword forward. Ste: hard Viterbi forward, BCJR backward.
enum class ForwardMode { Soft, Ste };

std::string to_string(Objective o);
std::string to_string(OptimizerKind o);
std::string to_string(ForwardMode m);

struct QatRunConfig {
  Objective objective = Objective::EndToEndKL;
  double learning_rate = 2e-4;
  std::size_t n_steps = 10; // 0 runs no updates
  AnnealSchedule schedule{1.0, 0.02, 10, ScheduleKind::ExponentialNaive};
  double grad_clip = 1.0; // per element
  std::uint64_t seed = 0;
  std::size_t calibration_size = 128;
  std::size_t heldout_size = 256;
  std::size_t n_windows = 16;
  unsigned scale_bits = 4;
  std::size_t group_size = 16;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ForwardMode forward = ForwardMode::Soft;
  BcjrImpl impl = BcjrImpl::Reference;
  std::size_t chunk = 16;
  unsigned workers = 1;
  bool incoherence = true;
  std::size_t checkpoint_every = 2;
};

// Throws ParameterError. With n_steps > 0 the schedule must span exactly
// n_steps steps.
void validate(const QatRunConfig &c);

Json to_json(const QatRunConfig &c);
QatRunConfig qat_run_config_from_json(const Json &j);

struct Checkpoint {
  std::size_t step = 0;
  double temperature = 0.0;
  double soft_loss = 0.0;     // training objective on calibration data
  double hardened_loss = 0.0; // end-task KL of the Viterbi-snapped model
  double drift = 0.0;         // max |latent - warm start|
  double sgd_drift_bound = 0.0;  // eta * step * g_max
  double adam_drift_bound = 0.0; // eta * Σ_t adam_step_bound(t)
};

struct QatResult {
  std::size_t layer_index = 0;
  QuantizedMatrix warm_start; // Viterbi of the teacher layer
  QuantizedMatrix snapshot;   // Viterbi of the final latent
  Matrix hardened_weights;    // dequantized snapshot, original domain
  std::vector<Checkpoint> trajectory;
  bool aborted = false;
  std::string diagnostic;
};

// Largest |Adam update| / eta after t bias-corrected steps for any gradient
// sequence: sqrt(Σ_i a_i^2 / b_i) with a_i, b_i the normalized first- and
// second-moment weights of step i (Cauchy-Schwarz).
double adam_step_bound(std::size_t t, double beta1, double beta2);
double adam_drift_bound(double eta, std::size_t n_steps, double beta1,
                        double beta2);

// Incoherence seed of one layer under a run seed.
std::uint64_t layer_transform_seed(std::uint64_t seed, std::size_t layer);

Matrix calibration_inputs(const QatRunConfig &c, std::size_t d_in);
Matrix heldout_inputs(const QatRunConfig &c, std::size_t d_in);

// Teacher with layers [0, prefix.size()) replaced by `prefix`.
ToyModel with_prefix(const ToyModel &teacher, std::span<const Matrix> prefix);
// Teacher with layer `layer` replaced by `w`.
ToyModel with_layer(const ToyModel &model, std::size_t layer, Matrix w);

struct HardenedEval {
  double loss = 0.0;               // mean per-sample KL
  std::vector<double> per_window;  // mean KL per window
  std::vector<double> window_size; // samples per window
};

// End-task KL of `student` against `teacher` on held-out inputs, split into
// n_windows contiguous windows.
HardenedEval eval_hardened(const ToyModel &teacher, const ToyModel &student,
                           const Matrix &heldout, std::size_t n_windows);

// Per-layer QAT for `layer_index`. `prefix` holds already-quantized weights
// for the layers before it (empty: full-precision prefix).
QatResult run_qat(const ToyModel &teacher, std::size_t layer_index,
                  const QatRunConfig &config, const TrellisConfig &trellis,
                  std::span<const Matrix> prefix = {});

// Layers in order, each trained on hidden states of the compressed prefix.
std::vector<QatResult> run_greedy_pipeline(const ToyModel &teacher,
                                           const QatRunConfig &config,
                                           const TrellisConfig &trellis);

// Plain PTQ of one layer with the geometry run_qat uses.
QuantizedMatrix ptq_layer(const ToyModel &teacher, std::size_t layer_index,
                          const QatRunConfig &config,
                          const TrellisConfig &trellis);

// step,T,soft_loss,hardened_loss,drift,sgd_drift_bound,adam_drift_bound
std::string trajectory_csv(std::span<const Checkpoint> trajectory);

} // namespace tcq
