#include "cli.hpp"

#include "tcq/analysis.hpp"
#include "tcq/bench.hpp"
#include "tcq/io.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

namespace tcq::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string impl = "reference";
  std::string out_dir;
  bool json = false;
};

void add_common(CLI::App *sub, Common &c, bool with_impl = true) {
  sub->add_option("--config", c.config,
                  "JSON config: a file path or an inline JSON object");
  sub->add_option("--seed", c.seed, "Root seed for every random stream");
  if (with_impl)
    sub->add_option("--bcjr-impl", c.impl, "BCJR implementation")
        ->check(CLI::IsMember({"reference", "fused"}));
  sub->add_option("--out", c.out_dir, "Output directory (created if missing)");
  sub->add_flag("--json", c.json, "Machine-readable JSON on standard output");
}

Json load_config(const std::string &spec) {
  if (spec.empty())
    return Json::object();
  const auto first = spec.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && spec[first] == '{')
    return parse_json(spec);
  const auto bytes = read_file(spec);
  return parse_json(std::string(bytes.begin(), bytes.end()));
}

void emit_file(const Common &c, const std::string &name, const std::string &text) {
  if (c.out_dir.empty())
    return;
  fs::create_directories(c.out_dir);
  atomic_write(fs::path(c.out_dir) / name, text);
}

std::vector<double> parse_list(const std::string &s) {
  std::vector<double> out;
  std::string tok;
  std::istringstream is(s);
  while (std::getline(is, tok, ',')) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception &) {
      throw FormatError("not a number: '" + tok + "'");
    }
    if (tok.find_first_not_of(" \t", used) != std::string::npos)
      throw FormatError("not a number: '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty())
    throw FormatError("empty list");
  return out;
}

std::vector<double> read_numbers(const std::string &path) {
  const auto bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  for (auto &ch : text)
    if (ch == ',' || ch == ';')
      ch = ' ';
  std::istringstream is(text);
  std::vector<double> out;
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    try {
      out.push_back(std::stod(tok, &used));
    } catch (const std::exception &) {
      throw FormatError("not a number in " + path + ": '" + tok + "'");
    }
    if (used != tok.size())
      throw FormatError("not a number in " + path + ": '" + tok + "'");
  }
  return out;
}

std::string g(double v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

std::vector<std::size_t> parse_dims(const std::string &s) {
  std::vector<std::size_t> d;
  for (double v : parse_list(s)) {
    if (!(v >= 1.0) || v != std::floor(v))
      throw FormatError("dimensions must be positive integers");
    d.push_back(static_cast<std::size_t>(v));
  }
  return d;
}

// ---------------------------------------------------------------------------
// quantize / dequantize
// ---------------------------------------------------------------------------

struct QuantizeArgs {
  Common c;
  std::string input;
  bool no_incoherence = false;
  unsigned workers = 1;
};

int cmd_quantize(const QuantizeArgs &a, std::ostream &out) {
  const auto qcfg = quantizer_config_from_json(load_config(a.c.config));
  const auto impl = bcjr_impl_from_string(a.c.impl);
  const Matrix w = read_matrix_file(a.input);
  const auto trellis = build_trellis(qcfg.code);
  const auto q = quantize_matrix(w, qcfg, a.c.seed, !a.no_incoherence, a.workers);
  const Matrix back = dequantize_matrix(q, trellis);
  double sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    sq += (w.data[i] - back.data[i]) * (w.data[i] - back.data[i]);
  const auto bytes = encode_snapshot(q);
  auto side = snapshot_sidecar(q, bytes.size());
  side["bcjr_impl"] = to_string(impl);
  side["mse"] = sq / static_cast<double>(w.size());
  if (!a.c.out_dir.empty()) {
    fs::create_directories(a.c.out_dir);
    const auto path = fs::path(a.c.out_dir) / "snapshot.tcq";
    atomic_write(path, bytes);
    atomic_write(sidecar_path(path), side.dump(2) + "\n");
  }
  if (a.c.json) {
    out << side.dump(2) << '\n';
  } else {
    out << "rows,cols,n_blocks,distortion,mse,file_bytes,file_bits_per_weight,"
           "nominal_bpw\n"
        << q.geometry.rows << ',' << q.geometry.cols << ',' << q.n_blocks() << ','
        << g(q.distortion) << ',' << g(side["mse"].get<double>()) << ','
        << bytes.size() << ',' << g(side["file_bits_per_weight"].get<double>())
        << ',' << g(side["nominal_bpw"].get<double>()) << '\n';
  }
  return kExitOk;
}

struct DequantizeArgs {
  Common c;
  std::string input;
  bool transformed = false;
};

int cmd_dequantize(const DequantizeArgs &a, std::ostream &out) {
  const auto q = read_snapshot(a.input);
  const auto trellis = build_trellis(q.config.code);
  const Matrix m = a.transformed ? dequantize_transformed(q, trellis)
                                 : dequantize_matrix(q, trellis);
  if (!a.c.out_dir.empty()) {
    fs::create_directories(a.c.out_dir);
    write_matrix_file(fs::path(a.c.out_dir) / "dequantized.tcqm", m);
  }
  if (a.c.json) {
    out << Json{{"rows", m.rows}, {"cols", m.cols}, {"frobenius", frobenius_norm(m)}}
               .dump(2)
        << '\n';
  } else {
    out << "rows,cols,frobenius\n"
        << m.rows << ',' << m.cols << ',' << g(frobenius_norm(m)) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// crystallize
// ---------------------------------------------------------------------------

struct CrystallizeArgs {
  Common c;
  std::string t_grid = "1,0.316227766,0.1,0.0316227766,0.01,0.00316227766,0.001,"
                       "0.000316227766,0.0001";
  std::size_t blocks = 100;
  double margin_factor = 10.0;
};

int cmd_crystallize(const CrystallizeArgs &a, std::ostream &out) {
  const auto qcfg = quantizer_config_from_json(load_config(a.c.config));
  const auto trellis = build_trellis(qcfg.code);
  const auto impl = bcjr_impl_from_string(a.c.impl);
  const auto grid = parse_list(a.t_grid);
  for (double T : grid)
    if (!(T > 0.0))
      throw ParameterError("temperatures must be positive");
  const double t_min = *std::min_element(grid.begin(), grid.end());
  const std::size_t L = trellis.L();
  const auto base = derive_seed(a.c.seed, seed_stream::kCrystallize);

  std::vector<std::vector<double>> accepted;
  std::vector<std::vector<double>> hard;
  for (std::uint64_t i = 0; accepted.size() < a.blocks; ++i) {
    if (i > 1000 * (a.blocks + 1))
      throw NumericalError("crystallize: too few blocks pass the margin check");
    std::vector<double> w(L);
    fill_normal(w, derive_seed(base, i));
    if (viterbi_margin(w, trellis) <= a.margin_factor * t_min)
      continue;
    hard.push_back(viterbi_encode(w, trellis).codeword);
    accepted.push_back(std::move(w));
  }
  Json rows = Json::array();
  std::ostringstream csv;
  csv << "T,max_abs_dev,mean_abs_dev,n_blocks\n";
  for (double T : grid) {
    double mx = 0.0, acc = 0.0;
    for (std::size_t b = 0; b < accepted.size(); ++b) {
      const auto soft = soft_quantize(accepted[b], T, trellis, impl).soft_codeword;
      const double d = max_abs_diff(soft, hard[b]);
      mx = std::max(mx, d);
      acc += d;
    }
    const double mean_dev = acc / static_cast<double>(accepted.size());
    csv << g(T) << ',' << g(mx) << ',' << g(mean_dev) << ',' << accepted.size()
        << '\n';
    rows.push_back({{"T", T}, {"max_abs_dev", mx}, {"mean_abs_dev", mean_dev}});
  }
  emit_file(a.c, "crystallize.csv", csv.str());
  out << (a.c.json ? rows.dump(2) + "\n" : csv.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// overshoot
// ---------------------------------------------------------------------------

struct ToyArgs {
  std::string dims = "32,32,16";
  double sigma_w = 1e-2;
  std::uint64_t teacher_seed = 1;
  std::size_t layer = 0;
};

void add_toy(CLI::App *sub, ToyArgs &t) {
  sub->add_option("--dims", t.dims, "Toy teacher layer widths (powers of two)");
  sub->add_option("--teacher-sigma", t.sigma_w, "Teacher weight standard deviation");
  sub->add_option("--teacher-seed", t.teacher_seed, "Teacher weight seed");
  sub->add_option("--layer", t.layer, "Layer index to quantize");
}

struct OvershootArgs {
  Common c;
  ToyArgs toy;
  std::size_t seeds = 10;
  double t0_naive = 1.0;
  double t0_skip = kSkipHighTMaxT0;
};

int cmd_overshoot(const OvershootArgs &a, std::ostream &out, std::ostream &err) {
  const Json j = load_config(a.c.config);
  QatRunConfig base;
  if (!j.empty())
    base = qat_run_config_from_json(j);
  base.impl = bcjr_impl_from_string(a.c.impl);
  const auto trellis = build_trellis(16, 2, 2, 0);
  const auto dims = parse_dims(a.toy.dims);
  if (a.seeds < 1)
    throw ParameterError("overshoot: need at least one seed");

  std::ostringstream summary;
  summary << "seed,teacher_seed,run_seed,naive_step0,skip_step0,naive_final,"
             "skip_final,skip_better\n";
  std::size_t wins = 0;
  Json runs = Json::array();
  for (std::size_t i = 0; i < a.seeds; ++i) {
    const auto teacher_seed = derive_seed(a.toy.teacher_seed, i);
    const auto teacher = make_teacher(dims, a.toy.sigma_w, teacher_seed);
    QatRunConfig naive = base, skip = base;
    naive.seed = skip.seed = derive_seed(a.c.seed, i);
    naive.schedule = {a.t0_naive, base.schedule.T_end, base.n_steps,
                      ScheduleKind::ExponentialNaive};
    skip.schedule = {a.t0_skip, base.schedule.T_end, base.n_steps,
                     ScheduleKind::ExponentialSkipHighT};
    err << "overshoot: seed " << i + 1 << "/" << a.seeds << '\n';
    const auto rn = run_qat(teacher, a.toy.layer, naive, trellis);
    const auto rs = run_qat(teacher, a.toy.layer, skip, trellis);
    if (rn.aborted || rs.aborted)
      throw NumericalError("overshoot: run aborted: " + rn.diagnostic + rs.diagnostic);
    emit_file(a.c, "naive_seed" + std::to_string(i) + ".csv",
              trajectory_csv(rn.trajectory));
    emit_file(a.c, "skip_seed" + std::to_string(i) + ".csv",
              trajectory_csv(rs.trajectory));
    const double nf = rn.trajectory.back().hardened_loss;
    const double sf = rs.trajectory.back().hardened_loss;
    const bool better = sf < nf;
    wins += better;
    summary << i << ',' << teacher_seed << ',' << naive.seed << ','
            << g(rn.trajectory.front().hardened_loss) << ','
            << g(rs.trajectory.front().hardened_loss) << ',' << g(nf) << ','
            << g(sf) << ',' << (better ? 1 : 0) << '\n';
    runs.push_back({{"seed", i}, {"naive_final", nf}, {"skip_final", sf},
                    {"naive_trajectory", trajectory_csv(rn.trajectory)},
                    {"skip_trajectory", trajectory_csv(rs.trajectory)}});
  }
  const double fraction = static_cast<double>(wins) / static_cast<double>(a.seeds);
  emit_file(a.c, "overshoot_summary.csv", summary.str());
  if (a.c.json) {
    out << Json{{"runs", runs}, {"skip_better_fraction", fraction}}.dump(2) << '\n';
  } else {
    out << summary.str() << "skip_better_fraction," << g(fraction) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// drift-budget
// ---------------------------------------------------------------------------

struct DriftArgs {
  Common c;
  ToyArgs toy;
  double eta = 0, n_steps = 0, g_max = 1.0, sigma_w = 1e-2;
  std::size_t S = 16;
  bool measure = false;
};

int cmd_drift(const DriftArgs &a, std::ostream &out, std::ostream &err) {
  std::vector<DriftTableRow> rows;
  if (a.eta > 0.0 || a.n_steps > 0.0) {
    rows.push_back({"custom", "-",
                    drift_budget(a.eta, a.n_steps, a.g_max, a.sigma_w, a.S),
                    std::nullopt});
  } else {
    rows = reference_drift_table();
  }
  if (a.measure) {
    const auto trellis = build_trellis(16, 2, 2, 0);
    const auto teacher =
        make_teacher(parse_dims(a.toy.dims), a.toy.sigma_w, a.toy.teacher_seed);
    for (auto &r : rows) {
      const auto n = static_cast<std::size_t>(r.report.n_steps);
      if (static_cast<double>(n) != r.report.n_steps || n < 1)
        throw ParameterError("drift-budget --measure needs an integer n_steps");
      QatRunConfig cfg;
      cfg.seed = a.c.seed;
      cfg.learning_rate = r.report.eta;
      cfg.grad_clip = r.report.g_max;
      cfg.n_steps = n;
      const bool skip = r.schedule == "skip_high_t";
      cfg.schedule = {skip ? kSkipHighTMaxT0 : 1.0, 0.02, n,
                      skip ? ScheduleKind::ExponentialSkipHighT
                           : ScheduleKind::ExponentialNaive};
      cfg.impl = bcjr_impl_from_string(a.c.impl);
      err << "drift-budget: measuring " << r.label << '\n';
      const auto res = run_qat(teacher, a.toy.layer, cfg, trellis);
      r.delta_vs_ptq = res.trajectory.back().hardened_loss -
                       res.trajectory.front().hardened_loss;
    }
  }
  const auto csv = drift_table_csv(rows);
  emit_file(a.c, "drift_budget.csv", csv);
  if (a.c.json) {
    Json arr = Json::array();
    for (const auto &r : rows) {
      const auto &d = r.report;
      arr.push_back({{"label", r.label},
                     {"eta", d.eta},
                     {"n_steps", d.n_steps},
                     {"g_max", d.g_max},
                     {"sigma_w", d.sigma_w},
                     {"S", d.S},
                     {"r_voronoi", d.r_voronoi},
                     {"max_drift", d.max_drift},
                     {"ratio", d.ratio},
                     {"feasible", d.feasible},
                     {"schedule", r.schedule},
                     {"delta_vs_ptq", r.delta_vs_ptq ? Json(*r.delta_vs_ptq) : Json()}});
    }
    out << arr.dump(2) << '\n';
  } else {
    out << csv;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// mc-bracket
// ---------------------------------------------------------------------------

struct McArgs {
  Common c;
  ToyArgs toy;
  std::size_t samples = 64;
  std::string sigma_grid = "0.001,0.005,0.01,0.05";
  unsigned workers = 1;
};

int cmd_mc(const McArgs &a, std::ostream &out) {
  const Json j = load_config(a.c.config);
  QatRunConfig cfg;
  if (!j.empty())
    cfg = qat_run_config_from_json(j);
  cfg.seed = a.c.seed;
  const auto trellis = build_trellis(16, 2, 2, 0);
  const auto teacher =
      make_teacher(parse_dims(a.toy.dims), a.toy.sigma_w, a.toy.teacher_seed);
  const auto problem = make_toy_layer_problem(teacher, a.toy.layer, cfg, trellis);
  const auto grid = parse_list(a.sigma_grid);
  const auto r = mc_bracket(problem, trellis, grid, a.samples, a.c.seed, a.workers);
  std::ostringstream csv;
  csv << "quantity,value\n"
      << "fp_loss," << g(r.fp_loss) << '\n'
      << "ptq_loss," << g(r.ptq_loss) << '\n'
      << "global_best," << g(r.global_best) << '\n'
      << "best_sigma," << g(r.best_sigma) << '\n'
      << "lower_bound_on_gap," << g(r.lower_bound_on_gap) << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i)
    csv << "best_at_sigma_" << g(grid[i]) << ',' << g(r.per_sigma_best[i]) << '\n';
  emit_file(a.c, "mc_summary.csv", csv.str());
  emit_file(a.c, "mc_samples.csv", mc_samples_csv(r));
  if (a.c.json) {
    out << Json{{"fp_loss", r.fp_loss},
                {"ptq_loss", r.ptq_loss},
                {"global_best", r.global_best},
                {"best_sigma", r.best_sigma},
                {"lower_bound_on_gap", r.lower_bound_on_gap},
                {"sigma_grid", r.sigma_grid},
                {"per_sigma_best", r.per_sigma_best}}
               .dump(2)
        << '\n';
  } else {
    out << csv.str();
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bootstrap
// ---------------------------------------------------------------------------

struct BootArgs {
  Common c;
  std::string input, weights;
  std::size_t n_boot = kDefaultBootstraps;
  double confidence = kDefaultConfidence;
  std::string aggregate = "mean";
};

int cmd_bootstrap(const BootArgs &a, std::ostream &out) {
  const auto values = read_numbers(a.input);
  std::vector<double> weights;
  if (!a.weights.empty())
    weights = read_numbers(a.weights);
  const auto agg = a.aggregate == "perplexity" ? Aggregate::Perplexity : Aggregate::Mean;
  const auto r = bootstrap_ci(values, a.n_boot, a.confidence, a.c.seed, agg, weights);
  std::ostringstream csv;
  csv << "point,sigma_boot,ci_low,ci_high,n_boot,confidence\n"
      << g(r.point) << ',' << g(r.sigma_boot) << ',' << g(r.ci_low) << ','
      << g(r.ci_high) << ',' << r.n_boot << ',' << g(r.confidence) << '\n';
  emit_file(a.c, "bootstrap.csv", csv.str());
  if (a.c.json)
    out << Json{{"point", r.point},       {"sigma_boot", r.sigma_boot},
                {"ci_low", r.ci_low},     {"ci_high", r.ci_high},
                {"n_boot", r.n_boot},     {"confidence", r.confidence}}
               .dump(2)
        << '\n';
  else
    out << csv.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

struct BenchArgs {
  Common c;
  std::size_t repeats = 21, warmup = 3, chunk = 16, n_chunks = 16;
  unsigned workers = 1;
  double temperature = 0.3;
};

int cmd_bench(const BenchArgs &a, std::ostream &out) {
  BenchConfig cfg;
  const Json j = load_config(a.c.config);
  if (!j.empty())
    cfg.code = quantizer_config_from_json(j).code;
  cfg.chunk = a.chunk;
  cfg.n_chunks = a.n_chunks;
  cfg.temperature = a.temperature;
  std::vector<BenchConfig> configs{cfg};
  if (a.workers > 1) {
    auto mt = cfg;
    mt.workers = a.workers;
    configs.push_back(mt);
  }
  const auto results = run_bench(configs, a.repeats, a.warmup, a.c.seed);
  const auto csv = bench_csv(results);
  emit_file(a.c, "bench.csv", csv);
  if (a.c.json) {
    Json arr = Json::array();
    for (const auto &r : results)
      arr.push_back({{"impl", to_string(r.impl)},
                     {"L", r.L},
                     {"S", r.S},
                     {"chunk", r.chunk},
                     {"workers", r.workers},
                     {"n_repeats", r.n_repeats},
                     {"forward_ms", r.forward.median},
                     {"backward_ms", r.backward.median},
                     {"total_ms", r.total.median},
                     {"speedup_forward", r.speedup_forward},
                     {"speedup_backward", r.speedup_backward},
                     {"speedup_total", r.speedup_total}});
    out << arr.dump(2) << '\n';
  } else {
    out << csv;
  }
  return kExitOk;
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Differentiable trellis-coded quantization toolkit", "tcq"};
  app.require_subcommand(1);

  QuantizeArgs qa;
  auto *q = app.add_subcommand("quantize", "Viterbi-quantize a matrix file");
  add_common(q, qa.c);
  q->add_option("--input", qa.input, "Matrix file (TCQMAT01)")->required();
  q->add_flag("--no-incoherence", qa.no_incoherence,
              "Skip the random-sign Hadamard rotation");
  q->add_option("--workers", qa.workers, "Encoder threads");

  DequantizeArgs da;
  auto *d = app.add_subcommand("dequantize", "Decode a snapshot to a matrix file");
  add_common(d, da.c, false);
  d->add_option("--input", da.input, "Snapshot file (TCQSNP01)")->required();
  d->add_flag("--transformed", da.transformed,
              "Emit the transformed-domain matrix instead");

  CrystallizeArgs ca;
  auto *c = app.add_subcommand("crystallize",
                               "Soft-vs-Viterbi deviation along a temperature grid");
  add_common(c, ca.c);
  c->add_option("--t-grid", ca.t_grid, "Comma-separated temperatures");
  c->add_option("--blocks", ca.blocks, "Margin-checked blocks to average over");
  c->add_option("--margin-factor", ca.margin_factor,
                "Keep blocks with Viterbi margin > factor * min(T)");

  OvershootArgs oa;
  auto *o = app.add_subcommand("overshoot",
                               "Paired naive vs skip-high-T QAT trajectories");
  add_common(o, oa.c);
  add_toy(o, oa.toy);
  o->add_option("--seeds", oa.seeds, "Number of seeds");
  o->add_option("--t0-naive", oa.t0_naive, "Initial temperature of the naive schedule");
  o->add_option("--t0-skip", oa.t0_skip, "Initial temperature of the skip-high-T schedule");

  DriftArgs dra;
  auto *dr = app.add_subcommand("drift-budget", "Drift-budget feasibility table");
  add_common(dr, dra.c);
  add_toy(dr, dra.toy);
  dr->add_option("--eta", dra.eta, "Learning rate (single-row mode)");
  dr->add_option("--n-steps", dra.n_steps, "Optimizer steps (single-row mode)");
  dr->add_option("--g-max", dra.g_max, "Per-element gradient clip");
  dr->add_option("--sigma-w", dra.sigma_w, "Weight standard deviation");
  dr->add_option("--S", dra.S, "Trellis state count");
  dr->add_flag("--measure", dra.measure,
               "Run toy QAT per row and fill delta_vs_ptq");

  McArgs ma;
  auto *m = app.add_subcommand("mc-bracket", "Monte Carlo oracle bracket on a toy layer");
  add_common(m, ma.c, false);
  add_toy(m, ma.toy);
  m->add_option("--samples", ma.samples, "Samples per sigma");
  m->add_option("--sigma-grid", ma.sigma_grid, "Comma-separated perturbation scales");
  m->add_option("--workers", ma.workers, "Evaluation threads");

  BootArgs ba;
  auto *b = app.add_subcommand("bootstrap", "Bootstrap CI over per-window losses");
  add_common(b, ba.c, false);
  b->add_option("--input", ba.input, "Whitespace/comma separated values")->required();
  b->add_option("--weights", ba.weights, "Per-window token counts");
  b->add_option("--n-boot", ba.n_boot, "Bootstrap resamples");
  b->add_option("--confidence", ba.confidence, "Interval coverage");
  b->add_option("--aggregate", ba.aggregate, "mean or perplexity")
      ->check(CLI::IsMember({"mean", "perplexity"}));

  BenchArgs bn;
  auto *be = app.add_subcommand("bench", "Reference vs fused BCJR timing");
  add_common(be, bn.c, false);
  be->add_option("--repeats", bn.repeats, "Timed repeats (>= 5)");
  be->add_option("--warmup", bn.warmup, "Untimed warmup passes (>= 1)");
  be->add_option("--chunk", bn.chunk, "Blocks per chunk");
  be->add_option("--n-chunks", bn.n_chunks, "Chunks per repeat");
  be->add_option("--workers", bn.workers, "Also report a multi-worker run");
  be->add_option("--temperature", bn.temperature, "BCJR temperature");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (q->parsed())
      return cmd_quantize(qa, out);
    if (d->parsed())
      return cmd_dequantize(da, out);
    if (c->parsed())
      return cmd_crystallize(ca, out);
    if (o->parsed())
      return cmd_overshoot(oa, out, err);
    if (dr->parsed())
      return cmd_drift(dra, out, err);
    if (m->parsed())
      return cmd_mc(ma, out);
    if (b->parsed())
      return cmd_bootstrap(ba, out);
    if (be->parsed())
      return cmd_bench(bn, out);
  } catch (const NumericalError &e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const StaleStateError &e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const fs::filesystem_error &e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

} // namespace tcq::cli
