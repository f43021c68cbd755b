// sasvr: generate | train | evaluate | bench | motion-study
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "sasvr/checkpoint.hpp"
#include "sasvr/dataset_store.hpp"
#include "sasvr/error.hpp"
#include "sasvr/evaluation.hpp"
#include "sasvr/random.hpp"
#include "sasvr/training.hpp"

namespace fs = std::filesystem;
using namespace sasvr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

// Relative paths resolve under RUNS_DIR when it is set.
fs::path resolve(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("RUNS_DIR"); root && *root) return fs::path(root) / path;
  return path;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

bool is_setting(const CLI::Option* opt) {
  const auto& names = opt->get_lnames();
  return !names.empty() && names.front() != "help" && names.front() != "config";
}

// Keys are long option names. Flags given on the command line win; unknown
// keys are rejected.
void apply_config(CLI::App* cmd, const std::string& path) {
  std::ifstream f(resolve(path));
  if (!f) throw IoError(IoError::Kind::MissingFile, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("bad config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt || !is_setting(opt)) {
      throw InvalidArgument("unknown config key '" + key + "' for " + cmd->get_name());
    }
    if (opt->count() > 0) continue;
    std::vector<std::string> parts;
    if (value.is_string()) {
      if (value.get<std::string>().empty()) continue;
      parts = opt->get_items_expected_max() > 1 ? split_list(value.get<std::string>())
                                                : std::vector<std::string>{value.get<std::string>()};
    } else if (value.is_array()) {
      for (const auto& v : value) parts.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      parts.push_back(value.dump());
    }
    if (parts.empty()) continue;
    for (const auto& part : parts) opt->add_result(part);
    opt->run_callback();
  }
}

// Resolved settings of the subcommand, readable back through --config.
void echo_config(const CLI::App& cmd, const fs::path& dir) {
  fs::create_directories(dir);
  nlohmann::json j = nlohmann::json::object();
  for (const CLI::Option* opt : cmd.get_options()) {
    if (!is_setting(opt)) continue;
    const std::string key = opt->get_lnames().front();
    if (opt->get_expected_max() == 0) {
      j[key] = opt->count() > 0 && opt->as<bool>();
    } else if (opt->count() > 0) {
      std::string v;
      for (const auto& r : opt->results()) v += (v.empty() ? "" : ",") + r;
      j[key] = v;
    } else {
      j[key] = opt->get_default_str();
    }
  }
  std::ofstream f(dir / "config.json");
  f << j.dump(2) << "\n";
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + (dir / "config.json").string());
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError(IoError::Kind::WriteFailed, "cannot write " + path.string());
}

std::string config_path;

CLI::App* add_config(CLI::App* cmd) {
  cmd->add_option("--config", config_path,
                  "JSON config with long option names as keys; command-line flags override it");
  return cmd;
}

struct GenerateArgs {
  std::string preset = "desk";
  std::uint64_t seed = 7;
  std::vector<int> counts;
  int subjects = 0;
  std::string reference_dir;
  std::string out = "dataset";
};

int cmd_generate(const CLI::App& cmd, const GenerateArgs& a) {
  DatasetSpec spec = DatasetSpec::from_preset(a.preset);
  spec.seed = a.seed;
  if (!a.counts.empty()) {
    if (a.counts.size() != 3) throw InvalidArgument("--counts expects train,val,test");
    spec.counts = {a.counts[0], a.counts[1], a.counts[2]};
  }
  if (a.subjects > 0) spec.phantom_subjects = a.subjects;
  if (!a.reference_dir.empty()) spec.reference_dir = resolve(a.reference_dir);
  const fs::path out = resolve(a.out);
  const auto bundle = generate_dataset(spec);
  save_dataset(bundle, out);
  echo_config(cmd, out);
  for (const auto& w : bundle.split.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << fmt::format("dataset {}: {}/{}/{} pairs from {}/{}/{} subjects\n", out.string(),
                           bundle.pairs.train.size(), bundle.pairs.val.size(),
                           bundle.pairs.test.size(), bundle.split.train.size(),
                           bundle.split.val.size(), bundle.split.test.size());
  return kExitOk;
}

struct TrainArgs {
  std::string dataset = "dataset";
  std::string out = "train";
  std::string preset;
  double lambda1 = 10.0;
  double lambda2 = 100.0;
  double lr = 5e-4;
  int batch_size = 8;
  int steps = 300;
  int eval_every = 0;
  std::uint64_t seed = 1;
  bool no_attention = false;
  std::string tokens = "slice";
  std::string sweep;
  bool quiet = false;
};

ModelConfig model_for(const DatasetSpec& spec, const std::string& preset, bool attention,
                      const std::string& tokens) {
  ModelConfig m = ModelConfig::from_preset(preset.empty() ? spec.preset : preset);
  m.depth = spec.shape[0];
  m.height = spec.shape[1];
  m.width = spec.shape[2];
  m.slices = spec.protocol.slices_per_shot;
  m.with_attention = attention;
  if (tokens != "slice" && tokens != "row") throw InvalidArgument("--tokens must be slice or row");
  m.tokens = tokens == "slice" ? nn::TokenMode::Slice : nn::TokenMode::Row;
  return m;
}

std::vector<std::pair<double, double>> parse_grid(const std::string& text) {
  if (text == "default") return default_lambda_grid();
  std::vector<std::pair<double, double>> grid;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const auto colon = cell.find(':');
    if (colon == std::string::npos) throw InvalidArgument("sweep cells look like l1:l2");
    grid.emplace_back(std::stod(cell.substr(0, colon)), std::stod(cell.substr(colon + 1)));
  }
  return grid;
}

int cmd_train(const CLI::App& cmd, const TrainArgs& a) {
  const auto data = load_dataset(resolve(a.dataset));
  TrainConfig cfg;
  cfg.lambda1 = a.lambda1;
  cfg.lambda2 = a.lambda2;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.steps = a.steps;
  cfg.eval_every = a.eval_every;
  cfg.seed = a.seed;
  cfg.model = model_for(data.spec, a.preset, !a.no_attention, a.tokens);
  const fs::path out = resolve(a.out);
  fs::create_directories(out);
  echo_config(cmd, out);

  if (!a.sweep.empty()) {
    const auto rows = sweep_lambdas(parse_grid(a.sweep), cfg, data.pairs.train, data.pairs.val);
    write_sweep_csv(rows, out / "sweep.csv");
    for (const auto& r : rows) {
      std::cout << fmt::format("lambda1={:g} lambda2={:g} D_reg={:.4f} E_rot={:.4f} E_tr={:.4f}{}\n",
                               r.lambda1, r.lambda2, r.d_reg, r.e_rot, r.e_tr,
                               r.selected ? "  <- selected" : "");
    }
    return kExitOk;
  }

  auto result = train(cfg, data.pairs.train, data.pairs.val, [&](const StepRecord& r) {
    if (a.quiet || !r.val_d_reg) return;
    std::cout << fmt::format("step {:5d}  loss {:10.4f}  l_sim {:7.4f}  val D_reg {:7.4f}\n",
                             r.step, r.loss.total, r.loss.l_sim, *r.val_d_reg)
              << std::flush;
  });
  result.history.write_csv(out / "history.csv");
  nlohmann::json meta{{"steps", cfg.steps},
                      {"best_step", result.best_step},
                      {"best_val_d_reg_mm", result.best_val_d_reg},
                      {"lambda1", cfg.lambda1},
                      {"lambda2", cfg.lambda2},
                      {"learning_rate", cfg.learning_rate},
                      {"batch_size", cfg.batch_size},
                      {"dataset", a.dataset}};
  save_checkpoint(*result.model, meta, out / "checkpoint.bin");
  write_json(out / "timing.json", {{"wall_clock_seconds", result.history.wall_clock_seconds}});
  std::cout << fmt::format("best validation D_reg {:.4f} mm at step {}; {} parameters\n",
                           result.best_val_d_reg, result.best_step,
                           count_parameters(*result.model));
  return kExitOk;
}

struct PredictorArgs {
  std::string checkpoint;
  bool oracle = false;
  bool identity = false;
};

void add_predictor_flags(CLI::App* cmd, PredictorArgs& a) {
  auto* ck = cmd->add_option("--checkpoint", a.checkpoint, "trained model checkpoint");
  auto* orc = cmd->add_flag("--oracle", a.oracle, "predict the ground truth");
  auto* id = cmd->add_flag("--identity", a.identity, "predict zero motion");
  ck->excludes(orc)->excludes(id);
  orc->excludes(id);
}

struct LoadedPredictor {
  std::unique_ptr<SaSvrNet<float>> model;
  std::unique_ptr<Predictor> predictor;
  std::string id;
};

LoadedPredictor make_predictor(const PredictorArgs& a) {
  LoadedPredictor p;
  if (a.oracle) {
    p.predictor = std::make_unique<OraclePredictor>();
    p.id = "oracle";
  } else if (a.identity) {
    p.predictor = std::make_unique<IdentityPredictor>();
    p.id = "identity";
  } else {
    if (a.checkpoint.empty()) {
      throw InvalidArgument("one of --checkpoint, --oracle or --identity is required");
    }
    p.model = load_checkpoint(resolve(a.checkpoint));
    p.id = p.model->config().with_attention ? "SA-SVR" : "baseline";
    p.predictor = std::make_unique<NetworkPredictor>(*p.model, p.id);
  }
  return p;
}

void check_model_matches(const LoadedPredictor& p, const DatasetSpec& spec) {
  if (!p.model) return;
  const auto& c = p.model->config();
  if (c.depth != spec.shape[0] || c.height != spec.shape[1] || c.width != spec.shape[2] ||
      c.slices != spec.protocol.slices_per_shot) {
    throw InvalidArgument("checkpoint input shape does not match the dataset");
  }
}

struct EvaluateArgs {
  std::string dataset = "dataset";
  std::string split = "test";
  std::string out = "evaluate";
  PredictorArgs predictor;
};

int cmd_evaluate(const CLI::App& cmd, const EvaluateArgs& a) {
  auto p = make_predictor(a.predictor);
  const auto data = load_dataset(resolve(a.dataset));
  check_model_matches(p, data.spec);
  const fs::path out = resolve(a.out);
  echo_config(cmd, out);
  const auto report = evaluate(*p.predictor, data.split_pairs(a.split), p.id, a.split);
  report.write_pairs_csv(out / "pairs.csv");
  report.write_summary_csv(out / "summary.csv");
  std::cout << fmt::format(
      "{} on {} ({} pairs): D_init {:.3f}±{:.3f} mm  D_reg {:.3f}±{:.3f} mm  E_rot {:.3f}±{:.3f} "
      "deg  E_tr {:.3f}±{:.3f} mm\n",
      p.id, a.split, report.rows.size(), report.d_init.mean, report.d_init.std, report.d_reg.mean,
      report.d_reg.std, report.e_rot.mean, report.e_rot.std, report.e_tr.mean, report.e_tr.std);
  return kExitOk;
}

struct BenchArgs {
  std::string dataset = "dataset";
  std::string out = "bench";
  std::string preset;
  int reps = 20;
  int pairs = 4;
  bool no_attention = false;
  std::uint64_t seed = 1;
  PredictorArgs predictor;
};

int cmd_bench(const CLI::App& cmd, const BenchArgs& a) {
  const auto data = load_dataset(resolve(a.dataset));
  LoadedPredictor p;
  if (a.predictor.checkpoint.empty() && !a.predictor.oracle && !a.predictor.identity) {
    // untrained weights time the same as trained ones
    p.model = std::make_unique<SaSvrNet<float>>(
        model_for(data.spec, a.preset, !a.no_attention, "slice"), a.seed);
    p.id = a.no_attention ? "baseline" : "SA-SVR";
    p.predictor = std::make_unique<NetworkPredictor>(*p.model, p.id, 1);
  } else {
    p = make_predictor(a.predictor);
    check_model_matches(p, data.spec);
  }
  const auto& test = data.pairs.test;
  if (a.pairs < 1 || test.empty()) throw InvalidArgument("no pairs to benchmark");
  const std::vector<SamplePair> pairs(test.begin(),
                                      test.begin() + std::min<std::ptrdiff_t>(a.pairs, test.size()));
  const fs::path out = resolve(a.out);
  echo_config(cmd, out);
  const auto stats = benchmark_runtime(*p.predictor, pairs, a.reps);
  std::ofstream f(out / "runtime.csv");
  f << "model,parameters,repetitions,pairs,median_s,mean_s,min_s,max_s\n";
  f << fmt::format("{},{},{},{},{:.6f},{:.6f},{:.6f},{:.6f}\n", p.id,
                   p.model ? count_parameters(*p.model) : 0, stats.repetitions, stats.pairs,
                   stats.median_seconds, stats.mean_seconds, stats.min_seconds, stats.max_seconds);
  std::cout << fmt::format("{}: median {:.4f} s, mean {:.4f} s per pair; {} parameters\n", p.id,
                           stats.median_seconds, stats.mean_seconds,
                           p.model ? count_parameters(*p.model) : 0);
  return kExitOk;
}

struct MotionArgs {
  std::string out = "motion";
  std::string preset = "desk";
  int frames = 20;
  std::uint64_t seed = 11;
  std::uint64_t subject_seed = 99;
  int roi_edge = 3;
  int plot_voxels = 4;
  std::string interpolation = "cubic";
  PredictorArgs predictor;
};

int cmd_motion(const CLI::App& cmd, const MotionArgs& a) {
  auto p = make_predictor(a.predictor);
  const DatasetSpec spec = DatasetSpec::from_preset(a.preset);
  check_model_matches(p, spec);
  if (a.frames < 2) throw InvalidArgument("--frames must be >= 2");
  if (a.interpolation != "cubic" && a.interpolation != "linear")
    throw InvalidArgument("--interpolation must be cubic or linear");
  const Interpolation interp =
      a.interpolation == "cubic" ? Interpolation::CubicBSpline : Interpolation::Linear;
  const auto series = make_phantom_series(spec.shape, a.subject_seed, a.frames, spec.spacing);
  const auto rois = select_rois(series.front(), a.roi_edge);
  const auto study =
      motion_study(series, *p.predictor, rois, a.seed, spec.ranges, spec.protocol, interp);
  const fs::path out = resolve(a.out);
  echo_config(cmd, out);
  study.write_csv(out / "series.csv");
  study.write_summary_csv(out / "summary.csv");
  study.write_plots(out / "plots", a.plot_voxels);
  std::cout << fmt::format(
      "{}: temporal variance reduced for {:.1f}% of {} ROI voxels; max interior |AR - "
      "motion-free| {:.4f}\n",
      p.id, 100.0 * study.variance_reduced_fraction(), study.voxels.size(),
      study.max_interior_error());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Slice-to-volume rigid registration with self-attention slice scoring"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = add_config(app.add_subcommand("generate", "synthesize a dataset of slice/volume pairs"));
  g->add_option("--preset", gen.preset, "desk or paper")->capture_default_str();
  g->add_option("--seed", gen.seed, "global seed")->capture_default_str();
  g->add_option("--counts", gen.counts, "train,val,test pair counts")->delimiter(',');
  g->add_option("--subjects", gen.subjects, "phantom subjects (0: preset default)")
      ->capture_default_str();
  g->add_option("--reference-dir", gen.reference_dir, "directory of .nii/.svrv reference volumes");
  g->add_option("--out", gen.out, "dataset directory")->capture_default_str();

  TrainArgs tr;
  auto* t = add_config(app.add_subcommand("train", "train a model on a generated dataset"));
  t->add_option("--dataset", tr.dataset, "dataset directory")->capture_default_str();
  t->add_option("--out", tr.out, "run directory")->capture_default_str();
  t->add_option("--preset", tr.preset, "model preset (default: the dataset's)");
  t->add_option("--lambda1", tr.lambda1, "weight of the angle term")->capture_default_str();
  t->add_option("--lambda2", tr.lambda2, "weight of the translation term")->capture_default_str();
  t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
  t->add_option("--batch-size", tr.batch_size, "mini-batch size")->capture_default_str();
  t->add_option("--steps", tr.steps, "optimizer steps")->capture_default_str();
  t->add_option("--eval-every", tr.eval_every, "validation period in steps (0: per epoch)")
      ->capture_default_str();
  t->add_option("--seed", tr.seed, "initialization and shuffling seed")->capture_default_str();
  t->add_flag("--no-attention", tr.no_attention, "train the baseline without the slice scorer");
  t->add_option("--tokens", tr.tokens, "scorer tokens: slice or row")->capture_default_str();
  t->add_option("--sweep", tr.sweep, "lambda grid l1:l2,... or 'default'; writes sweep.csv");
  t->add_flag("--quiet", tr.quiet, "no progress output");

  EvaluateArgs ev;
  auto* e = add_config(app.add_subcommand("evaluate", "registration accuracy on a split"));
  e->add_option("--dataset", ev.dataset, "dataset directory")->capture_default_str();
  e->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  e->add_option("--out", ev.out, "report directory")->capture_default_str();
  add_predictor_flags(e, ev.predictor);

  BenchArgs be;
  auto* b = add_config(app.add_subcommand("bench", "runtime per pair and parameter count"));
  b->add_option("--dataset", be.dataset, "dataset directory")->capture_default_str();
  b->add_option("--out", be.out, "report directory")->capture_default_str();
  b->add_option("--preset", be.preset, "model preset for untrained timing");
  b->add_option("--reps", be.reps, "repetitions (first one is discarded)")->capture_default_str();
  b->add_option("--pairs", be.pairs, "test pairs per repetition")->capture_default_str();
  b->add_flag("--no-attention", be.no_attention, "time the baseline");
  b->add_option("--seed", be.seed, "initialization seed for untrained timing")
      ->capture_default_str();
  add_predictor_flags(b, be.predictor);

  MotionArgs mo;
  auto* m = add_config(app.add_subcommand("motion-study", "voxel time series before/after registration"));
  m->add_option("--out", mo.out, "report directory")->capture_default_str();
  m->add_option("--preset", mo.preset, "geometry preset")->capture_default_str();
  m->add_option("--frames", mo.frames, "time points")->capture_default_str();
  m->add_option("--seed", mo.seed, "motion seed")->capture_default_str();
  m->add_option("--subject-seed", mo.subject_seed, "phantom seed")->capture_default_str();
  m->add_option("--roi-edge", mo.roi_edge, "ROI box edge in voxels")->capture_default_str();
  m->add_option("--plot-voxels", mo.plot_voxels, "plotted voxels per ROI")->capture_default_str();
  m->add_option("--interpolation", mo.interpolation, "resampling: cubic or linear")
      ->capture_default_str();
  add_predictor_flags(m, mo.predictor);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (CLI::App* cmd : {g, t, e, b, m}) {
      if (cmd->parsed() && !config_path.empty()) apply_config(cmd, config_path);
    }
    if (g->parsed()) return cmd_generate(*g, gen);
    if (t->parsed()) return cmd_train(*t, tr);
    if (e->parsed()) return cmd_evaluate(*e, ev);
    if (b->parsed()) return cmd_bench(*b, be);
    if (m->parsed()) return cmd_motion(*m, mo);
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
