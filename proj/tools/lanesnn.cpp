// lanesnn: command-line front end for data generation, preprocessing,
// training, evaluation and fixed-point inference.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lanesnn/lanesnn.hpp"

namespace fs = std::filesystem;
using namespace lanesnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

constexpr const char* kManifestName = "manifest.tsv";

// Seed streams, one per pipeline stage.
constexpr std::uint64_t kStreamTrainData = 1;
constexpr std::uint64_t kStreamTestData = 2;
constexpr std::uint64_t kStreamAugment = 3;
constexpr std::uint64_t kStreamInit = 10;
constexpr std::uint64_t kStreamTrain = 11;
constexpr std::uint64_t kStreamEval = 20;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw DataError("cannot create directory " + p.string() + ": " + ec.message());
}

std::vector<Sample> load_split_dir(const fs::path& dir) {
  const fs::path manifest = dir / kManifestName;
  if (!fs::exists(manifest)) throw DataError("no " + std::string(kManifestName) + " in " + dir.string());
  return load_manifest_samples(read_manifest(manifest));
}

void write_split(const fs::path& dir, std::size_t n, const std::function<Sample(std::size_t)>& make) {
  ensure_dir(dir / "input");
  ensure_dir(dir / "label");
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) {
    const Sample s = make(i);
    const fs::path in = fs::path("input") / (s.id + ".pgm");
    const fs::path lab = fs::path("label") / (s.id + ".pgm");
    save_sample(s, dir / in, dir / lab);
    m.entries.push_back({in, lab, s.id});
  }
  write_manifest(dir / kManifestName, m);
}

// Rate masks scaled to 0-255, plus binary masks at threshold `th`.
void emit_masks(const fs::path& dir, const std::vector<Prediction>& preds, std::size_t rows, std::size_t cols,
                double th) {
  ensure_dir(dir);
  for (const auto& p : preds) {
    if (p.rates.size() != rows * cols) throw DataError("mask size does not match label size for " + p.id);
    Grid2D rate(rows, cols, 0.0);
    Grid2D bin(rows, cols, 0.0);
    for (std::size_t i = 0; i < p.rates.size(); ++i) {
      rate.values()[i] = p.rates[i];
      bin.values()[i] = p.rates[i] > th ? 1.0 : 0.0;
    }
    save_pgm(dir / (p.id + ".pgm"), rate);
    save_pgm(dir / (p.id + ".bin.pgm"), bin);
  }
}

void write_reports(const ThresholdReport& rep, const std::string& report, const std::string& pr) {
  if (!report.empty()) write_report_csv(report, rep);
  if (!pr.empty()) write_pr_csv(pr, rep);
}

void add_config(CLI::App* sub) {
  sub->add_option("--config", "File of `key = value` lines, one per option; command-line flags take precedence");
}

// Replaces `--config FILE` after the subcommand name with `--key=value`
// arguments placed directly after the subcommand, so later explicit flags
// override them. Keys must name options of that subcommand.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
  if (args.size() < 2) return args;
  const CLI::App* sub = nullptr;
  std::size_t sub_pos = 0;
  for (std::size_t i = 1; i < args.size() && !sub; ++i)
    for (const CLI::App* s : app.get_subcommands([](const CLI::App*) { return true; }))
      if (s->get_name() == args[i]) {
        sub = s;
        sub_pos = i;
        break;
      }
  if (!sub) return args;
  std::vector<std::string> rest;
  std::string config_path;
  for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config requires a file argument");
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out(args.begin(), args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1);
  if (!config_path.empty()) {
    std::vector<ConfigEntry> entries;
    try {
      entries = load_config(config_path);
    } catch (const ParseError& e) {
      throw UsageError(config_path + ": " + e.what());
    }
    for (const auto& e : entries) {
      if (e.key == "config" || !sub->get_option_no_throw("--" + e.key))
        throw UsageError(config_path + ": line " + std::to_string(e.line) + ": unknown key '" + e.key +
                         "' for " + sub->get_name());
      out.push_back("--" + e.key + "=" + e.value);
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::size_t n_train = 200;
  std::size_t n_test = 50;
  std::uint64_t seed = 1;
  std::string out;
  SyntheticConfig syn;
};

int cmd_gen_data(const GenDataArgs& a) {
  if (a.n_train == 0 || a.n_test == 0) throw UsageError("--n-train and --n-test must be >= 1");
  const Rng master(a.seed);
  const fs::path out(a.out);
  for (auto [name, n, stream] : {std::tuple{"train", a.n_train, kStreamTrainData},
                                 std::tuple{"test", a.n_test, kStreamTestData}}) {
    Rng rng = master.child(stream);
    const auto seeds = synthetic_seeds(rng, n);
    write_split(out / name, n, [&](std::size_t i) {
      Rng srng(seeds[i]);
      return generate_synthetic_sample(srng, a.syn, synthetic_id(i));
    });
  }
  std::cout << "wrote " << a.n_train << " train and " << a.n_test << " test samples to " << out.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PreprocessArgs {
  std::string data;
  std::string out;
  std::uint64_t seed = 1;
  PreprocessConfig cfg;
};

void check_raw_dimensions(const DatasetManifest& m, const PreprocessConfig& cfg) {
  std::vector<std::string> problems;
  const std::size_t min_rows = cfg.crop_top + cfg.crop_bottom + 1;
  for (const auto& e : m.entries) {
    for (const fs::path& p : {e.input, e.label}) {
      std::size_t rows = 0, cols = 0;
      try {
        load_pgm_bytes(p, rows, cols);
      } catch (const std::exception& ex) {
        problems.push_back(p.string() + ": " + ex.what());
        continue;
      }
      const std::size_t kept = rows >= min_rows ? rows - cfg.crop_top - cfg.crop_bottom : 0;
      const bool ok = kept > 0 && kept % cfg.input_rows == 0 && cols % cfg.input_cols == 0 &&
                      kept % cfg.label_rows == 0 && cols % cfg.label_cols == 0;
      if (!ok)
        problems.push_back(p.string() + ": " + std::to_string(cols) + "x" + std::to_string(rows) +
                           " does not reduce to the configured sizes");
    }
  }
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " file(s) with wrong dimensions:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
}

int cmd_preprocess(const PreprocessArgs& a) {
  const Rng master(a.seed);
  const fs::path in(a.data), out(a.out);
  for (const char* split : {"train", "test"}) {
    const fs::path manifest_path = in / split / kManifestName;
    if (!fs::exists(manifest_path)) throw DataError("missing manifest: " + manifest_path.string());
    const DatasetManifest m = read_manifest(manifest_path, split);
    if (m.entries.empty()) throw DataError("empty manifest: " + manifest_path.string());
    check_raw_dimensions(m, a.cfg);
    Rng rng = master.child(kStreamAugment);
    const bool is_train = std::string(split) == "train";
    const auto loader = [&](std::size_t i) {
      const auto& e = m.entries[i];
      return load_sample(e.input, e.label, e.id);
    };
    const auto processed = process_split(m.entries.size(), loader, rng, a.cfg, is_train);
    write_split(out / split, processed.size(), [&](std::size_t i) { return processed[i]; });
    std::cout << split << ": " << m.entries.size() << " raw -> " << processed.size() << " processed\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string arch = "fully-c600";
  std::string data;
  std::string out;
  std::string metrics;
  std::string last;
  TrainConfig cfg;
  InitConfig init;
  bool quiet = false;
  bool no_reset_term = false;
};

int cmd_train(TrainArgs a) {
  a.cfg.reset_term = !a.no_reset_term;
  a.cfg.validate();
  if (a.cfg.p > 0.5)
    std::cerr << "warning: p = " << a.cfg.p << " is outside the usual range [0, 0.5] for the WCE share\n";
  const auto train_set = load_split_dir(fs::path(a.data) / "train");
  const fs::path test_dir = fs::path(a.data) / "test";
  const auto test_set = fs::exists(test_dir / kManifestName) ? load_split_dir(test_dir) : std::vector<Sample>{};

  const Rng master(a.cfg.seed);
  Rng init_rng = master.child(kStreamInit);
  Network net = build_network(a.arch, init_rng, a.init, LifParams{a.cfg.v_th, 0.0, a.cfg.tau});
  Rng rng = master.child(kStreamTrain);

  const std::string metrics_path = a.metrics.empty() ? a.out + ".metrics.csv" : a.metrics;
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw DataError("cannot open for writing: " + metrics_path);
  write_metrics_header(metrics);

  std::cout << "training " << net.name() << " (" << net.parameter_count(false) << " weights) on "
            << train_set.size() << " samples, " << test_set.size() << " test\n";
  const TrainResult res = train(train_set, test_set, net, a.cfg, rng, [&](const EpochMetrics& m, const Network&) {
    write_metrics_row(metrics, m);
    metrics.flush();
    if (!a.quiet)
      std::cout << "epoch " << m.epoch << " loss=" << fmt_g6(m.loss_total) << " test_iou=" << fmt_g6(m.test_iou)
                << " th=" << fmt_g6(m.best_threshold) << std::endl;
  });
  save_checkpoint(fs::path(a.out), res.best);
  if (!a.last.empty()) save_checkpoint(fs::path(a.last), res.last);
  std::cout << "best_test_iou=" << fmt_g6(res.best_iou) << " checkpoint=" << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string ckpt;
  std::string data;
  std::size_t steps = 30;
  std::uint64_t seed = 1;
  std::string report;
  std::string pr;
  std::string masks;
};

int cmd_eval(const EvalArgs& a) {
  const Network net = load_checkpoint(fs::path(a.ckpt));
  const auto samples = load_split_dir(a.data);
  Rng rng = Rng(a.seed).child(kStreamEval);
  std::vector<Prediction> preds;
  const ThresholdReport rep = evaluate_network(net, samples, a.steps, rng, &preds);
  write_reports(rep, a.report, a.pr);
  if (!a.masks.empty()) emit_masks(a.masks, preds, samples.front().label.rows(), samples.front().label.cols(), rep.mean_best_th);
  std::cout << summary_line(rep) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct QuantizeArgs {
  std::string ckpt;
  std::string out;
  std::string report;
};

int cmd_quantize(const QuantizeArgs& a) {
  const Network net = load_checkpoint(fs::path(a.ckpt));
  std::vector<LayerQuantStats> stats;
  const QuantizedNetwork qn = quantize(net, &stats);
  for (const auto& w : qn.warnings) std::cerr << "warning: " << w << '\n';
  save_qnt(fs::path(a.out), qn);
  if (!a.report.empty()) write_quant_report_csv(a.report, stats);
  std::cout << "k=" << fmt_g6(qn.q.k) << " vth_mant=" << qn.q.vth_mant << " delta_v=" << qn.q.delta_v
            << " out=" << a.out << '\n';
  return kExitOk;
}

struct InferQuantArgs {
  std::string qnt;
  std::string data;
  std::string ckpt;
  std::size_t steps = 30;
  std::size_t blank = kDefaultBlankSteps;
  std::uint64_t seed = 1;
  std::string report;
  std::string pr;
  std::string masks;
};

int cmd_infer_quant(const InferQuantArgs& a) {
  const QuantizedNetwork qn = load_qnt(fs::path(a.qnt));
  const auto samples = load_split_dir(a.data);
  Rng rng = Rng(a.seed).child(kStreamEval);
  std::vector<Prediction> preds;
  const ThresholdReport rep = evaluate_quantized(qn, samples, a.steps, rng, a.blank, &preds);
  write_reports(rep, a.report, a.pr);
  if (!a.masks.empty()) emit_masks(a.masks, preds, samples.front().label.rows(), samples.front().label.cols(), rep.mean_best_th);
  std::cout << summary_line(rep) << '\n';
  if (!a.ckpt.empty()) {
    const Network net = load_checkpoint(fs::path(a.ckpt));
    Rng frng = Rng(a.seed).child(kStreamEval);
    const ThresholdReport frep = evaluate_network(net, samples, a.steps, frng);
    std::cout << "float_iou=" << fmt_g6(frep.mean_iou) << " quant_iou=" << fmt_g6(rep.mean_iou)
              << " delta=" << fmt_g6(rep.mean_iou - frep.mean_iou) << '\n';
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking-network lane detection: synthetic data, preprocessing, training, evaluation and "
               "fixed-point inference"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  GenDataArgs gen;
  auto* s_gen = app.add_subcommand("gen-data", "Generate a synthetic lane dataset as PGM pairs plus manifests");
  add_config(s_gen);
  s_gen->add_option("--n-train", gen.n_train, "Training samples");
  s_gen->add_option("--n-test", gen.n_test, "Test samples");
  s_gen->add_option("--seed", gen.seed, "Master seed");
  s_gen->add_option("--out", gen.out, "Output directory")->required();
  s_gen->add_option("--width", gen.syn.width, "Image width");
  s_gen->add_option("--height", gen.syn.height, "Image height");
  s_gen->add_option("--flip-prob", gen.syn.flip_prob, "Salt-and-pepper flip probability");
  s_gen->add_option("--jitter", gen.syn.jitter_std, "Gaussian intensity jitter std");

  PreprocessArgs pre;
  auto* s_pre = app.add_subcommand("preprocess", "Crop, augment and downscale a raw dataset");
  add_config(s_pre);
  s_pre->add_option("--data", pre.data, "Raw dataset directory (with train/ and test/)")->required();
  s_pre->add_option("--out", pre.out, "Output directory")->required();
  s_pre->add_option("--seed", pre.seed, "Augmentation seed");
  s_pre->add_option("--augment", pre.cfg.augment_count, "Augmented copies added to the training split");
  s_pre->add_option("--crop-top", pre.cfg.crop_top, "Rows removed from the top");
  s_pre->add_option("--crop-bottom", pre.cfg.crop_bottom, "Rows removed from the bottom");
  s_pre->add_option("--denorm", pre.cfg.denorm_value, "Label scale applied before downscaling");
  s_pre->add_option("--max-translate", pre.cfg.max_translate, "Largest vertical shift in pixels");
  s_pre->add_option("--max-rotate", pre.cfg.max_rotate_deg, "Largest rotation in degrees");

  TrainArgs tr;
  auto* s_train = app.add_subcommand("train", "Train a spiking network; writes a checkpoint and a metrics CSV");
  add_config(s_train);
  s_train->add_option("--arch", tr.arch, "cnn | fully-c600 | fully-c800 | fully-c800600");
  s_train->add_option("--data", tr.data, "Processed dataset directory (with train/ and optional test/)")->required();
  s_train->add_option("--out", tr.out, "Checkpoint path (best test IoU)")->required();
  s_train->add_option("--metrics", tr.metrics, "Metrics CSV path (default: <out>.metrics.csv)");
  s_train->add_option("--last", tr.last, "Also save the final-epoch checkpoint here");
  s_train->add_option("--p", tr.cfg.p, "WCE share of the joint loss");
  s_train->add_option("--beta", tr.cfg.beta, "WCE positive-class weight");
  s_train->add_option("--lr", tr.cfg.lr, "Learning rate");
  s_train->add_option("--lambda", tr.cfg.lambda, "Decoupled weight decay");
  s_train->add_option("--vth", tr.cfg.v_th, "Firing threshold");
  s_train->add_option("--tau", tr.cfg.tau, "Membrane retain factor per step");
  s_train->add_option("--a1-half", tr.cfg.a1_half, "Surrogate half-width (0 = vth)");
  s_train->add_option("--epochs", tr.cfg.epochs, "Epochs");
  s_train->add_option("--batch", tr.cfg.batch_size, "Batch size");
  s_train->add_option("--steps", tr.cfg.steps, "Time steps per sample");
  s_train->add_option("--sigma", tr.init.sigma_r, "Gaussian noise std added to every layer input");
  s_train->add_option("--dropout", tr.init.drop_prob, "Dropout before the CNN output layer");
  s_train->add_option("--seed", tr.cfg.seed, "Master seed");
  s_train->add_option("--eval-every", tr.cfg.eval_every, "Evaluate on the test split every N epochs");
  s_train->add_flag("--train-bias", tr.cfg.train_bias, "Also update biases");
  s_train->add_flag("--no-reset-term", tr.no_reset_term, "Drop the reset-gate term from the temporal gradient");
  s_train->add_flag("--quiet", tr.quiet, "No per-epoch output");

  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Threshold search and IoU of a float checkpoint");
  add_config(s_eval);
  s_eval->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  s_eval->add_option("--data", ev.data, "Split directory with manifest.tsv")->required();
  s_eval->add_option("--steps", ev.steps, "Time steps per sample");
  s_eval->add_option("--seed", ev.seed, "Encoding seed");
  s_eval->add_option("--report", ev.report, "Per-image CSV");
  s_eval->add_option("--pr", ev.pr, "Precision/recall curve CSV");
  s_eval->add_option("--emit-masks", ev.masks, "Directory for predicted-mask PGMs");

  QuantizeArgs qa;
  auto* s_quant = app.add_subcommand("quantize", "Translate a checkpoint to fixed-point parameters");
  add_config(s_quant);
  s_quant->add_option("--ckpt", qa.ckpt, "Checkpoint")->required();
  s_quant->add_option("--out", qa.out, "Quantized network path")->required();
  s_quant->add_option("--report", qa.report, "Per-layer quantization CSV");

  InferQuantArgs iq;
  auto* s_iq = app.add_subcommand("infer-quant", "Integer inference and IoU of a quantized network");
  add_config(s_iq);
  s_iq->add_option("--qnt", iq.qnt, "Quantized network")->required();
  s_iq->add_option("--data", iq.data, "Split directory with manifest.tsv")->required();
  s_iq->add_option("--ckpt", iq.ckpt, "Float checkpoint for the float-vs-quantized comparison");
  s_iq->add_option("--steps", iq.steps, "Time steps per sample");
  s_iq->add_option("--blank", iq.blank, "Silent steps between consecutive samples");
  s_iq->add_option("--seed", iq.seed, "Encoding seed");
  s_iq->add_option("--report", iq.report, "Per-image CSV");
  s_iq->add_option("--pr", iq.pr, "Precision/recall curve CSV");
  s_iq->add_option("--emit-masks", iq.masks, "Directory for predicted-mask PGMs");

  try {
    std::vector<std::string> args = expand_config(app, std::vector<std::string>(argv, argv + argc));
    std::vector<char*> cargs;
    for (auto& a : args) cargs.push_back(a.data());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return dynamic_cast<const DataError*>(&e) ? kExitData : kExitUsage;
  }

  try {
    if (*s_gen) return cmd_gen_data(gen);
    if (*s_pre) return cmd_preprocess(pre);
    if (*s_train) return cmd_train(tr);
    if (*s_eval) return cmd_eval(ev);
    if (*s_quant) return cmd_quantize(qa);
    if (*s_iq) return cmd_infer_quant(iq);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
