// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any check fails. Heavy checks drive the command-line tool.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include "gradcheck.hpp"
#include "lanesnn/lanesnn.hpp"

namespace fs = std::filesystem;
using namespace lanesnn;

namespace {

// Tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kResizeTol = 1e-12;
constexpr double kEncoderMeanLo = 14.7;
constexpr double kEncoderMeanHi = 15.3;
constexpr double kGofAlpha = 0.001;
constexpr double kRetainRelTol = 1e-3;
constexpr double kScale = 7.3;
constexpr std::size_t kGridPoints = 1000;
constexpr double kFTol = 1e-12;
constexpr double kMinIou = 0.45;
constexpr double kMaxQuantDrop = 0.05;
constexpr double kCountTol = 0.02;
constexpr std::size_t kTrainEpochs = 50;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Runs the CLI with output captured to `log`; returns the exit code.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(LANESNN_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Value of `key=` in the last line of `text` that contains it.
double field(const std::string& text, const std::string& key) {
  const auto pos = text.rfind(key + "=");
  if (pos == std::string::npos) throw std::runtime_error("no '" + key + "' in output:\n" + text);
  return std::stod(text.substr(pos + key.size() + 1));
}

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(11);
  Network net("fd", Shape3{1, 1, 32}, {LayerSpec::dense(32, 8), LayerSpec::dense(8, 4)}, LifParams{0.2, 0.0, 0.2});
  net.params()[0].weights = Matrix::NullaryExpr(8, 32, [&] { return rng.uniform_real(-0.04, 0.08); });
  net.params()[1].weights = Matrix::NullaryExpr(4, 8, [&] { return rng.uniform_real(-0.1, 0.3); });
  net.params()[0].bias = Vector::NullaryExpr(8, [&] { return rng.uniform_real(-0.05, 0.05); });
  net.params()[1].bias = Vector::NullaryExpr(4, [&] { return rng.uniform_real(-0.05, 0.05); });
  const std::size_t B = 2, T = 5;
  const Matrix in = test::random_spikes(32, static_cast<Eigen::Index>(B * T), 0.5, rng);
  const Matrix y = test::random_spikes(static_cast<Eigen::Index>(B), 4, 0.5, rng);
  const double err = test::max_fd_error(net, in, B, T, y, kGradStep);
  const double secs = seconds_since(t0);
  const std::size_t n_params = net.parameter_count(true);
  return {err < kGradRelTol && secs < 10.0 && n_params <= 300,
          "params=" + std::to_string(n_params) + " max_rel_err=" + fmt(err) + " (<" + fmt(kGradRelTol) +
              ") time=" + fmt(secs, 3) + "s"};
}

Outcome resize_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2);
  double worst = 0.0;
  bool exact = true;
  for (int k = 0; k < 50; ++k) {
    Grid2D img(300, 1280);
    for (double& v : img.values()) v = rng.uniform();
    for (auto [orows, ocols] : {std::pair<std::size_t, std::size_t>{20, 80}, {10, 40}}) {
      const Grid2D got = area_resize(img, orows, ocols);
      const std::size_t bh = 300 / orows, bw = 1280 / ocols;
      for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) {
          double s = 0.0;
          for (std::size_t a = 0; a < bh; ++a)
            for (std::size_t b = 0; b < bw; ++b) s += img(i * bh + a, j * bw + b);
          const double want = s / static_cast<double>(bh * bw);
          exact = exact && got(i, j) == want;
          worst = std::max(worst, std::abs(got(i, j) - want));
        }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kResizeTol && secs < 5.0,
          std::string(exact ? "bit-exact" : "max_abs_diff=" + fmt(worst)) + " time=" + fmt(secs, 3) + "s"};
}

Outcome thin_lane_survival() {
  const PreprocessConfig cfg;
  Grid2D label(300, 1280, 0.0);
  Rng rng(3);
  for (std::size_t br = 0; br < 10; ++br)
    for (std::size_t bc = 0; bc < 40; ++bc)
      label(br * 30 + static_cast<std::size_t>(rng.uniform_int(0, 29)),
            bc * 32 + static_cast<std::size_t>(rng.uniform_int(0, 31))) = 1.0;
  const Grid2D out = process_label(label, cfg);
  const bool ok = out.rows() == 10 && out.cols() == 40 && out.sum() == 400.0;
  return {ok, "output " + std::to_string(out.rows()) + "x" + std::to_string(out.cols()) +
                  " lane_pixels=" + fmt(out.sum()) + "/400"};
}

Outcome encoder_statistics() {
  const auto t0 = Clock::now();
  const std::size_t T = 30;
  Rng rng(4);
  const Grid2D img(100, 100, 0.5);
  const SpikeTrainBatch s = rate_encode(img, T, rng);
  std::vector<double> observed(T + 1, 0.0);
  double total = 0.0;
  for (std::size_t r = 0; r < 100; ++r)
    for (std::size_t c = 0; c < 100; ++c) {
      const std::size_t k = s.spike_count(0, 0, r, c);
      observed[k] += 1.0;
      total += static_cast<double>(k);
    }
  const double n = 1e4, mean = total / n;

  // Pool the tails so every bin expects at least 5 pixels.
  const boost::math::binomial_distribution<double> binom(static_cast<double>(T), 0.5);
  std::vector<double> obs_bins, exp_bins;
  double o_acc = 0.0, e_acc = 0.0;
  for (std::size_t k = 0; k <= T; ++k) {
    o_acc += observed[k];
    e_acc += n * boost::math::pdf(binom, static_cast<double>(k));
    if (e_acc >= 5.0 && n * boost::math::cdf(boost::math::complement(binom, static_cast<double>(k))) >= 5.0) {
      obs_bins.push_back(o_acc);
      exp_bins.push_back(e_acc);
      o_acc = e_acc = 0.0;
    }
  }
  obs_bins.back() += o_acc;
  exp_bins.back() += e_acc;
  double chi2 = 0.0;
  for (std::size_t i = 0; i < obs_bins.size(); ++i)
    chi2 += (obs_bins[i] - exp_bins[i]) * (obs_bins[i] - exp_bins[i]) / exp_bins[i];
  const double df = static_cast<double>(obs_bins.size() - 1);
  const double p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), chi2));
  const double secs = seconds_since(t0);
  return {mean >= kEncoderMeanLo && mean <= kEncoderMeanHi && p_value > kGofAlpha && secs < 5.0,
          "mean_count=" + fmt(mean) + " chi2=" + fmt(chi2) + " df=" + fmt(df) + " p=" + fmt(p_value) +
              " time=" + fmt(secs, 3) + "s"};
}

Outcome decay_translation() {
  Rng rng(5);
  const QuantizedNetwork qn = quantize(build_network("fully-c600", rng, {}, LifParams{0.2, 0.0, 0.2}));
  const double retain = static_cast<double>(kDecayUnit - qn.q.delta_v) / kDecayUnit;
  const double rel = std::abs(retain - 0.2) / 0.2;
  return {qn.q.delta_v == 3276 && rel <= kRetainRelTol,
          "delta_v=" + std::to_string(qn.q.delta_v) + " retain=" + fmt(retain, 8) + " rel_err=" + fmt(rel)};
}

Outcome scale_invariance() {
  Rng rng(6);
  for (const char* arch : {"fully-c600", "cnn"}) {
    Network net = build_network(arch, rng);
    for (auto& p : net.params()) p.weights *= 6.0;  // moderate firing
    Network scaled = net;
    for (auto& p : scaled.params()) p.weights *= kScale;
    scaled.set_lif(LifParams{net.lif().v_th * kScale, 0.0, net.lif().tau});
    const QuantizedNetwork a = quantize(net), b = quantize(scaled);
    if (!same_integer_program(a, b)) return {false, std::string(arch) + ": integer programs differ"};
    SpikeTrainBatch batch(4, 1, 20, 80, 30);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t r = 0; r < 20; ++r)
        for (std::size_t c = 0; c < 80; ++c)
          for (std::size_t t = 0; t < 30; ++t) batch.set(i, 0, r, c, t, rng.uniform() < 0.4);
    const auto ca = quant_forward(a, batch, 30), cb = quant_forward(b, batch, 30);
    if (ca != cb) return {false, std::string(arch) + ": spike counts differ"};
  }
  return {true, "fully-c600 and cnn: identical mantissas, integer constants and spike counts at x" + fmt(kScale)};
}

Outcome threshold_oracle() {
  const auto t0 = Clock::now();
  const std::size_t T = 30;
  const double lo = -0.05, hi = 1.05, cell = (hi - lo) / static_cast<double>(kGridPoints - 1);
  Rng rng(7);
  double worst_f = 0.0, worst_dist = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 400;
    std::vector<double> y(n), r(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.uniform() < 0.2 ? 1.0 : 0.0;
      const double p = y[i] == 1.0 ? 0.7 : 0.3;
      std::size_t c = 0;
      for (std::size_t t = 0; t < T; ++t) c += rng.uniform() < p;
      r[i] = static_cast<double>(c) / static_cast<double>(T);
    }
    const ThresholdChoice got = best_threshold(y, r, T);
    std::vector<double> f(kGridPoints);
    double best = -1.0;
    for (std::size_t j = 0; j < kGridPoints; ++j) {
      const PixelConfusion c = confusion(y, r, lo + cell * static_cast<double>(j));
      f[j] = f_measure(c.precision(), c.recall());
      best = std::max(best, f[j]);
    }
    double dist = 1e9;
    for (std::size_t j = 0; j < kGridPoints; ++j)
      if (f[j] == best) dist = std::min(dist, std::abs(lo + cell * static_cast<double>(j) - got.threshold));
    worst_f = std::max(worst_f, std::abs(best - got.f));
    worst_dist = std::max(worst_dist, dist);
  }
  const double secs = seconds_since(t0);
  return {worst_f <= kFTol && worst_dist <= cell && secs < 5.0,
          "max_F_diff=" + fmt(worst_f) + " max_threshold_to_argmax_grid=" + fmt(worst_dist) + " (cell " + fmt(cell) +
              ") time=" + fmt(secs, 3) + "s"};
}

struct MetricsRow {
  double loss = 0.0;
  double iou = 0.0;
};

std::vector<MetricsRow> read_metrics(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 6) throw std::runtime_error("malformed metrics row: " + line);
    rows.push_back({std::stod(cols[1]), std::stod(cols[4])});
  }
  return rows;
}

struct Pipeline {
  fs::path root;
  bool data_ok = false;
  bool c600_ok = false;
  std::string error;
};

Pipeline prepare_data(const fs::path& root) {
  Pipeline p;
  p.root = root;
  fs::remove_all(root);
  fs::create_directories(root);
  if (cli("gen-data --n-train 200 --n-test 50 --seed 1 --out " + q(root / "raw"), root / "gen.log") != 0) {
    p.error = "gen-data failed: " + slurp(root / "gen.log");
    return p;
  }
  if (cli("preprocess --data " + q(root / "raw") + " --out " + q(root / "proc") + " --seed 1", root / "pre.log") != 0) {
    p.error = "preprocess failed: " + slurp(root / "pre.log");
    return p;
  }
  p.data_ok = true;
  return p;
}

std::string train_args(const Pipeline& p, const std::string& arch) {
  return "train --arch " + arch + " --data " + q(p.root / "proc") + " --out " + q(p.root / (arch + ".ck")) +
         " --epochs " + std::to_string(kTrainEpochs) +
         " --p 0.3 --beta 4 --lr 1e-4 --lambda 1e-4 --vth 0.2 --seed 1 --quiet";
}

Outcome end_to_end_training(Pipeline& p) {
  if (!p.data_ok) return {false, p.error};
  const auto t0 = Clock::now();
  if (cli(train_args(p, "fully-c600"), p.root / "train_c600.log") != 0)
    return {false, "train failed: " + slurp(p.root / "train_c600.log")};
  const double secs = seconds_since(t0);
  const auto rows = read_metrics(p.root / "fully-c600.ck.metrics.csv");
  if (rows.size() != kTrainEpochs) return {false, "expected one metrics row per epoch"};
  if (cli("eval --ckpt " + q(p.root / "fully-c600.ck") + " --data " + q(p.root / "proc" / "test"),
          p.root / "eval_c600.log") != 0)
    return {false, "eval failed: " + slurp(p.root / "eval_c600.log")};
  const double iou = field(slurp(p.root / "eval_c600.log"), "mean_iou");

  // Moving average over every 10-epoch window; consecutive windows must not rise.
  double worst_rise = -1e9;
  std::vector<double> ma;
  for (std::size_t i = 0; i + 10 <= rows.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < i + 10; ++j) s += rows[j].loss;
    ma.push_back(s / 10.0);
  }
  for (std::size_t i = 1; i < ma.size(); ++i) worst_rise = std::max(worst_rise, ma[i] - ma[i - 1]);
  p.c600_ok = true;
  return {iou >= kMinIou && worst_rise <= 0.0,
          "test_iou=" + fmt(iou) + " (>=" + fmt(kMinIou) + ") final_epoch_iou=" + fmt(rows.back().iou) +
              " loss " + fmt(rows.front().loss) + "->" + fmt(rows.back().loss) +
              " max_ma10_step=" + fmt(worst_rise) + " time=" + fmt(secs, 4) + "s"};
}

// Float and quantized IoU of a trained checkpoint on the test split.
std::pair<double, double> quant_drop(const Pipeline& p, const std::string& arch) {
  const fs::path ck = p.root / (arch + ".ck"), qnt = p.root / (arch + ".qnt"), log = p.root / ("quant_" + arch + ".log");
  if (cli("quantize --ckpt " + q(ck) + " --out " + q(qnt), log) != 0)
    throw std::runtime_error("quantize failed: " + slurp(log));
  if (cli("infer-quant --qnt " + q(qnt) + " --ckpt " + q(ck) + " --data " + q(p.root / "proc" / "test"), log) != 0)
    throw std::runtime_error("infer-quant failed: " + slurp(log));
  const std::string out = slurp(log);
  return {field(out, "float_iou"), field(out, "quant_iou")};
}

Outcome quantization_ordering(const Pipeline& p) {
  if (!p.c600_ok) return {false, "needs the criterion-8 checkpoint"};
  const auto t0 = Clock::now();
  if (cli(train_args(p, "cnn"), p.root / "train_cnn.log") != 0)
    return {false, "cnn train failed: " + slurp(p.root / "train_cnn.log")};
  const auto [fc_float, fc_quant] = quant_drop(p, "fully-c600");
  const auto [cnn_float, cnn_quant] = quant_drop(p, "cnn");
  const double fc_drop = fc_float - fc_quant, cnn_drop = cnn_float - cnn_quant;
  return {fc_drop <= kMaxQuantDrop && cnn_drop > fc_drop,
          "fully-c600 " + fmt(fc_float) + "->" + fmt(fc_quant) + " (drop " + fmt(fc_drop) + ", <=" +
              fmt(kMaxQuantDrop) + "); cnn " + fmt(cnn_float) + "->" + fmt(cnn_quant) + " (drop " + fmt(cnn_drop) +
              ") time=" + fmt(seconds_since(t0), 4) + "s"};
}

Outcome parameter_counts() {
  const std::map<std::string, double> target{
      {"fully-c600", 1.20e6}, {"fully-c800", 1.60e6}, {"fully-c800600", 2.00e6}, {"cnn", 1.39e6}};
  bool ok = true;
  std::string detail;
  Rng rng(10);
  for (const auto& [arch, want] : target) {
    const auto n = static_cast<double>(build_network(arch, rng).synapse_count());
    const double rel = std::abs(n - want) / want;
    ok = ok && rel <= kCountTol;
    detail += arch + "=" + fmt(n, 8) + " (" + fmt(100.0 * rel, 3) + "%) ";
  }
  return {ok, detail};
}

// Relative path -> contents for every regular file under `root`.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() != ".log")
      out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  return out;
}

Outcome determinism(const fs::path& work) {
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* name : {"det_a", "det_b"}) {
    const fs::path d = work / name;
    fs::remove_all(d);
    fs::create_directories(d);
    const fs::path log = d / "run.log";
    const std::vector<std::string> steps{
        "gen-data --n-train 12 --n-test 4 --seed 3 --out " + q(d / "raw"),
        "preprocess --data " + q(d / "raw") + " --out " + q(d / "proc") + " --seed 3 --augment 8",
        "train --arch fully-c600 --data " + q(d / "proc") + " --out " + q(d / "model.ck") + " --last " +
            q(d / "model.last.ck") + " --epochs 5 --seed 3 --quiet",
        "eval --ckpt " + q(d / "model.ck") + " --data " + q(d / "proc" / "test") + " --report " + q(d / "report.csv") +
            " --pr " + q(d / "pr.csv") + " --emit-masks " + q(d / "masks")};
    for (const auto& s : steps)
      if (cli(s, log) != 0) return {false, "pipeline step failed: " + s + "\n" + slurp(log)};
    runs.push_back(snapshot(d));
  }
  if (runs[0].size() != runs[1].size()) return {false, "runs produced different file sets"};
  std::size_t csvs = 0, ckpts = 0;
  for (const auto& [path, content] : runs[0]) {
    const auto it = runs[1].find(path);
    if (it == runs[1].end() || it->second != content) return {false, "differs: " + path};
    csvs += path.ends_with(".csv");
    ckpts += path.ends_with(".ck");
  }
  return {true, std::to_string(runs[0].size()) + " files byte-identical (" + std::to_string(csvs) + " CSV, " +
                    std::to_string(ckpts) + " checkpoints)"};
}

}  // namespace

// Usage: acceptance [workdir] [--only=1,4,7]
int main(int argc, char** argv) {
  fs::path work = fs::current_path() / "acceptance_work";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a.starts_with("--only=")) {
      std::stringstream ss(a.substr(7));
      for (std::string id; std::getline(ss, id, ',');) only.insert(std::stoi(id));
    } else {
      work = a;
    }
  }
  fs::create_directories(work);
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    if (!only.empty() && !only.count(id)) return;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << o.detail << std::endl;
  };

  report(1, "gradient fidelity", gradient_fidelity);
  report(2, "resize oracle", resize_oracle);
  report(3, "thin-lane survival", thin_lane_survival);
  report(4, "encoder statistics", encoder_statistics);
  report(5, "decay-constant translation", decay_translation);
  report(6, "quantization scale invariance", scale_invariance);
  report(7, "threshold-search oracle", threshold_oracle);
  Pipeline pipe;
  if (only.empty() || only.count(8) || only.count(9)) pipe = prepare_data(work / "pipeline");
  report(8, "end-to-end training", [&] { return end_to_end_training(pipe); });
  report(9, "quantization degradation ordering", [&] { return quantization_ordering(pipe); });
  report(10, "parameter counts", parameter_counts);
  report(11, "determinism", [&] { return determinism(work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
