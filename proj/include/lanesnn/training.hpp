#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lanesnn/dataset.hpp"
#include "lanesnn/encoding.hpp"
#include "lanesnn/error.hpp"
#include "lanesnn/evaluation.hpp"
#include "lanesnn/snn.hpp"

namespace lanesnn {

// ---------------------------------------------------------------------------
// Losses on firing rates. All are means over the output pixels.

inline constexpr double kWceEps = 1e-7;

struct LossReport {
  double total = 0.0;
  double mse_part = 0.0;
  double wce_part = 0.0;
};

inline void check_same_length(std::span<const double> y, std::span<const double> y_hat, const char* who) {
  if (y.size() != y_hat.size() || y.empty()) throw std::invalid_argument(std::string(who) + ": length mismatch");
}

inline double loss_mse(std::span<const double> y, std::span<const double> y_hat) {
  check_same_length(y, y_hat, "loss_mse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
  return s / static_cast<double>(y.size());
}

// Positive class weighted by beta; predictions clamped to [eps, 1 - eps].
inline double loss_wce(std::span<const double> y, std::span<const double> y_hat, double beta) {
  check_same_length(y, y_hat, "loss_wce");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double q = std::clamp(y_hat[i], kWceEps, 1.0 - kWceEps);
    s -= beta * y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return s / static_cast<double>(y.size());
}

inline LossReport loss_joint(std::span<const double> y, std::span<const double> y_hat, double p, double beta) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("loss_joint: p must be in [0, 1]");
  LossReport r;
  r.mse_part = loss_mse(y, y_hat);
  r.wce_part = loss_wce(y, y_hat, beta);
  r.total = (1.0 - p) * r.mse_part + p * r.wce_part;
  return r;
}

// dL/dy_hat of loss_joint. The clamp has zero slope outside [eps, 1 - eps].
inline std::vector<double> loss_joint_grad(std::span<const double> y, std::span<const double> y_hat, double p,
                                           double beta) {
  check_same_length(y, y_hat, "loss_joint_grad");
  const auto n = static_cast<double>(y.size());
  std::vector<double> g(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double q = y_hat[i];
    double d_wce = 0.0;
    if (q >= kWceEps && q <= 1.0 - kWceEps) d_wce = -(beta * y[i] / q - (1.0 - y[i]) / (1.0 - q));
    const double d_mse = 2.0 * (q - y[i]);
    g[i] = ((1.0 - p) * d_mse + p * d_wce) / n;
  }
  return g;
}

// Rectangular pulse of width a1 and height 1/a1 centred on v_th.
inline double surrogate_derivative(double u, double v_th, double a1) {
  if (!(a1 > 0.0)) throw std::invalid_argument("surrogate_derivative: a1 must be > 0");
  return std::abs(u - v_th) < 0.5 * a1 ? 1.0 / a1 : 0.0;
}

// ---------------------------------------------------------------------------
// Spatio-temporal backpropagation

struct BackwardOptions {
  double a1 = 0.0;          // <= 0 selects 2 * v_th
  bool reset_term = true;   // include d u^{t+1} / d o^t = -tau * u^t
};

using Gradients = std::vector<LayerParams>;

// Reverse-mode pass through the unrolled dynamics. `d_rates` (batch x
// outputs) is dL/d(rate); every spike derivative is the surrogate pulse.
inline Gradients stbp_backward(const Network& net, const ForwardResult& fwd, const Matrix& d_rates,
                               const BackwardOptions& opts = {}) {
  if (!fwd.has_trace || fwd.trace.size() != net.layers().size())
    throw StateError("stbp_backward: forward trace missing (run forward with keep_trace)");
  if (d_rates.rows() != static_cast<Eigen::Index>(fwd.batch) ||
      d_rates.cols() != static_cast<Eigen::Index>(net.output_size()))
    throw std::invalid_argument("stbp_backward: d_rates has wrong shape");

  const LifParams& lif = net.lif();
  const double a1 = effective_a1(opts.a1, lif);
  const double tau = lif.tau;
  const auto T = static_cast<Eigen::Index>(fwd.steps);
  const auto B = static_cast<Eigen::Index>(fwd.batch);

  Gradients grads(net.layers().size());
  std::size_t first_weighted = net.layers().size();
  for (std::size_t i = 0; i < net.layers().size(); ++i)
    if (net.layers()[i].has_weights()) {
      first_weighted = i;
      break;
    }

  // dL/d(activity) flowing into the current layer's output.
  Matrix G(static_cast<Eigen::Index>(net.output_size()), B * T);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index t = 0; t < T; ++t) G.col(b * T + t) = d_rates.row(b).transpose() / static_cast<double>(T);

  for (std::size_t idx = net.layers().size(); idx-- > 0;) {
    const LayerSpec& l = net.layers()[idx];
    const LayerTrace& tr = fwd.trace[idx];
    if (l.kind == LayerKind::noise) continue;
    if (l.kind == LayerKind::dropout) {
      if (tr.mask.size() != 0) G.array() *= tr.mask.array();
      continue;
    }

    const Eigen::Index N = tr.u.rows();
    Matrix dU(N, B * T);
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index t = T - 1; t >= 0; --t) {
        const Eigen::Index c = b * T + t;
        const bool has_next = t + 1 < T;
        for (Eigen::Index j = 0; j < N; ++j) {
          double g = G(j, c);
          double carry = 0.0;
          if (has_next) {
            const double next = dU(j, c + 1);
            if (opts.reset_term) g -= next * tau * tr.u(j, c);
            carry = next * tau * (1.0 - tr.o(j, c));
          }
          dU(j, c) = g * surrogate_derivative(tr.u(j, c), lif.v_th, a1) + carry;
        }
      }

    const LayerParams& p = net.params()[idx];
    LayerParams& gp = grads[idx];
    const bool need_input_grad = idx > first_weighted;
    if (l.kind == LayerKind::dense) {
      gp.weights.noalias() = dU * tr.input.transpose();
      gp.bias = dU.rowwise().sum();
      if (need_input_grad) G.noalias() = p.weights.transpose() * dU;
    } else {
      const Shape3 out_shape = net.output_shape(idx);
      const auto hw = static_cast<Eigen::Index>(out_shape.rows * out_shape.cols);
      Eigen::Map<const Matrix> dX(dU.data(), static_cast<Eigen::Index>(l.out_channels), hw * B * T);
      gp.weights.noalias() = dX * tr.cols.transpose();
      gp.bias = dX.rowwise().sum();
      if (need_input_grad) {
        const Matrix d_cols = p.weights.transpose() * dX;
        G = col2im(d_cols, net.input_shape_of(idx), l, out_shape, B * T);
      }
    }
    if (!need_input_grad) break;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay: w <- (1 - lambda) w - lr * m_hat / (sqrt(v_hat) + eps)

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adamw_update(std::span<double> w, std::span<const double> g, std::span<double> m, std::span<double> v,
                         std::size_t step, double lr, double lambda, const AdamParams& ap) {
  if (w.size() != g.size() || w.size() != m.size() || w.size() != v.size())
    throw std::invalid_argument("adamw_update: shape mismatch");
  if (step == 0) throw std::invalid_argument("adamw_update: step counts from 1");
  const double bc1 = 1.0 - std::pow(ap.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(ap.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = ap.beta1 * m[i] + (1.0 - ap.beta1) * g[i];
    v[i] = ap.beta2 * v[i] + (1.0 - ap.beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] = (1.0 - lambda) * w[i] - lr * m_hat / (std::sqrt(v_hat) + ap.eps);
  }
}

struct AdamState {
  std::size_t step = 0;
  std::vector<LayerParams> m;
  std::vector<LayerParams> v;
};

inline std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vector& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<const double> as_span(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<const double> as_span(const Vector& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

inline void adamw_step(Network& net, const Gradients& grads, AdamState& st, double lr, double lambda,
                       const AdamParams& ap = {}, bool update_bias = false) {
  if (grads.size() != net.layers().size()) throw std::invalid_argument("adamw_step: gradient list size mismatch");
  if (st.m.empty()) {
    st.m.resize(net.layers().size());
    st.v.resize(net.layers().size());
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      if (!net.layers()[i].has_weights()) continue;
      const LayerParams& p = net.params()[i];
      st.m[i] = {Matrix::Zero(p.weights.rows(), p.weights.cols()), Vector::Zero(p.bias.size())};
      st.v[i] = st.m[i];
    }
  }
  ++st.step;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layers()[i].has_weights()) continue;
    LayerParams& p = net.params()[i];
    adamw_update(as_span(p.weights), as_span(grads[i].weights), as_span(st.m[i].weights), as_span(st.v[i].weights),
                 st.step, lr, lambda, ap);
    if (update_bias)
      adamw_update(as_span(p.bias), as_span(grads[i].bias), as_span(st.m[i].bias), as_span(st.v[i].bias), st.step,
                   lr, lambda, ap);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double p = 0.3;        // WCE share of the joint loss
  double beta = 4.0;     // positive-class weight
  double lr = 1e-4;
  double lambda = 1e-4;  // decoupled decay per optimizer step
  double v_th = 0.2;
  double tau = 0.2;
  double a1_half = 0.0;  // surrogate half-width; <= 0 means v_th
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  std::size_t steps = 30;
  AdamParams adam;
  std::uint64_t seed = 1;
  bool reset_term = true;
  bool train_bias = false;  // biases stay at their initial zero unless set
  std::size_t eval_every = 1;

  double a1() const { return 2.0 * (a1_half > 0.0 ? a1_half : v_th); }

  void validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("TrainConfig: p must be in [0, 1]");
    if (!(beta > 0.0)) throw std::invalid_argument("TrainConfig: beta must be > 0");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (!(lambda >= 0.0 && lambda < 1.0)) throw std::invalid_argument("TrainConfig: lambda must be in [0, 1)");
    if (epochs == 0 || batch_size == 0 || steps == 0)
      throw std::invalid_argument("TrainConfig: epochs, batch_size and steps must be >= 1");
    LifParams{v_th, 0.0, tau}.validate();
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss_total = 0.0;
  double loss_mse = 0.0;
  double loss_wce = 0.0;
  double test_iou = std::numeric_limits<double>::quiet_NaN();
  double best_threshold = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  Network best;
  Network last;
  std::vector<EpochMetrics> log;
  double best_iou = std::numeric_limits<double>::quiet_NaN();
  std::size_t optimizer_steps = 0;
};

inline std::vector<double> flatten(const Grid2D& g) { return {g.values().begin(), g.values().end()}; }

inline std::vector<const Grid2D*> input_ptrs(std::span<const Sample> samples) {
  std::vector<const Grid2D*> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(&s.input);
  return out;
}

// Inference-mode rates for every sample, then the threshold/IoU protocol.
inline ThresholdReport evaluate_network(const Network& net, std::span<const Sample> samples, std::size_t steps,
                                        Rng& rng, std::vector<Prediction>* preds_out = nullptr) {
  const auto ptrs = input_ptrs(samples);
  const auto rates = infer_rates(net, ptrs, steps, rng);
  std::vector<Prediction> preds;
  preds.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label.size() != rates[i].size())
      throw std::invalid_argument("evaluate_network: label size " + std::to_string(samples[i].label.size()) +
                                  " != network outputs " + std::to_string(rates[i].size()));
    preds.push_back({flatten(samples[i].label), rates[i], samples[i].id});
  }
  ThresholdReport rep = evaluate(preds, steps);
  if (preds_out) *preds_out = std::move(preds);
  return rep;
}

// Stream used for evaluation encodings; fixed per run so every epoch is
// scored on identical spike trains.
inline constexpr std::uint64_t kEvalStream = 0xe7a1;

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
}

using EpochCallback = std::function<void(const EpochMetrics&, const Network&)>;

// One optimizer step on a batch; returns the batch-mean loss.
inline LossReport train_batch(Network& net, std::span<const Sample* const> batch, const TrainConfig& cfg,
                              AdamState& adam, Rng& rng) {
  std::vector<const Grid2D*> imgs;
  for (const Sample* s : batch) imgs.push_back(&s->input);
  const SpikeTrainBatch spikes = encode_batch(imgs, cfg.steps, rng);
  ForwardOptions fo;
  fo.training = true;
  fo.a1 = cfg.a1();
  const ForwardResult fwd = forward(net, spikes, cfg.steps, rng, fo);

  const auto B = static_cast<double>(batch.size());
  Matrix d_rates(fwd.rates.rows(), fwd.rates.cols());
  LossReport mean;
  std::vector<double> rates(static_cast<std::size_t>(fwd.rates.cols()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto row = static_cast<Eigen::Index>(b);
    for (std::size_t j = 0; j < rates.size(); ++j) rates[j] = fwd.rates(row, static_cast<Eigen::Index>(j));
    const auto y = batch[b]->label.values();
    if (y.size() != rates.size())
      throw std::invalid_argument("train: label size " + std::to_string(y.size()) + " != network outputs " +
                                  std::to_string(rates.size()));
    const LossReport lr = loss_joint(y, rates, cfg.p, cfg.beta);
    mean.total += lr.total / B;
    mean.mse_part += lr.mse_part / B;
    mean.wce_part += lr.wce_part / B;
    const auto g = loss_joint_grad(y, rates, cfg.p, cfg.beta);
    for (std::size_t j = 0; j < g.size(); ++j) d_rates(row, static_cast<Eigen::Index>(j)) = g[j] / B;
  }
  if (!std::isfinite(mean.total)) throw NumericError("non-finite loss " + std::to_string(mean.total));

  BackwardOptions bo;
  bo.a1 = cfg.a1();
  bo.reset_term = cfg.reset_term;
  const Gradients grads = stbp_backward(net, fwd, d_rates, bo);
  for (const auto& gp : grads)
    if (!gp.weights.allFinite() || !gp.bias.allFinite()) throw NumericError("non-finite gradient");
  adamw_step(net, grads, adam, cfg.lr, cfg.lambda, cfg.adam, cfg.train_bias);
  return mean;
}

// Per epoch: shuffle, fresh spike encoding, noisy/dropout forward, joint
// loss, backward, AdamW. The network with the best test IoU is kept.
inline TrainResult train(std::span<const Sample> train_set, std::span<const Sample> test_set, Network net,
                         const TrainConfig& cfg, Rng& rng, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  net.set_lif(LifParams{cfg.v_th, 0.0, cfg.tau});

  TrainResult res{net, net, {}, std::numeric_limits<double>::quiet_NaN(), 0};
  AdamState adam;
  const Rng eval_base = rng.child(kEvalStream);
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    EpochMetrics m;
    m.epoch = epoch;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<const Sample*> batch;
      for (std::size_t k = begin; k < end; ++k) batch.push_back(&train_set[order[k]]);
      const LossReport lr = train_batch(net, batch, cfg, adam, rng);
      m.loss_total += lr.total;
      m.loss_mse += lr.mse_part;
      m.loss_wce += lr.wce_part;
      ++n_batches;
      ++res.optimizer_steps;
    }
    m.loss_total /= static_cast<double>(n_batches);
    m.loss_mse /= static_cast<double>(n_batches);
    m.loss_wce /= static_cast<double>(n_batches);

    const bool eval_now = !test_set.empty() && cfg.eval_every > 0 &&
                          (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
    if (eval_now) {
      Rng eval_rng = eval_base;
      const ThresholdReport rep = evaluate_network(net, test_set, cfg.steps, eval_rng);
      m.test_iou = rep.mean_iou;
      m.best_threshold = rep.mean_best_th;
      if (std::isnan(res.best_iou) || rep.mean_iou > res.best_iou) {
        res.best_iou = rep.mean_iou;
        res.best = net;
      }
    }
    res.log.push_back(m);
    if (on_epoch) on_epoch(m, net);
  }
  res.last = net;
  if (test_set.empty()) res.best = net;
  return res;
}

inline void write_metrics_header(std::ostream& out) { out << "epoch,loss_total,loss_mse,loss_wce,test_iou,best_threshold\n"; }

inline void write_metrics_row(std::ostream& out, const EpochMetrics& m) {
  out << m.epoch << ',' << fmt_g6(m.loss_total) << ',' << fmt_g6(m.loss_mse) << ',' << fmt_g6(m.loss_wce) << ','
      << fmt_g6(m.test_iou) << ',' << fmt_g6(m.best_threshold) << '\n';
}

inline void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_metrics_header(out);
  for (const auto& m : log) write_metrics_row(out, m);
}

}  // namespace lanesnn
