#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lanesnn/encoding.hpp"
#include "lanesnn/numerics.hpp"

namespace lanesnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Leaky integrate-and-fire constants. `tau` is the per-step retain factor of
// the membrane; a spike gates the carry-over to zero on the next step.
struct LifParams {
  double v_th = 0.2;
  double v_reset = 0.0;
  double tau = 0.2;

  void validate() const {
    if (!(v_th > 0.0)) throw std::invalid_argument("LifParams: v_th must be > 0");
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("LifParams: tau must be in (0, 1)");
    if (v_reset != 0.0) throw std::invalid_argument("LifParams: only v_reset = 0 is supported");
  }
};

enum class LayerKind { conv2d, dense, dropout, noise };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::noise: return "noise";
  }
  return "?";
}

// Activity layout is height-width-channel with the channel fastest:
// flat index (r * cols + c) * channels + ch.
struct Shape3 {
  std::size_t channels = 1;
  std::size_t rows = 1;
  std::size_t cols = 1;

  std::size_t size() const noexcept { return channels * rows * cols; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t padding = 0;
  std::size_t stride = 1;
  std::size_t in_units = 0;
  std::size_t units = 0;
  double drop_prob = 0.0;
  double sigma_r = 0.0;

  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t padding,
                          std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::conv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = kernel;
    s.padding = padding;
    s.stride = stride;
    return s;
  }
  static LayerSpec dense(std::size_t in_units, std::size_t units) {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.in_units = in_units;
    s.units = units;
    return s;
  }
  static LayerSpec dropout(double p) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.drop_prob = p;
    return s;
  }
  static LayerSpec noise(double sigma_r) {
    LayerSpec s;
    s.kind = LayerKind::noise;
    s.sigma_r = sigma_r;
    return s;
  }

  bool has_weights() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Conv weights are (out_ch x kernel*kernel*in_ch) with columns ordered
// (ky, kx, in_ch), in_ch fastest. Dense weights are (units x in_units).
// Conv biases are per output channel.
struct LayerParams {
  Matrix weights;
  Vector bias;
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t padding, std::size_t stride) {
  if (stride == 0 || in + 2 * padding < kernel) throw std::invalid_argument("conv2d: kernel larger than padded input");
  return (in + 2 * padding - kernel) / stride + 1;
}

class Network {
 public:
  Network(std::string name, Shape3 input, std::vector<LayerSpec> layers, LifParams lif = {})
      : name_(std::move(name)), input_(input), layers_(std::move(layers)), lif_(lif) {
    lif_.validate();
    if (layers_.empty() || !layers_.back().has_weights())
      throw std::invalid_argument("Network: last layer must be a spiking (conv2d or dense) layer");
    Shape3 cur = input_;
    shapes_.reserve(layers_.size());
    params_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      switch (l.kind) {
        case LayerKind::conv2d: {
          if (l.in_channels != cur.channels)
            throw std::invalid_argument("Network: conv2d layer " + std::to_string(i) + " expects " +
                                        std::to_string(l.in_channels) + " channels, got " +
                                        std::to_string(cur.channels));
          cur = Shape3{l.out_channels, conv_out_dim(cur.rows, l.kernel, l.padding, l.stride),
                       conv_out_dim(cur.cols, l.kernel, l.padding, l.stride)};
          params_[i].weights = Matrix::Zero(static_cast<Eigen::Index>(l.out_channels),
                                            static_cast<Eigen::Index>(l.kernel * l.kernel * l.in_channels));
          params_[i].bias = Vector::Zero(static_cast<Eigen::Index>(l.out_channels));
          break;
        }
        case LayerKind::dense: {
          if (l.in_units != cur.size())
            throw std::invalid_argument("Network: dense layer " + std::to_string(i) + " expects " +
                                        std::to_string(l.in_units) + " inputs, got " + std::to_string(cur.size()));
          cur = Shape3{1, 1, l.units};
          params_[i].weights =
              Matrix::Zero(static_cast<Eigen::Index>(l.units), static_cast<Eigen::Index>(l.in_units));
          params_[i].bias = Vector::Zero(static_cast<Eigen::Index>(l.units));
          break;
        }
        case LayerKind::dropout:
          if (!(l.drop_prob >= 0.0 && l.drop_prob < 1.0))
            throw std::invalid_argument("Network: dropout probability must be in [0, 1)");
          break;
        case LayerKind::noise:
          if (!(l.sigma_r >= 0.0)) throw std::invalid_argument("Network: noise sigma must be >= 0");
          break;
      }
      shapes_.push_back(cur);
    }
  }

  const std::string& name() const noexcept { return name_; }
  const Shape3& input_shape() const noexcept { return input_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  // Activity shape after layer i.
  const Shape3& output_shape(std::size_t i) const { return shapes_.at(i); }
  std::size_t output_size() const noexcept { return shapes_.back().size(); }

  const LifParams& lif() const noexcept { return lif_; }
  void set_lif(const LifParams& lif) {
    lif.validate();
    lif_ = lif;
  }

  std::vector<LayerParams>& params() noexcept { return params_; }
  const std::vector<LayerParams>& params() const noexcept { return params_; }

  Shape3 input_shape_of(std::size_t i) const { return i == 0 ? input_ : shapes_.at(i - 1); }

  // Trainable values (weights, plus biases if requested).
  std::size_t parameter_count(bool include_bias = true) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (!layers_[i].has_weights()) continue;
      n += static_cast<std::size_t>(params_[i].weights.size());
      if (include_bias) n += static_cast<std::size_t>(params_[i].bias.size());
    }
    return n;
  }

  // Synapses of the network unrolled onto individual neurons, as a
  // neuromorphic deployment instantiates them: every conv output neuron owns
  // kernel*kernel*in_channels synapses (weight sharing does not reduce it).
  std::size_t synapse_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      if (l.kind == LayerKind::conv2d)
        n += shapes_[i].size() * l.kernel * l.kernel * l.in_channels;
      else if (l.kind == LayerKind::dense)
        n += l.units * l.in_units;
    }
    return n;
  }

 private:
  std::string name_;
  Shape3 input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape3> shapes_;
  std::vector<LayerParams> params_;
  LifParams lif_;
};

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
inline void init_weights(Network& net, Rng& rng) {
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const LayerSpec& l = net.layers()[i];
    if (!l.has_weights()) continue;
    LayerParams& p = net.params()[i];
    const double fan_in = static_cast<double>(p.weights.cols());
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = rng.uniform_real(-bound, bound);
    p.bias.setZero();
  }
}

struct InitConfig {
  double sigma_r = 0.1;
  double drop_prob = 0.1;
};

inline std::string canonical_arch_name(std::string_view name) {
  std::string key;
  for (char ch : name)
    if (ch != '-' && ch != '_' && ch != ' ') key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (key == "cnn") return "cnn";
  if (key == "fullyc600") return "fully-c600";
  if (key == "fullyc800") return "fully-c800";
  if (key == "fullyc800600") return "fully-c800600";
  throw std::invalid_argument("unknown architecture: " + std::string(name));
}

// Layer list of one of the four lane networks; every spiking layer is
// preceded by a Gaussian noise layer.
inline std::vector<LayerSpec> lane_architecture(std::string_view name, const InitConfig& cfg = {}) {
  const std::string arch = canonical_arch_name(name);
  const double s = cfg.sigma_r;
  if (arch == "cnn") {
    return {LayerSpec::noise(s),  LayerSpec::conv2d(1, 4, 3, 1, 1), LayerSpec::noise(s),
            LayerSpec::conv2d(4, 4, 3, 1, 1), LayerSpec::noise(s),  LayerSpec::conv2d(4, 8, 3, 1, 2),
            LayerSpec::noise(s),  LayerSpec::conv2d(8, 8, 3, 1, 1), LayerSpec::noise(s),
            LayerSpec::conv2d(8, 16, 3, 1, 2), LayerSpec::dropout(cfg.drop_prob), LayerSpec::noise(s),
            LayerSpec::dense(1600, 400)};
  }
  std::vector<std::size_t> hidden;
  if (arch == "fully-c600") hidden = {600};
  if (arch == "fully-c800") hidden = {800};
  if (arch == "fully-c800600") hidden = {800, 600};
  std::vector<LayerSpec> layers;
  std::size_t prev = 1600;
  for (std::size_t h : hidden) {
    layers.push_back(LayerSpec::noise(s));
    layers.push_back(LayerSpec::dense(prev, h));
    prev = h;
  }
  layers.push_back(LayerSpec::noise(s));
  layers.push_back(LayerSpec::dense(prev, 400));
  return layers;
}

inline constexpr Shape3 kLaneInputShape{1, 20, 80};
inline constexpr std::size_t kLaneOutputUnits = 400;

inline Network build_network(std::string_view name, Rng& rng, const InitConfig& cfg = {}, const LifParams& lif = {}) {
  Network net(canonical_arch_name(name), kLaneInputShape, lane_architecture(name, cfg), lif);
  init_weights(net, rng);
  return net;
}

// ---------------------------------------------------------------------------
// Neuron dynamics

enum class SpikeMode {
  hard,    // o = [u > v_th]
  smooth,  // o = clamp((u - v_th + a1/2) / a1, 0, 1); derivative is the surrogate pulse
};

inline double spike_fn(double u, double v_th, SpikeMode mode, double a1) {
  if (mode == SpikeMode::hard) return u > v_th ? 1.0 : 0.0;
  return std::clamp((u - v_th + 0.5 * a1) / a1, 0.0, 1.0);
}

inline double membrane_update(double u_prev, double o_prev, double x, double tau) {
  return u_prev * tau * (1.0 - o_prev) + x;
}

struct LifStepResult {
  std::vector<double> u;
  std::vector<double> o;
};

// One step for a vector of neurons; `x` is the full synaptic drive (bias
// included).
inline LifStepResult lif_step(std::span<const double> u, std::span<const double> x, std::span<const double> prev_o,
                              const LifParams& p, SpikeMode mode = SpikeMode::hard, double a1 = 0.0) {
  if (u.size() != x.size() || u.size() != prev_o.size()) throw std::invalid_argument("lif_step: shape mismatch");
  if (a1 <= 0.0) a1 = 2.0 * p.v_th;
  LifStepResult r{std::vector<double>(u.size()), std::vector<double>(u.size())};
  for (std::size_t i = 0; i < u.size(); ++i) {
    r.u[i] = membrane_update(u[i], prev_o[i], x[i], p.tau);
    r.o[i] = spike_fn(r.u[i], p.v_th, mode, a1);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Layer primitives. Activity matrices hold one column per (sample, step)
// with column index sample * T + t.

// Builds (k*k*in_ch) x (out_h*out_w*ncols) patches so that W * cols gives the
// conv output with the channel fastest.
inline Matrix im2col(const Matrix& in, const Shape3& in_shape, const LayerSpec& l, const Shape3& out_shape) {
  const auto k = static_cast<std::ptrdiff_t>(l.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  const auto stride = static_cast<std::ptrdiff_t>(l.stride);
  const auto C = static_cast<std::ptrdiff_t>(in_shape.channels);
  const auto H = static_cast<std::ptrdiff_t>(in_shape.rows);
  const auto W = static_cast<std::ptrdiff_t>(in_shape.cols);
  const auto hw_out = static_cast<Eigen::Index>(out_shape.rows * out_shape.cols);
  Matrix cols = Matrix::Zero(k * k * C, hw_out * in.cols());
  for (Eigen::Index n = 0; n < in.cols(); ++n) {
    const double* src = in.col(n).data();
    for (std::ptrdiff_t oy = 0; oy < static_cast<std::ptrdiff_t>(out_shape.rows); ++oy)
      for (std::ptrdiff_t ox = 0; ox < static_cast<std::ptrdiff_t>(out_shape.cols); ++ox) {
        double* dst = cols.col(n * hw_out + oy * static_cast<std::ptrdiff_t>(out_shape.cols) + ox).data();
        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const double* s = src + (iy * W + ix) * C;
            double* d = dst + (ky * k + kx) * C;
            for (std::ptrdiff_t c = 0; c < C; ++c) d[c] = s[c];
          }
        }
      }
  }
  return cols;
}

// Scatter-add inverse of im2col.
inline Matrix col2im(const Matrix& cols, const Shape3& in_shape, const LayerSpec& l, const Shape3& out_shape,
                     Eigen::Index ncols) {
  const auto k = static_cast<std::ptrdiff_t>(l.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  const auto stride = static_cast<std::ptrdiff_t>(l.stride);
  const auto C = static_cast<std::ptrdiff_t>(in_shape.channels);
  const auto H = static_cast<std::ptrdiff_t>(in_shape.rows);
  const auto W = static_cast<std::ptrdiff_t>(in_shape.cols);
  const auto hw_out = static_cast<Eigen::Index>(out_shape.rows * out_shape.cols);
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(in_shape.size()), ncols);
  for (Eigen::Index n = 0; n < ncols; ++n) {
    double* dst = out.col(n).data();
    for (std::ptrdiff_t oy = 0; oy < static_cast<std::ptrdiff_t>(out_shape.rows); ++oy)
      for (std::ptrdiff_t ox = 0; ox < static_cast<std::ptrdiff_t>(out_shape.cols); ++ox) {
        const double* src = cols.col(n * hw_out + oy * static_cast<std::ptrdiff_t>(out_shape.cols) + ox).data();
        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
          const std::ptrdiff_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
            const std::ptrdiff_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            double* d = dst + (iy * W + ix) * C;
            const double* s = src + (ky * k + kx) * C;
            for (std::ptrdiff_t c = 0; c < C; ++c) d[c] += s[c];
          }
        }
      }
  }
  return out;
}

// Zero-padded cross-correlation. `cols_out`, when given, receives the patch
// matrix for reuse in the backward pass.
inline Matrix conv2d_forward(const Matrix& in, const Shape3& in_shape, const LayerSpec& l, const LayerParams& p,
                             Matrix* cols_out = nullptr) {
  if (l.kind != LayerKind::conv2d) throw std::invalid_argument("conv2d_forward: not a conv layer");
  if (static_cast<std::size_t>(in.rows()) != in_shape.size() || in_shape.channels != l.in_channels)
    throw std::invalid_argument("conv2d_forward: input does not match layer");
  const Shape3 out_shape{l.out_channels, conv_out_dim(in_shape.rows, l.kernel, l.padding, l.stride),
                         conv_out_dim(in_shape.cols, l.kernel, l.padding, l.stride)};
  Matrix cols = im2col(in, in_shape, l, out_shape);
  Matrix x = p.weights * cols;  // out_ch x (hw_out * ncols)
  x.colwise() += p.bias;
  Matrix out = Eigen::Map<const Matrix>(x.data(), static_cast<Eigen::Index>(out_shape.size()), in.cols());
  if (cols_out) *cols_out = std::move(cols);
  return out;
}

inline Matrix dense_forward(const Matrix& in, const LayerParams& p) {
  if (in.rows() != p.weights.cols()) throw std::invalid_argument("dense_forward: input length does not match layer");
  Matrix x = p.weights * in;
  x.colwise() += p.bias;
  return x;
}

// Additive N(0, sigma) per element in storage order; identity at inference.
inline void apply_noise(Matrix& x, double sigma, Rng& rng, bool training) {
  if (sigma < 0.0) throw std::invalid_argument("apply_noise: negative sigma");
  if (!training || sigma == 0.0) return;
  double* d = x.data();
  for (Eigen::Index i = 0; i < x.size(); ++i) d[i] += sigma * rng.standard_normal();
}

// Inverted dropout. Returns the multiplier applied (0 or 1/(1-p)), or an
// empty matrix when nothing was applied.
inline Matrix apply_dropout(Matrix& x, double drop_prob, Rng& rng, bool training) {
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw std::invalid_argument("apply_dropout: p must be in [0, 1)");
  if (!training || drop_prob == 0.0) return {};
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - drop_prob);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < drop_prob ? 0.0 : keep;
  x.array() *= mask.array();
  return mask;
}

// ---------------------------------------------------------------------------
// Forward simulation

struct ForwardOptions {
  bool training = false;
  SpikeMode mode = SpikeMode::hard;
  double a1 = 0.0;  // pulse width; <= 0 selects 2 * v_th
  bool keep_trace = true;
};

inline double effective_a1(double a1, const LifParams& lif) { return a1 > 0.0 ? a1 : 2.0 * lif.v_th; }

struct LayerTrace {
  Matrix input;  // presynaptic activity after noise/dropout
  Matrix cols;   // conv patches of `input`
  Matrix u;
  Matrix o;
  Matrix mask;   // dropout multiplier
};

struct ForwardResult {
  std::size_t batch = 0;
  std::size_t steps = 0;
  Matrix rates;  // batch x outputs, each a multiple of 1/T in hard mode
  std::vector<LayerTrace> trace;
  bool has_trace = false;
};

// Unpacks spikes into an activity matrix (pixels x batch*T).
inline Matrix spikes_to_activity(const SpikeTrainBatch& batch) {
  const std::size_t P = batch.pixels_per_sample();
  const std::size_t T = batch.steps();
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(batch.batch() * T));
  const std::size_t C = batch.channels();
  for (std::size_t b = 0; b < batch.batch(); ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t r = 0; r < batch.rows(); ++r)
        for (std::size_t col = 0; col < batch.cols(); ++col) {
          const auto row = static_cast<Eigen::Index>((r * batch.cols() + col) * C + c);
          for (std::size_t t = 0; t < T; ++t)
            if (batch.get(b, c, r, col, t)) a(row, static_cast<Eigen::Index>(b * T + t)) = 1.0;
        }
  return a;
}

// Runs every layer over all T steps. Layer n at step t sees the spikes layer
// n-1 emitted at the same step.
inline ForwardResult forward(const Network& net, const Matrix& input, std::size_t batch, std::size_t steps, Rng& rng,
                             const ForwardOptions& opts = {}) {
  if (batch == 0 || steps == 0) throw std::invalid_argument("forward: empty batch");
  if (static_cast<std::size_t>(input.rows()) != net.input_shape().size() ||
      static_cast<std::size_t>(input.cols()) != batch * steps)
    throw std::invalid_argument("forward: input activity has wrong shape");
  const LifParams& lif = net.lif();
  const double a1 = effective_a1(opts.a1, lif);
  const auto T = static_cast<Eigen::Index>(steps);

  ForwardResult res;
  res.batch = batch;
  res.steps = steps;
  res.has_trace = opts.keep_trace;
  if (opts.keep_trace) res.trace.resize(net.layers().size());

  Matrix cur = input;
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    const LayerSpec& l = net.layers()[i];
    switch (l.kind) {
      case LayerKind::noise:
        apply_noise(cur, l.sigma_r, rng, opts.training);
        break;
      case LayerKind::dropout: {
        Matrix mask = apply_dropout(cur, l.drop_prob, rng, opts.training);
        if (opts.keep_trace) res.trace[i].mask = std::move(mask);
        break;
      }
      case LayerKind::conv2d:
      case LayerKind::dense: {
        Matrix cols;
        Matrix x = l.kind == LayerKind::conv2d
                       ? conv2d_forward(cur, net.input_shape_of(i), l, net.params()[i], opts.keep_trace ? &cols : nullptr)
                       : dense_forward(cur, net.params()[i]);
        Matrix u(x.rows(), x.cols());
        Matrix o(x.rows(), x.cols());
        const Eigen::Index N = x.rows();
        for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
          for (Eigen::Index t = 0; t < T; ++t) {
            const Eigen::Index c = b * T + t;
            for (Eigen::Index j = 0; j < N; ++j) {
              const double un = t == 0 ? x(j, c) : membrane_update(u(j, c - 1), o(j, c - 1), x(j, c), lif.tau);
              u(j, c) = un;
              o(j, c) = spike_fn(un, lif.v_th, opts.mode, a1);
            }
          }
        if (opts.keep_trace) {
          LayerTrace& tr = res.trace[i];
          tr.input = std::move(cur);
          tr.cols = std::move(cols);
          tr.u = std::move(u);
          tr.o = o;
        }
        cur = std::move(o);
        break;
      }
    }
  }

  const Eigen::Index outputs = cur.rows();
  res.rates = Matrix::Zero(static_cast<Eigen::Index>(batch), outputs);
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
    res.rates.row(b) = cur.middleCols(b * T, T).rowwise().sum().transpose() / static_cast<double>(steps);
  return res;
}

inline ForwardResult forward(const Network& net, const SpikeTrainBatch& batch, std::size_t steps, Rng& rng,
                             const ForwardOptions& opts = {}) {
  if (batch.steps() != steps) throw std::invalid_argument("forward: batch steps != T");
  if (batch.pixels_per_sample() != net.input_shape().size())
    throw std::invalid_argument("forward: batch pixels do not match network input");
  return forward(net, spikes_to_activity(batch), batch.batch(), steps, rng, opts);
}

// Inference-mode firing rates for a list of images, encoded from `rng` in
// chunks of `chunk` samples. Row i of the result belongs to images[i].
inline std::vector<std::vector<double>> infer_rates(const Network& net, std::span<const Grid2D* const> images,
                                                    std::size_t steps, Rng& rng, std::size_t chunk = 8) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  ForwardOptions opts;
  opts.keep_trace = false;
  for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
    const std::size_t end = std::min(images.size(), begin + chunk);
    const SpikeTrainBatch spikes = encode_batch(images.subspan(begin, end - begin), steps, rng);
    const ForwardResult res = forward(net, spikes, steps, rng, opts);
    for (Eigen::Index b = 0; b < res.rates.rows(); ++b) {
      std::vector<double> r(static_cast<std::size_t>(res.rates.cols()));
      for (Eigen::Index j = 0; j < res.rates.cols(); ++j) r[static_cast<std::size_t>(j)] = res.rates(b, j);
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace lanesnn
