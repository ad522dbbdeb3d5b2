#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lanesnn/checkpoint.hpp"
#include "lanesnn/dataset.hpp"
#include "lanesnn/encoding.hpp"
#include "lanesnn/error.hpp"
#include "lanesnn/evaluation.hpp"
#include "lanesnn/snn.hpp"

namespace lanesnn {

// Fixed-point ranges of the target backend.
inline constexpr std::int32_t kWeightMantMin = -128;
inline constexpr std::int32_t kWeightMantMax = 127;
inline constexpr std::int32_t kVthMantMax = 4095;  // 12-bit unsigned
inline constexpr std::int32_t kDecayUnit = 4096;   // 12-bit decay denominator
inline constexpr double kWeightScaleNumerator = 15.0;  // 2^4 - 1
inline constexpr std::size_t kDefaultBlankSteps = 10;

using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

struct QuantParams {
  double k = 1.0;
  std::int32_t vth_mant = 0;
  std::int32_t delta_v = 0;
  std::int32_t delta_i = 0;
  std::int32_t bias = 0;
  std::int32_t wgt_exp = 0;

  friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

struct QuantizedNetwork {
  std::string name;
  Shape3 input;
  std::vector<LayerSpec> layers;
  std::vector<Shape3> shapes;      // output shape of each layer
  std::vector<IntMatrix> mant;     // empty for layers without weights
  QuantParams q;
  double v_th = 0.0;               // float constants the translation came from
  double tau = 0.0;
  std::vector<std::string> warnings;

  std::size_t output_size() const { return shapes.back().size(); }
  Shape3 input_shape_of(std::size_t i) const { return i == 0 ? input : shapes.at(i - 1); }

  friend bool operator==(const QuantizedNetwork& a, const QuantizedNetwork& b) {
    return a.name == b.name && a.input == b.input && a.layers == b.layers && a.mant == b.mant && a.q == b.q;
  }
};

// Everything that determines integer execution: topology, mantissas and the
// integer neuron constants. The real-valued scale k is not part of it.
inline bool same_integer_program(const QuantizedNetwork& a, const QuantizedNetwork& b) {
  QuantParams qa = a.q, qb = b.q;
  qa.k = qb.k = 0.0;
  return a.layers == b.layers && a.input == b.input && a.mant == b.mant && qa == qb;
}

inline double round_half_away(double x) { return x < 0.0 ? -std::floor(-x + 0.5) : std::floor(x + 0.5); }

// sign(u) * floor(|u| * (4096 - delta_v) / 4096)
inline std::int64_t decay_toward_zero(std::int64_t u, std::int32_t delta_v) {
  const std::int64_t keep = kDecayUnit - delta_v;
  return u < 0 ? -((-u) * keep / kDecayUnit) : u * keep / kDecayUnit;
}

inline double max_abs_weight(const Network& net) {
  double m = 0.0;
  for (std::size_t i = 0; i < net.layers().size(); ++i)
    if (net.layers()[i].has_weights()) m = std::max(m, net.params()[i].weights.cwiseAbs().maxCoeff());
  return m;
}

// k = 15 / max|w| over every synapse of the network.
inline double compute_k(const Network& net) {
  const double m = max_abs_weight(net);
  if (!(m > 0.0) || !std::isfinite(m)) throw std::invalid_argument("compute_k: network has no nonzero finite weight");
  return kWeightScaleNumerator / m;
}

inline double compute_k(std::span<const double> weights) {
  double m = 0.0;
  for (double w : weights) m = std::max(m, std::abs(w));
  if (!(m > 0.0) || !std::isfinite(m)) throw std::invalid_argument("compute_k: no nonzero finite weight");
  return kWeightScaleNumerator / m;
}

// Decay as the backend's 12-bit integer: floor(4096 * (1 - tau)).
inline std::int32_t decay_integer(double tau) {
  return static_cast<std::int32_t>(std::floor(static_cast<double>(kDecayUnit) * (1.0 - tau)));
}

struct LayerQuantStats {
  std::size_t layer = 0;
  std::string kind;
  double max_abs_w = 0.0;
  std::size_t weights = 0;
  std::size_t saturated = 0;
  double mean_abs_round_err = 0.0;  // in mantissa units
  double max_abs_round_err = 0.0;
};

inline QuantizedNetwork quantize(const Network& net, std::vector<LayerQuantStats>* stats = nullptr) {
  QuantizedNetwork qn;
  qn.name = net.name();
  qn.input = net.input_shape();
  qn.layers = net.layers();
  qn.v_th = net.lif().v_th;
  qn.tau = net.lif().tau;
  for (std::size_t i = 0; i < net.layers().size(); ++i) qn.shapes.push_back(net.output_shape(i));

  const double k = compute_k(net);
  qn.q.k = k;
  qn.q.delta_v = decay_integer(net.lif().tau);
  qn.q.delta_i = 0;
  qn.q.bias = 0;
  qn.q.wgt_exp = 0;
  const double vth = round_half_away(net.lif().v_th * k);
  if (vth > kVthMantMax) {
    qn.warnings.push_back("vth_mant " + fmt_g6(vth) + " exceeds 12-bit range; clamped to " +
                          std::to_string(kVthMantMax));
  }
  qn.q.vth_mant = static_cast<std::int32_t>(std::clamp(vth, 0.0, static_cast<double>(kVthMantMax)));

  qn.mant.resize(net.layers().size());
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layers()[i].has_weights()) continue;
    const Matrix& w = net.params()[i].weights;
    IntMatrix m(w.rows(), w.cols());
    LayerQuantStats st;
    st.layer = i;
    st.kind = std::string(to_string(net.layers()[i].kind));
    st.weights = static_cast<std::size_t>(w.size());
    for (Eigen::Index j = 0; j < w.size(); ++j) {
      const double scaled = w.data()[j] * k;
      const double r = round_half_away(scaled);
      const double c = std::clamp(r, static_cast<double>(kWeightMantMin), static_cast<double>(kWeightMantMax));
      if (c != r) ++st.saturated;
      m.data()[j] = static_cast<std::int32_t>(c);
      const double err = std::abs(scaled - c);
      st.mean_abs_round_err += err;
      st.max_abs_round_err = std::max(st.max_abs_round_err, err);
      st.max_abs_w = std::max(st.max_abs_w, std::abs(w.data()[j]));
    }
    if (st.weights) st.mean_abs_round_err /= static_cast<double>(st.weights);
    if (st.saturated)
      qn.warnings.push_back("layer " + std::to_string(i) + ": " + std::to_string(st.saturated) +
                            " weight mantissas saturated");
    qn.mant[i] = std::move(m);
    if (stats) stats->push_back(st);
  }
  return qn;
}

// ---------------------------------------------------------------------------
// Integer inference

// Membrane and last-step spikes of every spiking layer; persists across the
// samples of a stream.
struct QuantState {
  std::vector<std::vector<std::int64_t>> u;
  std::vector<std::vector<std::uint8_t>> o;

  explicit QuantState(const QuantizedNetwork& qn) : u(qn.layers.size()), o(qn.layers.size()) {
    for (std::size_t i = 0; i < qn.layers.size(); ++i)
      if (qn.layers[i].has_weights()) {
        u[i].assign(qn.shapes[i].size(), 0);
        o[i].assign(qn.shapes[i].size(), 0);
      }
  }
};

namespace detail {

// Adds the synaptic drive of the active inputs into `acc`.
inline void quant_drive(const QuantizedNetwork& qn, std::size_t i, std::span<const std::size_t> active,
                        std::vector<std::int64_t>& acc) {
  const LayerSpec& l = qn.layers[i];
  const IntMatrix& w = qn.mant[i];
  std::fill(acc.begin(), acc.end(), 0);
  if (l.kind == LayerKind::dense) {
    const auto rows = static_cast<std::size_t>(w.rows());
    for (std::size_t a : active) {
      const std::int32_t* col = w.data() + a * rows;
      for (std::size_t j = 0; j < rows; ++j) acc[j] += col[j];
    }
    return;
  }
  const Shape3 in = qn.input_shape_of(i);
  const Shape3 out = qn.shapes[i];
  const auto k = static_cast<std::ptrdiff_t>(l.kernel);
  const auto pad = static_cast<std::ptrdiff_t>(l.padding);
  const auto stride = static_cast<std::ptrdiff_t>(l.stride);
  const auto Cin = in.channels;
  const auto Cout = static_cast<std::size_t>(w.rows());
  for (std::size_t a : active) {
    const std::size_t ci = a % Cin;
    const auto ix = static_cast<std::ptrdiff_t>((a / Cin) % in.cols);
    const auto iy = static_cast<std::ptrdiff_t>(a / Cin / in.cols);
    for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
      const std::ptrdiff_t ny = iy + pad - ky;
      if (ny < 0 || ny % stride) continue;
      const std::ptrdiff_t oy = ny / stride;
      if (oy >= static_cast<std::ptrdiff_t>(out.rows)) continue;
      for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
        const std::ptrdiff_t nx = ix + pad - kx;
        if (nx < 0 || nx % stride) continue;
        const std::ptrdiff_t ox = nx / stride;
        if (ox >= static_cast<std::ptrdiff_t>(out.cols)) continue;
        const std::int32_t* col = w.data() + ((ky * k + kx) * static_cast<std::ptrdiff_t>(Cin) +
                                              static_cast<std::ptrdiff_t>(ci)) * static_cast<std::ptrdiff_t>(Cout);
        std::int64_t* dst = acc.data() + (oy * static_cast<std::ptrdiff_t>(out.cols) + ox) * static_cast<std::ptrdiff_t>(Cout);
        for (std::size_t co = 0; co < Cout; ++co) dst[co] += col[co];
      }
    }
  }
}

// One time step through every layer; returns the active output indices.
inline std::vector<std::size_t> quant_step(const QuantizedNetwork& qn, QuantState& st, std::vector<std::size_t> active,
                                           std::vector<std::int64_t>& acc) {
  for (std::size_t i = 0; i < qn.layers.size(); ++i) {
    if (!qn.layers[i].has_weights()) continue;  // noise and dropout are training-only
    acc.resize(qn.shapes[i].size());
    quant_drive(qn, i, active, acc);
    auto& u = st.u[i];
    auto& o = st.o[i];
    active.clear();
    for (std::size_t j = 0; j < u.size(); ++j) {
      const std::int64_t kept = o[j] ? 0 : decay_toward_zero(u[j], qn.q.delta_v);
      u[j] = kept + acc[j];
      o[j] = u[j] > qn.q.vth_mant ? 1 : 0;
      if (o[j]) active.push_back(j);
    }
  }
  return active;
}

}  // namespace detail

// Presents the samples one after another. Each sample runs T active steps,
// then `blank` steps of silent input; membranes are never reset explicitly.
// Returns output spike counts over the active steps, one row per sample.
inline std::vector<std::vector<std::uint32_t>> quant_forward(const QuantizedNetwork& qn, const SpikeTrainBatch& batch,
                                                             std::size_t steps, std::size_t blank,
                                                             QuantState& state) {
  if (batch.steps() != steps) throw std::invalid_argument("quant_forward: batch steps != T");
  if (batch.pixels_per_sample() != qn.input.size())
    throw std::invalid_argument("quant_forward: batch pixels do not match network input");
  const std::size_t C = batch.channels();
  std::vector<std::vector<std::uint32_t>> counts(batch.batch(), std::vector<std::uint32_t>(qn.output_size(), 0));
  std::vector<std::int64_t> acc;
  std::vector<std::size_t> active;
  for (std::size_t b = 0; b < batch.batch(); ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      active.clear();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t r = 0; r < batch.rows(); ++r)
          for (std::size_t col = 0; col < batch.cols(); ++col)
            if (batch.get(b, c, r, col, t)) active.push_back((r * batch.cols() + col) * C + c);
      std::sort(active.begin(), active.end());
      for (std::size_t j : detail::quant_step(qn, state, active, acc)) ++counts[b][j];
    }
    for (std::size_t t = 0; t < blank; ++t) detail::quant_step(qn, state, {}, acc);
  }
  return counts;
}

inline std::vector<std::vector<std::uint32_t>> quant_forward(const QuantizedNetwork& qn, const SpikeTrainBatch& batch,
                                                             std::size_t steps,
                                                             std::size_t blank = kDefaultBlankSteps) {
  QuantState state(qn);
  return quant_forward(qn, batch, steps, blank, state);
}

// Output rates (counts / T) for every sample, encoded from `rng` exactly as
// the float evaluation encodes them.
inline std::vector<std::vector<double>> quant_rates(const QuantizedNetwork& qn, std::span<const Grid2D* const> images,
                                                    std::size_t steps, Rng& rng,
                                                    std::size_t blank = kDefaultBlankSteps, std::size_t chunk = 8) {
  std::vector<std::vector<double>> out;
  out.reserve(images.size());
  QuantState state(qn);
  for (std::size_t begin = 0; begin < images.size(); begin += chunk) {
    const std::size_t end = std::min(images.size(), begin + chunk);
    const SpikeTrainBatch spikes = encode_batch(images.subspan(begin, end - begin), steps, rng);
    for (const auto& c : quant_forward(qn, spikes, steps, blank, state)) {
      std::vector<double> r(c.size());
      for (std::size_t j = 0; j < c.size(); ++j) r[j] = static_cast<double>(c[j]) / static_cast<double>(steps);
      out.push_back(std::move(r));
    }
  }
  return out;
}

inline ThresholdReport evaluate_quantized(const QuantizedNetwork& qn, std::span<const Sample> samples,
                                          std::size_t steps, Rng& rng, std::size_t blank = kDefaultBlankSteps,
                                          std::vector<Prediction>* preds_out = nullptr) {
  std::vector<const Grid2D*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s.input);
  const auto rates = quant_rates(qn, ptrs, steps, rng, blank);
  std::vector<Prediction> preds;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label.size() != rates[i].size())
      throw std::invalid_argument("evaluate_quantized: label size does not match network outputs");
    preds.push_back({{samples[i].label.values().begin(), samples[i].label.values().end()}, rates[i], samples[i].id});
  }
  ThresholdReport rep = evaluate(preds, steps);
  if (preds_out) *preds_out = std::move(preds);
  return rep;
}

// ---------------------------------------------------------------------------
// Container:
//
//   LANESNN-QNT-1
//   name <arch>
//   input <channels> <rows> <cols>
//   k <real>
//   vth_mant <int>
//   delta_v <int>
//   delta_i <int>
//   bias <int>
//   wgt_exp <int>
//   source <v_th> <tau>
//   layers <count>
//   <layer lines as in the float checkpoint>
//   mantissas
//   <binary: each weighted layer's mantissas in storage order, one signed byte each>

inline constexpr std::string_view kQuantMagic = "LANESNN-QNT-1";

inline void save_qnt(std::ostream& out, const QuantizedNetwork& qn) {
  out << kQuantMagic << '\n';
  out << "name " << qn.name << '\n';
  out << "input " << qn.input.channels << ' ' << qn.input.rows << ' ' << qn.input.cols << '\n';
  out << "k " << detail::fmt_real(qn.q.k) << '\n';
  out << "vth_mant " << qn.q.vth_mant << '\n';
  out << "delta_v " << qn.q.delta_v << '\n';
  out << "delta_i " << qn.q.delta_i << '\n';
  out << "bias " << qn.q.bias << '\n';
  out << "wgt_exp " << qn.q.wgt_exp << '\n';
  out << "source " << detail::fmt_real(qn.v_th) << ' ' << detail::fmt_real(qn.tau) << '\n';
  out << "layers " << qn.layers.size() << '\n';
  for (const auto& l : qn.layers) out << detail::layer_line(l) << '\n';
  out << "mantissas\n";
  for (const auto& m : qn.mant)
    for (Eigen::Index j = 0; j < m.size(); ++j) out.put(static_cast<char>(static_cast<std::int8_t>(m.data()[j])));
}

inline void save_qnt(const std::filesystem::path& path, const QuantizedNetwork& qn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  save_qnt(out, qn);
  if (!out) throw DataError("write failed: " + path.string());
}

namespace detail {

inline std::int32_t parse_int_field(std::istream& in, std::string_view key) {
  std::istringstream is(expect_line(in, std::string(key) + " "));
  std::int32_t v = 0;
  if (!(is >> v)) throw ParseError(std::string(key), "malformed integer");
  return v;
}

}  // namespace detail

inline QuantizedNetwork load_qnt(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != kQuantMagic)
    throw ParseError("magic", "not a " + std::string(kQuantMagic) + " file");
  QuantizedNetwork qn;
  qn.name = detail::expect_line(in, "name ");
  {
    std::istringstream is(detail::expect_line(in, "input "));
    if (!(is >> qn.input.channels >> qn.input.rows >> qn.input.cols)) throw ParseError("input", "malformed");
  }
  {
    std::istringstream is(detail::expect_line(in, "k "));
    if (!(is >> qn.q.k) || !(qn.q.k > 0.0)) throw ParseError("k", "malformed");
  }
  qn.q.vth_mant = detail::parse_int_field(in, "vth_mant");
  qn.q.delta_v = detail::parse_int_field(in, "delta_v");
  qn.q.delta_i = detail::parse_int_field(in, "delta_i");
  qn.q.bias = detail::parse_int_field(in, "bias");
  qn.q.wgt_exp = detail::parse_int_field(in, "wgt_exp");
  if (qn.q.vth_mant < 0 || qn.q.vth_mant > kVthMantMax) throw ParseError("vth_mant", "outside 12-bit range");
  if (qn.q.delta_v < 0 || qn.q.delta_v > kDecayUnit) throw ParseError("delta_v", "outside 12-bit range");
  {
    std::istringstream is(detail::expect_line(in, "source "));
    if (!(is >> qn.v_th >> qn.tau)) throw ParseError("source", "malformed");
  }
  std::size_t count = 0;
  {
    std::istringstream is(detail::expect_line(in, "layers "));
    if (!(is >> count) || count == 0) throw ParseError("layers", "malformed count");
  }
  for (std::size_t i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("layers", "expected " + std::to_string(count) + " layer lines");
    qn.layers.push_back(detail::parse_layer_line(line));
  }
  detail::expect_line(in, "mantissas");
  // Shapes come from the float topology.
  const Network shape_net = [&] {
    try {
      return Network(qn.name, qn.input, qn.layers, LifParams{});
    } catch (const std::invalid_argument& e) {
      throw ParseError("layers", e.what());
    }
  }();
  qn.mant.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    qn.shapes.push_back(shape_net.output_shape(i));
    if (!qn.layers[i].has_weights()) continue;
    const Matrix& w = shape_net.params()[i].weights;
    IntMatrix m(w.rows(), w.cols());
    for (Eigen::Index j = 0; j < m.size(); ++j) {
      const int ch = in.get();
      if (ch == std::char_traits<char>::eof()) throw ParseError("mantissas", "truncated mantissa block");
      m.data()[j] = static_cast<std::int8_t>(static_cast<unsigned char>(ch));
    }
    qn.mant[i] = std::move(m);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("mantissas", "trailing bytes after mantissa block");
  return qn;
}

inline QuantizedNetwork load_qnt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open quantized network: " + path.string());
  return load_qnt(in);
}

inline void write_quant_report_csv(const std::filesystem::path& path, std::span<const LayerQuantStats> stats) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "layer,kind,max_abs_w,weights,saturated,mean_abs_round_err,max_abs_round_err\n";
  for (const auto& s : stats)
    out << s.layer << ',' << s.kind << ',' << fmt_g6(s.max_abs_w) << ',' << s.weights << ',' << s.saturated << ','
        << fmt_g6(s.mean_abs_round_err) << ',' << fmt_g6(s.max_abs_round_err) << '\n';
}

}  // namespace lanesnn
