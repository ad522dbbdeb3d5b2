#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "lanesnn/error.hpp"
#include "lanesnn/snn.hpp"

namespace lanesnn {

// Checkpoint container:
//
//   LANESNN-CKPT-1
//   name <arch>
//   input <channels> <rows> <cols>
//   lif <v_th> <v_reset> <tau>
//   layers <count>
//   conv2d <in_ch> <out_ch> <kernel> <padding> <stride> | dense <in> <units> |
//   dropout <p> | noise <sigma>          (one line per layer)
//   weights
//   <binary: for each weighted layer, weights in storage order then bias,
//    as little-endian IEEE-754 binary64>
//
// Reals in the text section are written with 17 significant digits so they
// round-trip exactly.

inline constexpr std::string_view kCheckpointMagic = "LANESNN-CKPT-1";

namespace detail {

inline void put_f64_le(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

inline double get_f64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw ParseError("weights", "truncated weight block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string fmt_real(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string layer_line(const LayerSpec& l) {
  std::ostringstream os;
  os << to_string(l.kind);
  switch (l.kind) {
    case LayerKind::conv2d:
      os << ' ' << l.in_channels << ' ' << l.out_channels << ' ' << l.kernel << ' ' << l.padding << ' ' << l.stride;
      break;
    case LayerKind::dense: os << ' ' << l.in_units << ' ' << l.units; break;
    case LayerKind::dropout: os << ' ' << fmt_real(l.drop_prob); break;
    case LayerKind::noise: os << ' ' << fmt_real(l.sigma_r); break;
  }
  return os.str();
}

inline LayerSpec parse_layer_line(const std::string& line) {
  std::istringstream is(line);
  std::string kind;
  is >> kind;
  LayerSpec l;
  if (kind == "conv2d") {
    std::size_t in, out, k, p, s;
    is >> in >> out >> k >> p >> s;
    l = LayerSpec::conv2d(in, out, k, p, s);
  } else if (kind == "dense") {
    std::size_t in, units;
    is >> in >> units;
    l = LayerSpec::dense(in, units);
  } else if (kind == "dropout") {
    double p;
    is >> p;
    l = LayerSpec::dropout(p);
  } else if (kind == "noise") {
    double s;
    is >> s;
    l = LayerSpec::noise(s);
  } else {
    throw ParseError("layers", "unknown layer kind '" + kind + "'");
  }
  if (!is) throw ParseError("layers", "malformed layer line '" + line + "'");
  return l;
}

inline std::string expect_line(std::istream& in, std::string_view key) {
  std::string line;
  const std::string field(key.substr(0, key.find_last_not_of(' ') + 1));
  if (!std::getline(in, line)) throw ParseError(field, "missing");
  if (line.rfind(key, 0) != 0) throw ParseError(field, "expected '" + field + "', got '" + line + "'");
  return line.substr(key.size());
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Network& net) {
  out << kCheckpointMagic << '\n';
  out << "name " << net.name() << '\n';
  out << "input " << net.input_shape().channels << ' ' << net.input_shape().rows << ' ' << net.input_shape().cols
      << '\n';
  out << "lif " << detail::fmt_real(net.lif().v_th) << ' ' << detail::fmt_real(net.lif().v_reset) << ' '
      << detail::fmt_real(net.lif().tau) << '\n';
  out << "layers " << net.layers().size() << '\n';
  for (const auto& l : net.layers()) out << detail::layer_line(l) << '\n';
  out << "weights\n";
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layers()[i].has_weights()) continue;
    const LayerParams& p = net.params()[i];
    for (Eigen::Index k = 0; k < p.weights.size(); ++k) detail::put_f64_le(out, p.weights.data()[k]);
    for (Eigen::Index k = 0; k < p.bias.size(); ++k) detail::put_f64_le(out, p.bias[k]);
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Network& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  save_checkpoint(out, net);
  if (!out) throw DataError("write failed: " + path.string());
}

inline Network load_checkpoint(std::istream& in) {
  std::string magic;
  if (!std::getline(in, magic) || magic != kCheckpointMagic)
    throw ParseError("magic", "not a " + std::string(kCheckpointMagic) + " file");
  const std::string name = detail::expect_line(in, "name ");
  Shape3 input;
  {
    std::istringstream is(detail::expect_line(in, "input "));
    if (!(is >> input.channels >> input.rows >> input.cols)) throw ParseError("input", "malformed");
  }
  LifParams lif;
  {
    std::istringstream is(detail::expect_line(in, "lif "));
    if (!(is >> lif.v_th >> lif.v_reset >> lif.tau)) throw ParseError("lif", "malformed");
  }
  std::size_t count = 0;
  {
    std::istringstream is(detail::expect_line(in, "layers "));
    if (!(is >> count) || count == 0) throw ParseError("layers", "malformed count");
  }
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("layers", "expected " + std::to_string(count) + " layer lines");
    layers.push_back(detail::parse_layer_line(line));
  }
  detail::expect_line(in, "weights");
  Network net = [&] {
    try {
      return Network(name, input, layers, lif);
    } catch (const std::invalid_argument& e) {
      throw ParseError("layers", e.what());
    }
  }();
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (!net.layers()[i].has_weights()) continue;
    LayerParams& p = net.params()[i];
    for (Eigen::Index k = 0; k < p.weights.size(); ++k) p.weights.data()[k] = detail::get_f64_le(in);
    for (Eigen::Index k = 0; k < p.bias.size(); ++k) p.bias[k] = detail::get_f64_le(in);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError("weights", "trailing bytes after weight block");
  return net;
}

inline Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  return load_checkpoint(in);
}

}  // namespace lanesnn
