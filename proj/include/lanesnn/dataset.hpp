#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lanesnn/error.hpp"
#include "lanesnn/numerics.hpp"

namespace lanesnn {

namespace fs = std::filesystem;

// Input intensities in [0, 1]; label values exactly 0 or 1.
struct Sample {
  Grid2D input;
  Grid2D label;
  std::string id;
};

struct SyntheticConfig {
  std::size_t width = 1280;
  std::size_t height = 800;
  double flip_prob = 0.02;
  double jitter_std = 0.05;
  std::size_t min_lanes = 2;
  std::size_t max_lanes = 4;
  std::size_t min_stroke = 3;
  std::size_t max_stroke = 9;
};

namespace detail {

struct LaneSegment {
  double x_top, y_top, x_bottom, y_bottom;
  double half_width;
  double intensity;
};

inline void render_lane(Grid2D& clean, Grid2D& label, const LaneSegment& lane) {
  const double dy = lane.y_bottom - lane.y_top;
  const double slope = (lane.x_bottom - lane.x_top) / dy;
  // Horizontal half-extent of a stroke of given perpendicular half-width.
  const double half_span = lane.half_width * std::sqrt(1.0 + slope * slope);
  const auto width = static_cast<double>(clean.cols());
  const auto row_begin = static_cast<std::size_t>(std::max(0.0, std::ceil(lane.y_top)));
  const auto row_end = std::min(clean.rows(), static_cast<std::size_t>(std::floor(lane.y_bottom)) + 1);
  for (std::size_t r = row_begin; r < row_end; ++r) {
    const double xc = lane.x_top + slope * (static_cast<double>(r) - lane.y_top);
    const double lo = std::max(0.0, std::ceil(xc - half_span));
    const double hi = std::min(width - 1.0, std::floor(xc + half_span));
    for (double x = lo; x <= hi; x += 1.0) {
      const auto c = static_cast<std::size_t>(x);
      clean(r, c) = std::max(clean(r, c), lane.intensity);
      label(r, c) = 1.0;
    }
  }
}

}  // namespace detail

// One synthetic frame: 2-4 straight lanes converging on a vanishing point in
// the upper third, drawn bright on a dark background. Noise touches the input
// only; the label is the clean stroke mask.
inline Sample generate_synthetic_sample(Rng& rng, const SyntheticConfig& cfg, std::string id) {
  if (cfg.width == 0 || cfg.height == 0) throw std::invalid_argument("generate_synthetic: empty image");
  const auto w = static_cast<double>(cfg.width);
  const auto h = static_cast<double>(cfg.height);
  Grid2D clean(cfg.height, cfg.width, 0.0);
  Grid2D label(cfg.height, cfg.width, 0.0);

  const double vp_x = rng.uniform_real(0.3 * w, 0.7 * w);
  const double vp_y = rng.uniform_real(0.1 * h, h / 3.0);
  const auto n_lanes = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.min_lanes), static_cast<std::int64_t>(cfg.max_lanes)));

  // Bottom intercepts are spread over a band wider than the image so that
  // outer lanes leave through the side edges, as in a forward-facing view.
  const double band_lo = -0.6 * w;
  const double band_hi = 1.6 * w;
  const double slot = (band_hi - band_lo) / static_cast<double>(n_lanes);
  for (std::size_t i = 0; i < n_lanes; ++i) {
    detail::LaneSegment lane{};
    lane.x_top = vp_x;
    lane.y_top = vp_y;
    lane.x_bottom = band_lo + slot * (static_cast<double>(i) + rng.uniform_real(0.2, 0.8));
    lane.y_bottom = h - 1.0;
    const auto stroke = rng.uniform_int(static_cast<std::int64_t>(cfg.min_stroke),
                                        static_cast<std::int64_t>(cfg.max_stroke));
    lane.half_width = 0.5 * static_cast<double>(stroke);
    lane.intensity = rng.uniform_real(0.85, 1.0);
    detail::render_lane(clean, label, lane);
  }

  Grid2D input = clean;
  for (double& v : input.values()) {
    if (rng.uniform() < cfg.flip_prob) v = 1.0 - v;
    v = std::clamp(v + rng.gaussian(0.0, cfg.jitter_std), 0.0, 1.0);
  }
  return Sample{std::move(input), std::move(label), std::move(id)};
}

inline std::string synthetic_id(std::size_t index) {
  std::ostringstream os;
  os.width(5);
  os.fill('0');
  os << index;
  return os.str();
}

// Per-sample seeds drawn in order from `rng`. Sample i of
// generate_synthetic(rng, n) is generate_synthetic_sample(Rng(seeds[i])).
inline std::vector<std::uint64_t> synthetic_seeds(Rng& rng, std::size_t n) {
  std::vector<std::uint64_t> seeds(n);
  for (auto& s : seeds) s = rng.next_u64();
  return seeds;
}

inline std::vector<Sample> generate_synthetic(Rng& rng, std::size_t n, std::size_t width = 1280,
                                              std::size_t height = 800, SyntheticConfig cfg = {}) {
  if (n == 0) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  cfg.width = width;
  cfg.height = height;
  std::vector<Sample> out;
  out.reserve(n);
  const auto seeds = synthetic_seeds(rng, n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng sample_rng(seeds[i]);
    out.push_back(generate_synthetic_sample(sample_rng, cfg, synthetic_id(i)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary PGM (P5, maxval 255)

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void save_pgm(const fs::path& path, const Grid2D& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<char> bytes(img.size());
  const auto vals = img.values();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(to_byte(vals[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

namespace detail {

inline void skip_pgm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string comment;
      std::getline(in, comment);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline std::size_t read_pgm_number(std::istream& in, const std::string& field) {
  skip_pgm_space(in);
  std::string token;
  while (std::isdigit(in.peek())) token.push_back(static_cast<char>(in.get()));
  if (token.empty()) throw ParseError(field, "expected a decimal number");
  return std::stoul(token);
}

}  // namespace detail

// Raw 8-bit values, row-major.
inline std::vector<std::uint8_t> load_pgm_bytes(const fs::path& path, std::size_t& rows, std::size_t& cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '5') throw ParseError("magic", "not a binary PGM (P5): " + path.string());
  cols = detail::read_pgm_number(in, "width");
  rows = detail::read_pgm_number(in, "height");
  const std::size_t maxval = detail::read_pgm_number(in, "maxval");
  if (cols == 0) throw ParseError("width", "zero");
  if (rows == 0) throw ParseError("height", "zero");
  if (maxval != 255) throw ParseError("maxval", "only 255 is supported, got " + std::to_string(maxval));
  const int sep = in.get();
  if (sep != ' ' && sep != '\n' && sep != '\t' && sep != '\r') throw ParseError("maxval", "missing separator");
  std::vector<std::uint8_t> bytes(rows * cols);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size())
    throw ParseError("pixel data", "truncated: expected " + std::to_string(bytes.size()) + " bytes, got " +
                                       std::to_string(in.gcount()));
  return bytes;
}

// Intensities as value / 255.
inline Grid2D load_pgm(const fs::path& path) {
  std::size_t rows = 0, cols = 0;
  const auto bytes = load_pgm_bytes(path, rows, cols);
  std::vector<double> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
  return Grid2D(rows, cols, std::move(data));
}

// Any nonzero byte is a lane pixel.
inline Grid2D load_label_pgm(const fs::path& path) {
  std::size_t rows = 0, cols = 0;
  const auto bytes = load_pgm_bytes(path, rows, cols);
  std::vector<double> data(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] > 0 ? 1.0 : 0.0;
  return Grid2D(rows, cols, std::move(data));
}

inline void save_sample(const Sample& s, const fs::path& input_path, const fs::path& label_path) {
  save_pgm(input_path, s.input);
  save_pgm(label_path, s.label);
}

inline Sample load_sample(const fs::path& input_path, const fs::path& label_path, std::string id) {
  return Sample{load_pgm(input_path), load_label_pgm(label_path), std::move(id)};
}

// ---------------------------------------------------------------------------
// Manifests: one `input<TAB>label<TAB>id` line per sample. Relative paths are
// resolved against the manifest's directory.

struct ManifestEntry {
  fs::path input;
  fs::path label;
  std::string id;
};

struct DatasetManifest {
  std::string split = "train";
  std::vector<ManifestEntry> entries;
};

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const fs::path base = path.parent_path();
  for (const auto& e : m.entries) {
    auto rel = [&](const fs::path& p) {
      return p.is_relative() ? p.generic_string() : p.lexically_relative(base).generic_string();
    };
    out << rel(e.input) << '\t' << rel(e.label) << '\t' << e.id << '\n';
  }
}

inline DatasetManifest read_manifest(const fs::path& path, std::string split = "train") {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  DatasetManifest m;
  m.split = std::move(split);
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  const fs::path base = path.parent_path();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw ParseError("manifest line " + std::to_string(line_no), "expected 3 tab-separated fields");
    ManifestEntry e{base / fields[0], base / fields[1], fields[2]};
    if (!fs::exists(e.input)) throw DataError("manifest references missing file: " + e.input.string());
    if (!fs::exists(e.label)) throw DataError("manifest references missing file: " + e.label.string());
    if (!ids.insert(e.id).second) throw DataError("duplicate id in manifest: " + e.id);
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline std::vector<Sample> load_manifest_samples(const DatasetManifest& m) {
  std::vector<Sample> out;
  out.reserve(m.entries.size());
  for (const auto& e : m.entries) out.push_back(load_sample(e.input, e.label, e.id));
  return out;
}

struct DetLayout {
  DatasetManifest manifest;
  std::vector<std::string> warnings;
};

// Pairs root/input/<stem>.* with root/label/<stem>.* by filename stem.
inline DetLayout load_det_layout(const fs::path& root, std::string split = "train") {
  if (!fs::is_directory(root)) throw DataError("dataset root does not exist: " + root.string());
  auto list_dir = [](const fs::path& dir) {
    std::map<std::string, fs::path> by_stem;
    if (!fs::is_directory(dir)) return by_stem;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) by_stem[entry.path().stem().string()] = entry.path();
    return by_stem;
  };
  const auto inputs = list_dir(root / "input");
  const auto labels = list_dir(root / "label");
  DetLayout out;
  out.manifest.split = std::move(split);
  for (const auto& [stem, path] : inputs) {
    const auto it = labels.find(stem);
    if (it == labels.end()) {
      out.warnings.push_back("input without label: " + path.string());
      continue;
    }
    out.manifest.entries.push_back({path, it->second, stem});
  }
  for (const auto& [stem, path] : labels)
    if (!inputs.contains(stem)) out.warnings.push_back("label without input: " + path.string());
  if (out.manifest.entries.empty()) throw DataError("empty manifest: no input/label pairs under " + root.string());
  return out;
}

}  // namespace lanesnn
