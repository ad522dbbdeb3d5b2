#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "lanesnn/dataset.hpp"
#include "lanesnn/numerics.hpp"

namespace lanesnn {

struct PreprocessConfig {
  std::size_t crop_top = 300;
  std::size_t crop_bottom = 200;
  std::size_t input_rows = 20;
  std::size_t input_cols = 80;
  std::size_t label_rows = 10;
  std::size_t label_cols = 40;
  double denorm_value = 400.0;
  std::size_t augment_count = 271;
  std::int64_t max_translate = 100;
  double max_rotate_deg = 30.0;
};

// Vertical shift in rows (positive moves content down) and rotation in
// degrees about the image center (positive is counter-clockwise on screen).
struct AugmentParams {
  std::int64_t shift_rows = 0;
  double angle_deg = 0.0;
};

// Applies the same rotation-then-shift to input (bilinear) and label
// (nearest). Source positions outside the frame read as 0.
inline Sample apply_transform(const Sample& s, AugmentParams p) {
  if (!s.input.same_shape(s.label)) throw std::invalid_argument("apply_transform: input/label shape mismatch");
  const std::size_t rows = s.input.rows();
  const std::size_t cols = s.input.cols();
  Grid2D input(rows, cols, 0.0);
  Grid2D label(rows, cols, 0.0);
  const double theta = p.angle_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cx = 0.5 * static_cast<double>(cols - 1);
  const double cy = 0.5 * static_cast<double>(rows - 1);
  const double max_x = static_cast<double>(cols - 1);
  const double max_y = static_cast<double>(rows - 1);

  for (std::size_t r = 0; r < rows; ++r) {
    // Undo the shift, then rotate back by -theta about the center.
    const double qy = static_cast<double>(r) - static_cast<double>(p.shift_rows) - cy;
    for (std::size_t c = 0; c < cols; ++c) {
      const double qx = static_cast<double>(c) - cx;
      const double sx = cos_t * qx + sin_t * qy + cx;
      const double sy = -sin_t * qx + cos_t * qy + cy;
      if (sx < -0.5 || sy < -0.5 || sx > max_x + 0.5 || sy > max_y + 0.5) continue;

      const auto nx = static_cast<std::size_t>(std::clamp(std::lround(sx), 0L, static_cast<long>(cols - 1)));
      const auto ny = static_cast<std::size_t>(std::clamp(std::lround(sy), 0L, static_cast<long>(rows - 1)));
      label(r, c) = s.label(ny, nx);

      if (sx < 0.0 || sy < 0.0 || sx > max_x || sy > max_y) continue;
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto y0 = static_cast<std::size_t>(std::floor(sy));
      const std::size_t x1 = std::min(x0 + 1, cols - 1);
      const std::size_t y1 = std::min(y0 + 1, rows - 1);
      const double fx = sx - static_cast<double>(x0);
      const double fy = sy - static_cast<double>(y0);
      const double top = s.input(y0, x0) * (1.0 - fx) + s.input(y0, x1) * fx;
      const double bottom = s.input(y1, x0) * (1.0 - fx) + s.input(y1, x1) * fx;
      input(r, c) = top * (1.0 - fy) + bottom * fy;
    }
  }
  return Sample{std::move(input), std::move(label), s.id};
}

inline AugmentParams draw_augment_params(Rng& rng, const PreprocessConfig& cfg) {
  AugmentParams p;
  p.shift_rows = rng.uniform_int(-cfg.max_translate, cfg.max_translate);
  p.angle_deg = rng.uniform_real(-cfg.max_rotate_deg, cfg.max_rotate_deg);
  return p;
}

inline Sample augment(const Sample& s, Rng& rng, const PreprocessConfig& cfg) {
  return apply_transform(s, draw_augment_params(rng, cfg));
}

// Rows [top, rows - bottom).
inline Grid2D crop_vertical(const Grid2D& img, std::size_t top, std::size_t bottom) {
  if (top + bottom >= img.rows())
    throw std::invalid_argument("crop_vertical: crop " + std::to_string(top) + "+" + std::to_string(bottom) +
                                " leaves no rows of " + std::to_string(img.rows()));
  const std::size_t rows = img.rows() - top - bottom;
  std::vector<double> data(img.values().begin() + static_cast<std::ptrdiff_t>(top * img.cols()),
                           img.values().begin() + static_cast<std::ptrdiff_t>((top + rows) * img.cols()));
  return Grid2D(rows, img.cols(), std::move(data));
}

// Area interpolation for integer reduction ratios: each output pixel is the
// mean of its source block, summed in row-major order.
inline Grid2D area_resize(const Grid2D& img, std::size_t out_rows, std::size_t out_cols) {
  if (out_rows == 0 || out_cols == 0 || img.rows() % out_rows != 0 || img.cols() % out_cols != 0)
    throw std::invalid_argument("area_resize: " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                                " -> " + std::to_string(out_rows) + "x" + std::to_string(out_cols) +
                                " is not an integer block reduction");
  const std::size_t bh = img.rows() / out_rows;
  const std::size_t bw = img.cols() / out_cols;
  const auto area = static_cast<double>(bh * bw);
  Grid2D out(out_rows, out_cols, 0.0);
  for (std::size_t orow = 0; orow < out_rows; ++orow)
    for (std::size_t ocol = 0; ocol < out_cols; ++ocol) {
      double sum = 0.0;
      for (std::size_t r = orow * bh; r < (orow + 1) * bh; ++r)
        for (std::size_t c = ocol * bw; c < (ocol + 1) * bw; ++c) sum += img(r, c);
      out(orow, ocol) = sum / area;
    }
  return out;
}

// Denormalize lane pixels, block-average, then mark every nonzero block as
// lane. A single lane pixel in a block is enough to survive.
inline Grid2D process_label(const Grid2D& cropped, const PreprocessConfig& cfg) {
  Grid2D scaled = cropped;
  for (double& v : scaled.values()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("process_label: label is not binary");
    v *= cfg.denorm_value;
  }
  Grid2D out = area_resize(scaled, cfg.label_rows, cfg.label_cols);
  for (double& v : out.values()) v = v > 0.0 ? 1.0 : 0.0;
  return out;
}

// Crop + resize of one raw sample.
inline Sample process_sample(const Sample& raw, const PreprocessConfig& cfg) {
  Grid2D input = area_resize(crop_vertical(raw.input, cfg.crop_top, cfg.crop_bottom), cfg.input_rows, cfg.input_cols);
  Grid2D label = process_label(crop_vertical(raw.label, cfg.crop_top, cfg.crop_bottom), cfg);
  return Sample{std::move(input), std::move(label), raw.id};
}

// `load(i)` yields raw sample i of `n`; raw frames are fetched on demand so a
// full-resolution split never has to be resident at once. Training splits
// append `augment_count` augmented copies of uniformly drawn samples (with
// replacement) after the originals.
template <class Loader>
std::vector<Sample> process_split(std::size_t n, Loader&& load, Rng& rng, const PreprocessConfig& cfg, bool is_train) {
  std::vector<Sample> out;
  out.reserve(n + (is_train ? cfg.augment_count : 0));
  for (std::size_t i = 0; i < n; ++i) out.push_back(process_sample(load(i), cfg));
  if (!is_train || n == 0) return out;
  for (std::size_t k = 0; k < cfg.augment_count; ++k) {
    const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
    const AugmentParams params = draw_augment_params(rng, cfg);
    Sample aug = apply_transform(load(idx), params);
    aug.id += "_aug" + synthetic_id(k);
    out.push_back(process_sample(aug, cfg));
  }
  return out;
}

inline std::vector<Sample> process_split(const std::vector<Sample>& raw, Rng& rng, const PreprocessConfig& cfg,
                                         bool is_train) {
  return process_split(raw.size(), [&](std::size_t i) -> const Sample& { return raw[i]; }, rng, cfg, is_train);
}

}  // namespace lanesnn
