#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lanesnn/numerics.hpp"

namespace lanesnn {

// Binary spikes indexed (sample, channel, row, col, step), packed one bit per
// element with the step index fastest.
class SpikeTrainBatch {
 public:
  SpikeTrainBatch(std::size_t batch, std::size_t channels, std::size_t rows, std::size_t cols, std::size_t steps)
      : batch_(batch), channels_(channels), rows_(rows), cols_(cols), steps_(steps),
        words_((batch * channels * rows * cols * steps + 63) / 64, 0) {
    if (batch == 0 || channels == 0 || rows == 0 || cols == 0 || steps == 0)
      throw std::invalid_argument("SpikeTrainBatch: all dimensions must be >= 1");
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t steps() const noexcept { return steps_; }
  std::size_t pixels_per_sample() const noexcept { return channels_ * rows_ * cols_; }

  bool get(std::size_t b, std::size_t c, std::size_t r, std::size_t col, std::size_t t) const noexcept {
    const std::size_t i = index(b, c, r, col, t);
    return (words_[i >> 6] >> (i & 63)) & 1U;
  }

  void set(std::size_t b, std::size_t c, std::size_t r, std::size_t col, std::size_t t, bool v) noexcept {
    const std::size_t i = index(b, c, r, col, t);
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (v)
      words_[i >> 6] |= bit;
    else
      words_[i >> 6] &= ~bit;
  }

  // Flat pixel index p = (c * rows + r) * cols + col.
  bool get_flat(std::size_t b, std::size_t p, std::size_t t) const noexcept {
    const std::size_t i = (b * pixels_per_sample() + p) * steps_ + t;
    return (words_[i >> 6] >> (i & 63)) & 1U;
  }

  std::size_t spike_count(std::size_t b, std::size_t c, std::size_t r, std::size_t col) const noexcept {
    std::size_t n = 0;
    for (std::size_t t = 0; t < steps_; ++t) n += get(b, c, r, col, t);
    return n;
  }

  friend bool operator==(const SpikeTrainBatch&, const SpikeTrainBatch&) = default;

 private:
  std::size_t index(std::size_t b, std::size_t c, std::size_t r, std::size_t col, std::size_t t) const noexcept {
    return ((((b * channels_ + c) * rows_ + r) * cols_ + col) * steps_) + t;
  }

  std::size_t batch_, channels_, rows_, cols_, steps_;
  std::vector<std::uint64_t> words_;
};

namespace detail {

inline void check_intensities(const Grid2D& img) {
  for (double v : img.values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("rate_encode: intensity outside [0,1]");
}

inline void encode_into(SpikeTrainBatch& out, std::size_t b, const Grid2D& img, Rng& rng) {
  const std::size_t T = out.steps();
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const double p = img(r, c);
      for (std::size_t t = 0; t < T; ++t) out.set(b, 0, r, c, t, rng.uniform() < p);
    }
}

}  // namespace detail

// Bernoulli rate coding: at every step a pixel spikes iff a fresh uniform
// draw falls below its intensity. Draws run pixel-major, step-minor.
inline SpikeTrainBatch rate_encode(const Grid2D& img, std::size_t steps, Rng& rng) {
  if (steps == 0) throw std::invalid_argument("rate_encode: T must be >= 1");
  detail::check_intensities(img);
  SpikeTrainBatch out(1, 1, img.rows(), img.cols(), steps);
  detail::encode_into(out, 0, img, rng);
  return out;
}

// Each image is encoded from its own stream split off `rng` in order, so
// re-encoding with an advanced `rng` (a new epoch) yields fresh spikes.
inline SpikeTrainBatch encode_batch(std::span<const Grid2D* const> images, std::size_t steps, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("encode_batch: empty batch");
  if (steps == 0) throw std::invalid_argument("encode_batch: T must be >= 1");
  const std::size_t rows = images.front()->rows();
  const std::size_t cols = images.front()->cols();
  for (const Grid2D* img : images) {
    if (img->rows() != rows || img->cols() != cols)
      throw std::invalid_argument("encode_batch: inconsistent image dimensions");
    detail::check_intensities(*img);
  }
  SpikeTrainBatch out(images.size(), 1, rows, cols, steps);
  for (std::size_t b = 0; b < images.size(); ++b) {
    Rng sample_rng = rng.split();
    detail::encode_into(out, b, *images[b], sample_rng);
  }
  return out;
}

inline SpikeTrainBatch encode_batch(std::span<const Grid2D> images, std::size_t steps, Rng& rng) {
  std::vector<const Grid2D*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  return encode_batch(std::span<const Grid2D* const>(ptrs), steps, rng);
}

}  // namespace lanesnn
