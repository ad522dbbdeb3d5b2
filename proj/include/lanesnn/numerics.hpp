#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lanesnn {

// Dense row-major grid of doubles. Index (r, c) lives at data[r * cols + c].
class Grid2D {
 public:
  Grid2D(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    check_dims();
  }

  Grid2D(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    check_dims();
    if (data_.size() != rows_ * cols_)
      throw std::invalid_argument("Grid2D: data length " + std::to_string(data_.size()) +
                                  " != rows*cols " + std::to_string(rows_ * cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  double at(std::size_t r, std::size_t c) const {
    if (r >= rows_ || c >= cols_) throw std::out_of_range("Grid2D::at");
    return data_[r * cols_ + c];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double sum() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }
  double mean() const noexcept { return sum() / static_cast<double>(data_.size()); }

  bool same_shape(const Grid2D& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  void check_dims() const {
    if (rows_ == 0 || cols_ == 0) throw std::invalid_argument("Grid2D: rows and cols must be >= 1");
  }

  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded 64-bit Mersenne Twister. Uniform and normal deviates are derived
// here rather than through <random> distributions, whose output is
// implementation-defined, so a seed fixes every draw on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  double uniform_real(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; the second deviate of each pair is cached.
  double gaussian(double mean, double stddev) {
    if (!(stddev >= 0.0)) throw std::invalid_argument("gaussian: negative std");
    if (stddev == 0.0) return mean;
    return mean + stddev * standard_normal();
  }

  double standard_normal() {
    if (spare_) {
      const double z = *spare_;
      spare_.reset();
      return z;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    return r * std::cos(a);
  }

  // Independent stream derived from the construction seed only; does not
  // depend on or advance this generator's state.
  Rng child(std::uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
  }

  // Independent stream seeded from the next draw; advances this generator.
  Rng split() { return Rng(splitmix64(next_u64())); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

inline double uniform(Rng& rng) { return rng.uniform(); }
inline double gaussian(Rng& rng, double mean, double stddev) { return rng.gaussian(mean, stddev); }

}  // namespace lanesnn
