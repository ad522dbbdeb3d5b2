#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lanesnn/error.hpp"

namespace lanesnn {

struct PixelConfusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  // 0 when the denominator is empty.
  double precision() const noexcept { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const noexcept { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }

  PixelConfusion& operator+=(const PixelConfusion& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const PixelConfusion&, const PixelConfusion&) = default;
};

// A pixel is predicted lane iff its rate is strictly above `th`.
inline PixelConfusion confusion(std::span<const double> y, std::span<const double> y_hat, double th) {
  if (y.size() != y_hat.size()) throw std::invalid_argument("confusion: label/prediction size mismatch");
  PixelConfusion c;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool truth = y[i] > 0.5;
    const bool pred = y_hat[i] > th;
    if (truth && pred) ++c.tp;
    else if (!truth && pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

inline double f_measure(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

// Decision boundaries that separate rates in {0, 1/T, ..., 1}: (i - 0.5)/T
// for i = 0..T, plus 1.0 (nothing predicted). Ascending.
inline std::vector<double> candidate_thresholds(std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("candidate_thresholds: T must be >= 1");
  std::vector<double> th;
  th.reserve(steps + 2);
  for (std::size_t i = 0; i <= steps; ++i) th.push_back((static_cast<double>(i) - 0.5) / static_cast<double>(steps));
  th.push_back(1.0);
  return th;
}

struct ThresholdChoice {
  double threshold = 0.0;
  double f = 0.0;
};

// Maximum F-measure over all candidate thresholds; ties go to the smallest.
inline ThresholdChoice best_threshold(std::span<const double> y, std::span<const double> y_hat, std::size_t steps) {
  ThresholdChoice best{-1.0, -1.0};
  for (double th : candidate_thresholds(steps)) {
    const PixelConfusion c = confusion(y, y_hat, th);
    const double f = f_measure(c.precision(), c.recall());
    if (f > best.f) best = {th, f};
  }
  return best;
}

// |pred AND true| / |pred OR true|; 1 when both masks are empty.
inline double iou(std::span<const double> y, std::span<const double> y_hat, double th) {
  const PixelConfusion c = confusion(y, y_hat, th);
  const std::size_t uni = c.tp + c.fp + c.fn;
  return uni == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(uni);
}

struct Prediction {
  std::vector<double> label;
  std::vector<double> rates;
  std::string id;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
};

struct ThresholdReport {
  std::vector<std::string> ids;
  std::vector<double> per_image_best_th;
  double mean_best_th = 0.0;
  std::vector<double> per_image_iou;
  double mean_iou = 0.0;
  std::vector<PrPoint> pr_curve;  // pooled over all images
};

// Per-image best thresholds are averaged into one shared threshold, at which
// every image's IoU is computed and then averaged.
inline ThresholdReport evaluate(std::span<const Prediction> preds, std::size_t steps) {
  if (preds.empty()) throw std::invalid_argument("evaluate: no predictions");
  ThresholdReport rep;
  const auto n = static_cast<double>(preds.size());
  double th_sum = 0.0;
  for (const auto& p : preds) {
    const ThresholdChoice c = best_threshold(p.label, p.rates, steps);
    rep.ids.push_back(p.id);
    rep.per_image_best_th.push_back(c.threshold);
    th_sum += c.threshold;
  }
  rep.mean_best_th = th_sum / n;
  double iou_sum = 0.0;
  for (const auto& p : preds) {
    const double v = iou(p.label, p.rates, rep.mean_best_th);
    rep.per_image_iou.push_back(v);
    iou_sum += v;
  }
  rep.mean_iou = iou_sum / n;
  for (double th : candidate_thresholds(steps)) {
    PixelConfusion total;
    for (const auto& p : preds) total += confusion(p.label, p.rates, th);
    rep.pr_curve.push_back({th, total.precision(), total.recall(), f_measure(total.precision(), total.recall())});
  }
  return rep;
}

inline std::string fmt_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline void write_report_csv(const std::filesystem::path& path, const ThresholdReport& rep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "image_id,best_th,iou_at_mean_th\n";
  for (std::size_t i = 0; i < rep.ids.size(); ++i)
    out << rep.ids[i] << ',' << fmt_g6(rep.per_image_best_th[i]) << ',' << fmt_g6(rep.per_image_iou[i]) << '\n';
}

inline void write_pr_csv(const std::filesystem::path& path, const ThresholdReport& rep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << "threshold,precision,recall,f_measure\n";
  for (const auto& p : rep.pr_curve)
    out << fmt_g6(p.threshold) << ',' << fmt_g6(p.precision) << ',' << fmt_g6(p.recall) << ','
        << fmt_g6(p.f_measure) << '\n';
}

inline std::string summary_line(const ThresholdReport& rep) {
  return "mean_best_th=" + fmt_g6(rep.mean_best_th) + " mean_iou=" + fmt_g6(rep.mean_iou) +
         " images=" + std::to_string(rep.ids.size());
}

}  // namespace lanesnn
