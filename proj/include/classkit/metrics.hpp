#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "classkit/tensor.hpp"

namespace classkit {

// Precision/recall at every 8-bit threshold. Maps are quantized once with
// round(s*255); binarization at threshold t keeps quantized values >= t.
struct PrCurve {
  std::array<double, 256> precision{};
  std::array<double, 256> recall{};
};

struct ImageMetrics {
  double f_max = 0.0;
  double f_mean = 0.0;
  double f_adaptive = 0.0;
  double mae = 0.0;
  double s_measure = 0.0;
  double s_region = 0.0;
  double s_object = 0.0;
  PrCurve curve;
};

// Dataset report: per-image metrics averaged, curve averaged pointwise.
struct MetricsReport {
  double f_max = 0.0;
  double f_mean = 0.0;
  double f_adaptive = 0.0;
  double mae = 0.0;
  double s_measure = 0.0;
  double s_region = 0.0;
  double s_object = 0.0;
  PrCurve curve;
  int64_t images = 0;
};

double mae(const Tensor& s, const Tensor& g);

PrCurve pr_curve(const Tensor& s, const Tensor& g);

// (1+b)pr / (bp + r + 1e-7)
double f_measure(double precision, double recall, double beta_sq = 0.3);

struct SMeasure {
  double s = 0.0;
  double s_region = 0.0;
  double s_object = 0.0;
};

// Structure measure, alpha-blended from the region and object terms. For a
// uniform ground truth the edge rules apply: s = 1 - mean(s) when empty,
// s = mean(s) when full, with both components reported as s itself.
SMeasure s_measure(const Tensor& s, const Tensor& g, double alpha = 0.5);

ImageMetrics evaluate_image(const Tensor& s, const Tensor& g);

// Reduction runs in ascending id order, so the report is independent of the
// order pairs arrive in.
struct EvalPair {
  std::string id;
  Tensor s;
  Tensor g;
};
MetricsReport evaluate_dataset(const std::vector<EvalPair>& pairs,
                               std::vector<std::pair<std::string, ImageMetrics>>*
                                   per_image = nullptr);

// One row per image plus a "summary" row: id, f_max, f_mean, f_adaptive,
// mae, s_measure, s_region, s_object.
void write_metrics_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, ImageMetrics>>& rows,
    const MetricsReport& summary);

// 256 rows: threshold, precision, recall.
void write_pr_csv(const std::string& path, const PrCurve& curve);

}  // namespace classkit
