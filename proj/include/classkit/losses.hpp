#pragma once

#include <vector>

#include "classkit/tensor.hpp"

namespace classkit {

// Sliding-window geometry for the region loss, stated at the 64-pixel
// reference scale. scaled_for() resizes both values in proportion to the
// shorter side of an actual map, keeping 1 <= stride <= window <= side.
struct RegionConfig {
  int64_t window = 11;
  int64_t stride = 5;

  RegionConfig scaled_for(int64_t h, int64_t w) const;
};

struct LossConfig {
  bool use_pixel = true;
  bool use_region = true;
  bool use_object = true;
  RegionConfig region;
  double beta_sq = 0.3;
};

struct LevelTerm {
  int64_t level = 0;  // 1 = final prediction
  Tensor total;
  double weight = 1.0;
};

// Component scalars describe the first level; final is the weighted sum
// over all levels. total = pixel + region + object by construction.
struct LossBreakdown {
  Tensor pixel;
  Tensor region;
  Tensor object;
  Tensor total;
  std::vector<LevelTerm> per_level;
  Tensor final;
};

struct SoftF {
  Tensor loss;
  Tensor precision;
  Tensor recall;
  Tensor f_value;
};

// Mean over all pixels of -[g*log(s) + (1-g)*log(1-s)], with s clamped to
// [1e-7, 1-1e-7] as a log-domain guard. Differentiable in s.
Tensor pixel_bce(const Tensor& s, const Tensor& g);

// Mean over all full windows of (mu_s-mu_g)^2 + (sd_s-sd_g)^2, where sd is
// the stabilized population deviation sqrt(var + 1e-12). Windows slide over
// the trailing two dims of every plane; cfg is used verbatim.
Tensor region_ssd(const Tensor& s, const Tensor& g, const RegionConfig& cfg);

// Soft F-measure: tp = sum(s*g), p = tp/(sum(s)+eps), r = tp/(sum(g)+eps),
// f = (1+b)pr / max(bp+r, eps), loss = 1-f, with eps = 1e-7. The max keeps
// the complete-miss case (p = r = 0) at loss exactly 1 without shifting the
// healthy-denominator value.
SoftF object_fmeasure_loss(const Tensor& s, const Tensor& g,
                           double beta_sq = 0.3);

// Enabled components of one (s, g) pair; disabled ones contribute a constant
// zero. The region window geometry is rescaled to the map's extent. g must
// be binary.
LossBreakdown combined_loss(const Tensor& s, const Tensor& g,
                            const LossConfig& cfg);

// levels[0] is the final prediction. Level i (1-based) carries weight
// 2^-(i-1); final = sum of weighted level totals, accumulated in order.
LossBreakdown multi_level_loss(const std::vector<Tensor>& levels,
                               const Tensor& g, const LossConfig& cfg);

}  // namespace classkit
