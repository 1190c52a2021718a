#include "classkit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "classkit/errors.hpp"
#include "classkit/numerics.hpp"

namespace classkit {

namespace {

constexpr double kEps = 1e-7;
constexpr double kBceLo = 1e-7;
constexpr double kBceHi = 1.0 - 1e-7;
constexpr double kVarStabilizer = 1e-12;  // matches the reduction ops

void check_same_shape(const Tensor& s, const Tensor& g, const char* op) {
  if (s.shape() != g.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(s.shape()) + " vs " + shape_str(g.shape()));
  }
}

}  // namespace

RegionConfig RegionConfig::scaled_for(int64_t h, int64_t w) const {
  int64_t side = std::min(h, w);
  double scale = static_cast<double>(side) / 64.0;
  RegionConfig out;
  out.window = std::clamp<int64_t>(std::llround(window * scale), 1, side);
  out.stride = std::clamp<int64_t>(std::llround(stride * scale), 1, out.window);
  return out;
}

Tensor pixel_bce(const Tensor& s, const Tensor& g) {
  check_same_shape(s, g, "pixel_bce");
  const auto& sv = s.value();
  const auto& gv = g.value();
  int64_t n = s.numel();

  ExactSum acc;
  for (int64_t i = 0; i < n; ++i) {
    double p = std::clamp(sv[i], kBceLo, kBceHi);
    acc.add(-(gv[i] * std::log(p) + (1.0 - gv[i]) * std::log1p(-p)));
  }
  if (branch_fingerprint_armed()) {
    fold_branch_event(0x626365);
    for (int64_t i = 0; i < n; ++i)
      if (sv[i] < kBceLo || sv[i] > kBceHi)
        fold_branch_event(static_cast<uint64_t>(i));
  }
  Tensor out = make_node({1}, {s});
  out.impl()->value[0] = acc.result() / static_cast<double>(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto ps = s.impl_ptr();
    auto pg = g.impl_ptr();
    o->backward_fn = [o, ps, pg, n]() {
      ps->ensure_grad();
      double gu = o->grad[0] / static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        double x = ps->value[i];
        if (x < kBceLo || x > kBceHi) continue;  // clamped, locally flat
        ps->grad[i] += gu * (x - pg->value[i]) / (x * (1.0 - x));
      }
    };
  }
  return out;
}

namespace {

struct WindowStats {
  double mu_s, sd_s, mu_g, sd_g;
  int64_t plane_off, row0, col0;
};

void plane_stats(const std::vector<double>& v, int64_t off, int64_t row_stride,
                 int64_t r0, int64_t c0, int64_t win, double* mu, double* sd) {
  int64_t cnt = win * win;
  ExactSum sum;
  for (int64_t i = 0; i < win; ++i)
    for (int64_t j = 0; j < win; ++j)
      sum.add(v[off + (r0 + i) * row_stride + c0 + j]);
  *mu = sum.result() / static_cast<double>(cnt);
  ExactSum sq;
  for (int64_t i = 0; i < win; ++i)
    for (int64_t j = 0; j < win; ++j) {
      double d = v[off + (r0 + i) * row_stride + c0 + j] - *mu;
      sq.add(d * d);
    }
  *sd = std::sqrt(sq.result() / static_cast<double>(cnt) + kVarStabilizer);
}

}  // namespace

Tensor region_ssd(const Tensor& s, const Tensor& g, const RegionConfig& cfg) {
  check_same_shape(s, g, "region_ssd");
  const Shape& sh = s.shape();
  if (sh.size() < 2) throw ShapeError("region_ssd needs at least 2 dims");
  int64_t h = sh[sh.size() - 2];
  int64_t w = sh[sh.size() - 1];
  if (cfg.window < 1 || cfg.window > std::min(h, w)) {
    throw ConfigError("region window " + std::to_string(cfg.window) +
                      " does not fit a " + std::to_string(h) + "x" +
                      std::to_string(w) + " map");
  }
  if (cfg.stride < 1 || cfg.stride > cfg.window) {
    throw ConfigError("region stride " + std::to_string(cfg.stride) +
                      " outside [1, window]");
  }
  int64_t planes = s.numel() / (h * w);
  const auto& sv = s.value();
  const auto& gv = g.value();

  auto windows = std::make_shared<std::vector<WindowStats>>();
  ExactSum acc;
  for (int64_t p = 0; p < planes; ++p) {
    int64_t off = p * h * w;
    for (int64_t r0 = 0; r0 + cfg.window <= h; r0 += cfg.stride) {
      for (int64_t c0 = 0; c0 + cfg.window <= w; c0 += cfg.stride) {
        WindowStats ws;
        ws.plane_off = off;
        ws.row0 = r0;
        ws.col0 = c0;
        plane_stats(sv, off, w, r0, c0, cfg.window, &ws.mu_s, &ws.sd_s);
        plane_stats(gv, off, w, r0, c0, cfg.window, &ws.mu_g, &ws.sd_g);
        double dm = ws.mu_s - ws.mu_g;
        double dd = ws.sd_s - ws.sd_g;
        acc.add(dm * dm + dd * dd);
        windows->push_back(ws);
      }
    }
  }
  int64_t m = static_cast<int64_t>(windows->size());

  Tensor out = make_node({1}, {s});
  out.impl()->value[0] = acc.result() / static_cast<double>(m);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto ps = s.impl_ptr();
    int64_t win = cfg.window, row_stride = w;
    o->backward_fn = [o, ps, windows, m, win, row_stride]() {
      ps->ensure_grad();
      double cnt = static_cast<double>(win * win);
      double gu = o->grad[0] / static_cast<double>(m);
      for (const WindowStats& ws : *windows) {
        double gmu = gu * 2.0 * (ws.mu_s - ws.mu_g) / cnt;
        double gsd = gu * 2.0 * (ws.sd_s - ws.sd_g) / (cnt * ws.sd_s);
        for (int64_t i = 0; i < win; ++i)
          for (int64_t j = 0; j < win; ++j) {
            int64_t idx =
                ws.plane_off + (ws.row0 + i) * row_stride + ws.col0 + j;
            ps->grad[idx] += gmu + gsd * (ps->value[idx] - ws.mu_s);
          }
      }
    };
  }
  return out;
}

SoftF object_fmeasure_loss(const Tensor& s, const Tensor& g, double beta_sq) {
  check_same_shape(s, g, "object_fmeasure_loss");
  if (!(beta_sq > 0.0)) throw ConfigError("beta_sq must be positive");
  SoftF out;
  Tensor tp = sum(mul(s, g));
  out.precision = div(tp, add_const(sum(s), kEps));
  out.recall = div(tp, add_const(sum(g), kEps));
  Tensor numer = mul_const(mul(out.precision, out.recall), 1.0 + beta_sq);
  Tensor denom =
      max_const(add(mul_const(out.precision, beta_sq), out.recall), kEps);
  out.f_value = div(numer, denom);
  out.loss = sub_from_const(1.0, out.f_value);
  return out;
}

namespace {

void check_binary(const Tensor& g) {
  const auto& v = g.value();
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0 && v[i] != 1.0) {
      throw ContractError("ground truth is not binary at index " +
                          std::to_string(i) + ": " + std::to_string(v[i]));
    }
  }
}

}  // namespace

LossBreakdown combined_loss(const Tensor& s, const Tensor& g,
                            const LossConfig& cfg) {
  check_same_shape(s, g, "combined_loss");
  check_binary(g);
  const Shape& sh = s.shape();
  if (sh.size() < 2) throw ShapeError("combined_loss needs at least 2 dims");

  LossBreakdown b;
  b.pixel = cfg.use_pixel ? pixel_bce(s, g) : Tensor::zeros({1});
  if (cfg.use_region) {
    RegionConfig rc = cfg.region.scaled_for(sh[sh.size() - 2], sh[sh.size() - 1]);
    b.region = region_ssd(s, g, rc);
  } else {
    b.region = Tensor::zeros({1});
  }
  b.object = cfg.use_object ? object_fmeasure_loss(s, g, cfg.beta_sq).loss
                            : Tensor::zeros({1});
  b.total = add(add(b.pixel, b.region), b.object);
  b.per_level.push_back({1, b.total, 1.0});
  b.final = b.total;
  return b;
}

LossBreakdown multi_level_loss(const std::vector<Tensor>& levels,
                               const Tensor& g, const LossConfig& cfg) {
  if (levels.empty()) throw ContractError("multi_level_loss: no levels");
  if (levels.size() > 4) throw ContractError("multi_level_loss: more than 4 levels");

  LossBreakdown b;
  for (size_t i = 0; i < levels.size(); ++i) {
    LossBreakdown li = combined_loss(levels[i], g, cfg);
    double weight = std::ldexp(1.0, -static_cast<int>(i));
    if (i == 0) {
      b = li;
      b.per_level.clear();
      b.final = li.total;
    } else {
      b.final = add(b.final, mul_const(li.total, weight));
    }
    b.per_level.push_back({static_cast<int64_t>(i) + 1, li.total, weight});
  }
  return b;
}

}  // namespace classkit
