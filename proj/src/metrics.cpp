#include "classkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "classkit/errors.hpp"

namespace classkit {

namespace {

constexpr double kEps = 1e-7;

struct MapView {
  const double* data;
  int64_t h, w, n;
};

MapView map_view(const Tensor& t, const char* op) {
  const Shape& s = t.shape();
  if (s.size() < 2) {
    throw ShapeError(std::string(op) + ": map needs 2 trailing dims, got " +
                     shape_str(s));
  }
  int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  if (t.numel() != h * w) {
    throw ShapeError(std::string(op) + ": expected a single map, got " +
                     shape_str(s));
  }
  return {t.value().data(), h, w, h * w};
}

void check_pair(const MapView& a, const MapView& b, const char* op) {
  if (a.h != b.h || a.w != b.w) {
    throw ShapeError(std::string(op) + ": map extents differ");
  }
}

int quantize(double v) {
  long q = std::lround(v * 255.0);
  return static_cast<int>(std::clamp(q, 0L, 255L));
}

// Confusion counts against threshold t from per-bin histograms.
struct BinHist {
  std::array<int64_t, 256> all{};
  std::array<int64_t, 256> fg{};
  int64_t n_fg = 0;
  int64_t n = 0;
};

BinHist histogram(const MapView& s, const MapView& g) {
  BinHist h;
  h.n = s.n;
  for (int64_t i = 0; i < s.n; ++i) {
    int q = quantize(s.data[i]);
    h.all[q] += 1;
    if (g.data[i] != 0.0) {
      h.fg[q] += 1;
      h.n_fg += 1;
    }
  }
  return h;
}

}  // namespace

double mae(const Tensor& s, const Tensor& g) {
  MapView sv = map_view(s, "mae");
  MapView gv = map_view(g, "mae");
  check_pair(sv, gv, "mae");
  double acc = 0.0;
  for (int64_t i = 0; i < sv.n; ++i) acc += std::fabs(sv.data[i] - gv.data[i]);
  return acc / static_cast<double>(sv.n);
}

PrCurve pr_curve(const Tensor& s, const Tensor& g) {
  MapView sv = map_view(s, "pr_curve");
  MapView gv = map_view(g, "pr_curve");
  check_pair(sv, gv, "pr_curve");
  BinHist h = histogram(sv, gv);
  PrCurve out;
  // Cumulative from the top bin down; one pass instead of 256 rescans.
  int64_t tp = 0, detected = 0;
  for (int t = 255; t >= 0; --t) {
    tp += h.fg[t];
    detected += h.all[t];
    int64_t fp = detected - tp;
    int64_t fn = h.n_fg - tp;
    out.precision[t] =
        static_cast<double>(tp) / (static_cast<double>(tp + fp) + kEps);
    out.recall[t] =
        static_cast<double>(tp) / (static_cast<double>(tp + fn) + kEps);
  }
  return out;
}

double f_measure(double precision, double recall, double beta_sq) {
  return (1.0 + beta_sq) * precision * recall /
         (beta_sq * precision + recall + kEps);
}

namespace {

// Mean/std/covariance over an index subset, population convention.
struct RegionStats {
  double mean = 0.0;
  double var = 0.0;
};

double subset_mean(const double* v, const std::vector<int64_t>& idx) {
  double acc = 0.0;
  for (int64_t i : idx) acc += v[i];
  return acc / static_cast<double>(idx.size());
}

double subset_var(const double* v, const std::vector<int64_t>& idx,
                  double mean) {
  double acc = 0.0;
  for (int64_t i : idx) {
    double d = v[i] - mean;
    acc += d * d;
  }
  return acc / static_cast<double>(idx.size());
}

// 2mu / (mu^2 + 1 + sigma + eps)
double object_score(const double* v, const std::vector<int64_t>& idx) {
  double mu = subset_mean(v, idx);
  double sd = std::sqrt(subset_var(v, idx, mu));
  return 2.0 * mu / (mu * mu + 1.0 + sd + kEps);
}

struct BlockStats {
  double mean_s = 0.0, mean_g = 0.0;
  double var_s = 0.0, var_g = 0.0, cov = 0.0;
  int64_t count = 0;
};

BlockStats block_stats(const MapView& s, const MapView& g, int64_t r0,
                       int64_t r1, int64_t c0, int64_t c1) {
  BlockStats b;
  b.count = (r1 - r0) * (c1 - c0);
  if (b.count <= 0) {
    b.count = 0;
    return b;
  }
  double acc_s = 0.0, acc_g = 0.0;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c) {
      acc_s += s.data[r * s.w + c];
      acc_g += g.data[r * g.w + c];
    }
  b.mean_s = acc_s / static_cast<double>(b.count);
  b.mean_g = acc_g / static_cast<double>(b.count);
  double vs = 0.0, vg = 0.0, cv = 0.0;
  for (int64_t r = r0; r < r1; ++r)
    for (int64_t c = c0; c < c1; ++c) {
      double ds = s.data[r * s.w + c] - b.mean_s;
      double dg = g.data[r * g.w + c] - b.mean_g;
      vs += ds * ds;
      vg += dg * dg;
      cv += ds * dg;
    }
  b.var_s = vs / static_cast<double>(b.count);
  b.var_g = vg / static_cast<double>(b.count);
  b.cov = cv / static_cast<double>(b.count);
  return b;
}

double block_ssim(const BlockStats& b) {
  double num = 4.0 * b.mean_s * b.mean_g * b.cov;
  double den = (b.mean_s * b.mean_s + b.mean_g * b.mean_g) *
               (b.var_s + b.var_g);
  if (num == 0.0) return den == 0.0 ? 1.0 : 0.0;
  return num / (den + kEps);
}

}  // namespace

SMeasure s_measure(const Tensor& s, const Tensor& g, double alpha) {
  MapView sv = map_view(s, "s_measure");
  MapView gv = map_view(g, "s_measure");
  check_pair(sv, gv, "s_measure");

  int64_t n_fg = 0;
  for (int64_t i = 0; i < sv.n; ++i)
    if (gv.data[i] != 0.0) n_fg += 1;

  SMeasure out;
  if (n_fg == 0 || n_fg == sv.n) {
    double mu_s = 0.0;
    for (int64_t i = 0; i < sv.n; ++i) mu_s += sv.data[i];
    mu_s /= static_cast<double>(sv.n);
    out.s = n_fg == 0 ? 1.0 - mu_s : mu_s;
    out.s_region = out.s;
    out.s_object = out.s;
    return out;
  }

  // Object term: foreground of s against 1, background of (1-s) against 1.
  std::vector<int64_t> fg, bg;
  fg.reserve(static_cast<size_t>(n_fg));
  bg.reserve(static_cast<size_t>(sv.n - n_fg));
  for (int64_t i = 0; i < sv.n; ++i) {
    (gv.data[i] != 0.0 ? fg : bg).push_back(i);
  }
  std::vector<double> inv(static_cast<size_t>(sv.n));
  for (int64_t i = 0; i < sv.n; ++i) inv[static_cast<size_t>(i)] = 1.0 - sv.data[i];
  double mu_g = static_cast<double>(n_fg) / static_cast<double>(sv.n);
  out.s_object = mu_g * object_score(sv.data, fg) +
                 (1.0 - mu_g) * object_score(inv.data(), bg);

  // Region term: four blocks split at the foreground centroid (row/col means
  // rounded to the nearest index); the first blocks include the centroid.
  double cr_acc = 0.0, cc_acc = 0.0;
  for (int64_t i : fg) {
    cr_acc += static_cast<double>(i / sv.w);
    cc_acc += static_cast<double>(i % sv.w);
  }
  int64_t cr = std::llround(cr_acc / static_cast<double>(n_fg));
  int64_t cc = std::llround(cc_acc / static_cast<double>(n_fg));

  double total = static_cast<double>(sv.n);
  double region = 0.0;
  const int64_t rs[3] = {0, cr + 1, sv.h};
  const int64_t cs[3] = {0, cc + 1, sv.w};
  for (int bi = 0; bi < 2; ++bi)
    for (int bj = 0; bj < 2; ++bj) {
      BlockStats b = block_stats(sv, gv, rs[bi], rs[bi + 1], cs[bj], cs[bj + 1]);
      if (b.count == 0) continue;
      region += (static_cast<double>(b.count) / total) * block_ssim(b);
    }
  out.s_region = std::clamp(region, 0.0, 1.0);
  out.s = std::clamp(alpha * region + (1.0 - alpha) * out.s_object, 0.0, 1.0);
  return out;
}

ImageMetrics evaluate_image(const Tensor& s, const Tensor& g) {
  MapView sv = map_view(s, "evaluate_image");
  MapView gv = map_view(g, "evaluate_image");
  check_pair(sv, gv, "evaluate_image");

  ImageMetrics m;
  m.curve = pr_curve(s, g);
  m.f_max = 0.0;
  double f_acc = 0.0;
  for (int t = 0; t < 256; ++t) {
    double f = f_measure(m.curve.precision[t], m.curve.recall[t]);
    m.f_max = std::max(m.f_max, f);
    f_acc += f;
  }
  m.f_mean = f_acc / 256.0;

  double mu_s = 0.0;
  for (int64_t i = 0; i < sv.n; ++i) mu_s += sv.data[i];
  mu_s /= static_cast<double>(sv.n);
  int t_ad = static_cast<int>(
      std::clamp(std::lround(2.0 * mu_s * 255.0), 0L, 255L));
  m.f_adaptive = f_measure(m.curve.precision[t_ad], m.curve.recall[t_ad]);

  m.mae = mae(s, g);
  SMeasure sm = s_measure(s, g);
  m.s_measure = sm.s;
  m.s_region = sm.s_region;
  m.s_object = sm.s_object;
  return m;
}

MetricsReport evaluate_dataset(
    const std::vector<EvalPair>& pairs,
    std::vector<std::pair<std::string, ImageMetrics>>* per_image) {
  if (pairs.empty()) throw ContractError("evaluate_dataset: no pairs");

  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return pairs[a].id < pairs[b].id;
  });

  // Validate serially; the parallel region below must not throw.
  for (const EvalPair& p : pairs) {
    try {
      MapView sv = map_view(p.s, "evaluate_dataset");
      MapView gv = map_view(p.g, "evaluate_dataset");
      check_pair(sv, gv, "evaluate_dataset");
    } catch (const ShapeError& e) {
      throw ShapeError("pair '" + p.id + "': " + e.what());
    }
  }

  std::vector<ImageMetrics> rows(pairs.size());
#pragma omp parallel for schedule(static)
  for (int64_t k = 0; k < static_cast<int64_t>(order.size()); ++k) {
    size_t i = order[static_cast<size_t>(k)];
    rows[static_cast<size_t>(k)] = evaluate_image(pairs[i].s, pairs[i].g);
  }

  MetricsReport rep;
  rep.images = static_cast<int64_t>(pairs.size());
  for (size_t k = 0; k < order.size(); ++k) {
    const ImageMetrics& m = rows[k];
    rep.f_max += m.f_max;
    rep.f_mean += m.f_mean;
    rep.f_adaptive += m.f_adaptive;
    rep.mae += m.mae;
    rep.s_measure += m.s_measure;
    rep.s_region += m.s_region;
    rep.s_object += m.s_object;
    for (int t = 0; t < 256; ++t) {
      rep.curve.precision[t] += m.curve.precision[t];
      rep.curve.recall[t] += m.curve.recall[t];
    }
    if (per_image) per_image->push_back({pairs[order[k]].id, m});
  }
  double n = static_cast<double>(pairs.size());
  rep.f_max /= n;
  rep.f_mean /= n;
  rep.f_adaptive /= n;
  rep.mae /= n;
  rep.s_measure /= n;
  rep.s_region /= n;
  rep.s_object /= n;
  for (int t = 0; t < 256; ++t) {
    rep.curve.precision[t] /= n;
    rep.curve.recall[t] /= n;
  }
  return rep;
}

namespace {

void write_row(std::ofstream& f, const std::string& id, double f_max,
               double f_mean, double f_adaptive, double mae_v, double s,
               double s_r, double s_o) {
  f << id << ',' << f_max << ',' << f_mean << ',' << f_adaptive << ',' << mae_v
    << ',' << s << ',' << s_r << ',' << s_o << '\n';
}

}  // namespace

void write_metrics_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, ImageMetrics>>& rows,
    const MetricsReport& summary) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "id,f_max,f_mean,f_adaptive,mae,s_measure,s_region,s_object\n";
  for (const auto& [id, m] : rows) {
    write_row(f, id, m.f_max, m.f_mean, m.f_adaptive, m.mae, m.s_measure,
              m.s_region, m.s_object);
  }
  write_row(f, "summary", summary.f_max, summary.f_mean, summary.f_adaptive,
            summary.mae, summary.s_measure, summary.s_region,
            summary.s_object);
  if (!f.good()) throw IoError("short write to " + path);
}

void write_pr_csv(const std::string& path, const PrCurve& curve) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "threshold,precision,recall\n";
  for (int t = 0; t < 256; ++t) {
    f << t << ',' << curve.precision[t] << ',' << curve.recall[t] << '\n';
  }
  if (!f.good()) throw IoError("short write to " + path);
}

}  // namespace classkit
