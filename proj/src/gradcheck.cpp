#include "classkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>

#include "classkit/attention.hpp"
#include "classkit/decoder.hpp"
#include "classkit/errors.hpp"
#include "classkit/losses.hpp"
#include "classkit/model.hpp"
#include "classkit/rng.hpp"

namespace classkit {

namespace {

struct Probe {
  std::vector<NamedTensor> leaves;
  std::function<Tensor()> forward;
  int64_t max_elements_per_leaf = 8;
};

using Builder = std::function<Probe(Rng&)>;

Tensor rand_tensor(Rng& rng, Shape shape, double lo, double hi,
                   bool grad = true) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.value_mut()) v = rng.uniform(lo, hi);
  t.set_requires_grad(grad);
  return t;
}

// margin keeps finite-difference steps from crossing the relu kink
Tensor rand_signed_margin(Rng& rng, Shape shape, double margin) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.value_mut()) {
    double u = rng.uniform(-1.0, 1.0);
    v = u < 0.0 ? u - margin : u + margin;
  }
  t.set_requires_grad(true);
  return t;
}

Tensor rand_binary(Rng& rng, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  bool any = false;
  for (double& v : t.value_mut()) {
    v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    any = any || v == 1.0;
  }
  if (!any) t.value_mut()[0] = 1.0;
  return t;
}

// fixed random weighting makes the scalar sensitive to every output element
std::function<Tensor(const Tensor&)> make_weighting(Rng& rng,
                                                    const Shape& shape) {
  Tensor w = rand_tensor(rng, shape, -1.0, 1.0, /*grad=*/false);
  return [w](const Tensor& y) { return sum(mul(y, w)); };
}

struct FdQuotient {
  double value = 0.0;
  bool kink = false;  // the two evaluations took different branches
};

struct SinkGuard {
  ~SinkGuard() { set_branch_fingerprint_sink(nullptr); }
};

FdQuotient central_diff(const std::function<Tensor()>& f, double& slot,
                        double orig, double h) {
  NoGradGuard guard;
  SinkGuard disarm;
  uint64_t fp_plus = 0, fp_minus = 0;
  set_branch_fingerprint_sink(&fp_plus);
  slot = orig + h;
  double fp = f().item();
  set_branch_fingerprint_sink(&fp_minus);
  slot = orig - h;
  double fm = f().item();
  set_branch_fingerprint_sink(nullptr);
  slot = orig;
  return {(fp - fm) / (2.0 * h), fp_plus != fp_minus};
}

void run_probe(const Probe& probe, const GradCheckConfig& cfg, Rng& rng,
               CheckResult& res) {
  Tensor out = probe.forward();
  if (out.numel() != 1)
    throw ContractError("gradient probe must produce a scalar");
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (const NamedTensor& leaf : probe.leaves) {
    if (!leaf.tensor.has_grad())
      throw ContractError("gradient probe: no gradient reached '" + leaf.name +
                          "'");
    analytic.push_back(leaf.tensor.grad());
  }
  for (size_t li = 0; li < probe.leaves.size(); ++li) {
    Tensor leaf = probe.leaves[li].tensor;
    const int64_t numel = leaf.numel();
    std::vector<int64_t> picks;
    if (numel <= probe.max_elements_per_leaf) {
      picks.resize(static_cast<size_t>(numel));
      std::iota(picks.begin(), picks.end(), 0);
    } else {
      for (int64_t k = 0; k < probe.max_elements_per_leaf; ++k)
        picks.push_back(rng.uniform_int(0, numel - 1));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    for (int64_t idx : picks) {
      double& slot = leaf.value_mut()[static_cast<size_t>(idx)];
      const double orig = slot;
      FdQuotient fd = central_diff(probe.forward, slot, orig, cfg.step);
      FdQuotient fd_half =
          central_diff(probe.forward, slot, orig, cfg.step / 2.0);
      // a quotient that straddled a kink is no oracle, and neither is one
      // whose own two step sizes disagree beyond the tolerance being claimed
      double spread =
          std::fabs(fd.value - fd_half.value) /
          std::max({std::fabs(fd.value), std::fabs(fd_half.value), 1e-6});
      if (fd.kink || fd_half.kink || spread > cfg.tolerance) {
        ++res.skipped;
        continue;
      }
      double an = analytic[li][static_cast<size_t>(idx)];
      double rel = std::fabs(fd.value - an) /
                   std::max({std::fabs(fd.value), std::fabs(an), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.elements;
    }
  }
}

Probe probe_matmul(Rng& rng) {
  Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
  Tensor b = rand_tensor(rng, {4, 2}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {3, 2});
  return {{{"a", a}, {"b", b}},
          [=] { return weigh(matmul(a, b)); }};
}

Probe probe_transpose_reshape(Rng& rng) {
  Tensor x = rand_tensor(rng, {3, 4}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {2, 6});
  return {{{"x", x}},
          [=] { return weigh(reshape(transpose2d(x), {2, 6})); }};
}

Probe probe_softmax_rows(Rng& rng) {
  Tensor x = rand_tensor(rng, {3, 5}, -2.0, 2.0);
  auto weigh = make_weighting(rng, {3, 5});
  return {{{"x", x}}, [=] { return weigh(softmax_rows(x)); }};
}

Probe probe_conv2d_pad1(Rng& rng) {
  Tensor x = rand_tensor(rng, {1, 2, 5, 5}, -1.0, 1.0);
  Tensor w = rand_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
  Tensor bias = rand_tensor(rng, {3}, -0.5, 0.5);
  auto weigh = make_weighting(rng, {1, 3, 5, 5});
  return {{{"x", x}, {"w", w}, {"bias", bias}},
          [=] { return weigh(conv2d(x, w, bias, 1, 1)); }};
}

Probe probe_conv2d_stride2(Rng& rng) {
  Tensor x = rand_tensor(rng, {2, 3, 6, 6}, -1.0, 1.0);
  Tensor w = rand_tensor(rng, {4, 3, 3, 3}, -0.5, 0.5);
  auto weigh = make_weighting(rng, {2, 4, 3, 3});
  return {{{"x", x}, {"w", w}},
          [=] { return weigh(conv2d(x, w, Tensor(), 2, 1)); }};
}

Probe probe_bilinear_resize(Rng& rng) {
  Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
  auto weigh_up = make_weighting(rng, {2, 3, 7, 6});
  auto weigh_down = make_weighting(rng, {2, 3, 2, 3});
  return {{{"x", x}}, [=] {
            return add(weigh_up(bilinear_resize(x, 7, 6)),
                       weigh_down(bilinear_resize(x, 2, 3)));
          }};
}

Probe probe_batch_norm(Rng& rng) {
  Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
  Tensor gamma = rand_tensor(rng, {3}, 0.5, 1.5);
  Tensor shift = rand_tensor(rng, {3}, -0.5, 0.5);
  Tensor rm = Tensor::zeros({3});
  Tensor rv = Tensor::full({3}, 1.0);
  auto weigh = make_weighting(rng, {2, 3, 4, 4});
  return {{{"x", x}, {"gamma", gamma}, {"shift", shift}}, [=]() mutable {
            return weigh(batch_norm(x, gamma, shift, rm, rv,
                                    /*training=*/true));
          }};
}

Probe probe_relu_sigmoid(Rng& rng) {
  Tensor x = rand_signed_margin(rng, {2, 3, 4, 4}, 0.05);
  auto weigh = make_weighting(rng, {2, 3, 4, 4});
  return {{{"x", x}},
          [=] { return weigh(add(relu(x), sigmoid(x))); }};
}

Probe probe_elementwise_arith(Rng& rng) {
  Tensor a = rand_tensor(rng, {2, 8}, -1.0, 1.0);
  Tensor b = rand_tensor(rng, {2, 8}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {2, 8});
  return {{{"a", a}, {"b", b}}, [=] {
            Tensor ratio = div(mul(a, b), add_const(mul(b, b), 1.0));
            Tensor affine = sub_from_const(1.0, sub(a, mul_const(b, 0.75)));
            return weigh(add(ratio, affine));
          }};
}

Probe probe_reductions_scale_add(Rng& rng) {
  Tensor x = rand_tensor(rng, {2, 4, 4}, 0.2, 1.2);
  Tensor y = rand_tensor(rng, {2, 4, 4}, -1.0, 1.0);
  Tensor alpha = rand_tensor(rng, {1}, -0.8, 0.8);
  auto weigh = make_weighting(rng, {2, 4, 4});
  return {{{"x", x}, {"y", y}, {"alpha", alpha}}, [=] {
            Tensor stats = add(mul_const(mean(x), 0.5), std_dev(x));
            // x stays above 0, so the active max branch is exercised while
            // the shifted copy stays on the flat one
            Tensor live = sum(max_const(x, 0.0));
            Tensor flat = sum(max_const(x, 10.0));
            return add(add(stats, weigh(scale_add(alpha, x, y))),
                       add(mul_const(live, 0.25), mul_const(flat, 0.25)));
          }};
}

Probe probe_window_stats(Rng& rng) {
  Tensor x = rand_tensor(rng, {1, 2, 8, 8}, 0.0, 1.0);
  int64_t r0 = rng.uniform_int(0, 3);
  int64_t c0 = rng.uniform_int(0, 3);
  int64_t c = rng.uniform_int(0, 1);
  return {{{"x", x}}, [=] {
            Tensor m = window_mean(x, 0, c, r0, c0, 4, 5);
            Tensor s = window_std(x, 0, c, r0, c0, 4, 5);
            return add(mul_const(m, 1.7), s);
          }};
}

Probe probe_concat_slice_stack(Rng& rng) {
  Tensor a = rand_tensor(rng, {2, 2, 3, 3}, -1.0, 1.0);
  Tensor b = rand_tensor(rng, {2, 3, 3, 3}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {2, 5, 3, 3});
  return {{{"a", a}, {"b", b}}, [=] {
            Tensor c = concat_channels({a, b});
            return weigh(stack_batch({slice_batch(c, 1), slice_batch(c, 0)}));
          }};
}

Probe probe_position_attention(Rng& rng) {
  auto pa = std::make_shared<PositionAttention>(4, rng);
  pa->alpha.value_mut()[0] = rng.uniform(-0.8, 0.8);
  Tensor fh = rand_tensor(rng, {1, 4, 2, 2}, -1.0, 1.0);
  Tensor fl = rand_tensor(rng, {1, 4, 3, 3}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {1, 4, 2, 2});
  Probe p;
  p.leaves = {{"F_h", fh}, {"F_l", fl}};
  pa->params(p.leaves, "pos");
  p.forward = [=] { return weigh(pa->forward(fh, fl)); };
  return p;
}

Probe probe_channel_attention(Rng& rng) {
  auto ca = std::make_shared<ChannelAttention>();
  ca->beta.value_mut()[0] = rng.uniform(-0.8, 0.8);
  Tensor fh = rand_tensor(rng, {1, 4, 2, 2}, -1.0, 1.0);
  Tensor fl = rand_tensor(rng, {1, 4, 4, 4}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {1, 4, 4, 4});
  Probe p;
  p.leaves = {{"F_h", fh}, {"F_l", fl}};
  ca->params(p.leaves, "chan");
  p.forward = [=] { return weigh(ca->forward(fh, fl)); };
  return p;
}

Probe probe_fusion_stage(Rng& rng, FusionMode mode) {
  auto stage = std::make_shared<FusionStage>(4, mode, rng);
  Tensor fl = rand_tensor(rng, {1, 4, 6, 6}, -1.0, 1.0);
  Tensor fh = rand_tensor(rng, {1, 4, 3, 3}, -1.0, 1.0);
  Tensor dp = rand_tensor(rng, {1, 4, 3, 3}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {1, 4, 6, 6});
  Probe p;
  p.leaves = {{"f_l", fl}, {"f_h", fh}, {"d_prev", dp}};
  stage->params(p.leaves, "stage");
  p.forward = [=] {
    return weigh(stage->forward(fl, fh, dp, /*training=*/true));
  };
  return p;
}

Probe probe_saliency_head(Rng& rng) {
  auto head = std::make_shared<SaliencyHead>(4, rng);
  Tensor d = rand_tensor(rng, {1, 4, 3, 3}, -1.0, 1.0);
  auto weigh = make_weighting(rng, {1, 1, 6, 6});
  Probe p;
  p.leaves = {{"d", d}};
  head->params(p.leaves, "head");
  p.forward = [=] { return weigh(head->forward(d, 6, 6)); };
  return p;
}

Probe probe_pixel_bce(Rng& rng) {
  Tensor s = rand_tensor(rng, {1, 8, 8}, 0.05, 0.95);
  Tensor g = rand_binary(rng, {1, 8, 8});
  return {{{"s", s}}, [=] { return pixel_bce(s, g); }};
}

Probe probe_region_ssd(Rng& rng) {
  Tensor s = rand_tensor(rng, {1, 8, 8}, 0.05, 0.95);
  Tensor g = rand_tensor(rng, {1, 8, 8}, 0.0, 1.0, /*grad=*/false);
  RegionConfig cfg{3, 2};
  return {{{"s", s}}, [=] { return region_ssd(s, g, cfg); }};
}

Probe probe_object_fmeasure(Rng& rng) {
  Tensor s = rand_tensor(rng, {1, 8, 8}, 0.05, 0.95);
  Tensor g = rand_binary(rng, {1, 8, 8});
  return {{{"s", s}}, [=] { return object_fmeasure_loss(s, g).loss; }};
}

Probe probe_multi_level_loss(Rng& rng) {
  Tensor s1 = rand_tensor(rng, {1, 16, 16}, 0.05, 0.95);
  Tensor s2 = rand_tensor(rng, {1, 16, 16}, 0.05, 0.95);
  Tensor g = rand_binary(rng, {1, 16, 16});
  LossConfig cfg;
  return {{{"s1", s1}, {"s2", s2}},
          [=] { return multi_level_loss({s1, s2}, g, cfg).final; }};
}

Probe probe_full_model(Rng& rng) {
  ModelConfig mc;
  mc.channels = 8;
  mc.input_h = 32;
  mc.input_w = 32;
  mc.init_seed = rng.next_u64();
  auto model = std::make_shared<ClassMini>(mc);
  Probe p;
  p.leaves = model->parameters();
  // fresh blend weights are zero, which would leave the attention branches
  // with vacuous zero gradients; push them off the origin
  for (NamedTensor& leaf : p.leaves)
    if (leaf.name.ends_with(".alpha") || leaf.name.ends_with(".beta"))
      leaf.tensor.value_mut()[0] = rng.uniform(-0.5, 0.5);
  Tensor x = rand_tensor(rng, {1, 3, 32, 32}, 0.0, 1.0, /*grad=*/false);
  Tensor g = rand_binary(rng, {1, 32, 32});
  LossConfig cfg;
  p.max_elements_per_leaf = 1;
  p.forward = [=] {
    ClassMini::ForwardOut out = model->forward(x, /*training=*/true);
    std::vector<Tensor> levels;
    levels.reserve(out.preds.size());
    for (const Tensor& pred : out.preds)
      levels.push_back(slice_batch(pred, 0));
    return multi_level_loss(levels, g, cfg).final;
  };
  return p;
}

const std::vector<std::pair<const char*, Builder>>& check_table() {
  static const std::vector<std::pair<const char*, Builder>> table = {
      {"matmul", probe_matmul},
      {"transpose_reshape", probe_transpose_reshape},
      {"softmax_rows", probe_softmax_rows},
      {"conv2d_pad1", probe_conv2d_pad1},
      {"conv2d_stride2", probe_conv2d_stride2},
      {"bilinear_resize", probe_bilinear_resize},
      {"batch_norm", probe_batch_norm},
      {"relu_sigmoid", probe_relu_sigmoid},
      {"elementwise_arith", probe_elementwise_arith},
      {"reductions_scale_add", probe_reductions_scale_add},
      {"window_stats", probe_window_stats},
      {"concat_slice_stack", probe_concat_slice_stack},
      {"position_attention", probe_position_attention},
      {"channel_attention", probe_channel_attention},
      {"fusion_stage_ffm",
       [](Rng& rng) { return probe_fusion_stage(rng, FusionMode::ffm); }},
      {"fusion_stage_sum",
       [](Rng& rng) { return probe_fusion_stage(rng, FusionMode::sum); }},
      {"saliency_head", probe_saliency_head},
      {"pixel_bce", probe_pixel_bce},
      {"region_ssd", probe_region_ssd},
      {"object_fmeasure", probe_object_fmeasure},
      {"multi_level_loss", probe_multi_level_loss},
      {"full_model", probe_full_model},
  };
  return table;
}

}  // namespace

std::vector<CheckResult> run_gradient_suite(const GradCheckConfig& cfg) {
  if (cfg.instances <= 0)
    throw ContractError("run_gradient_suite: instances must be positive");
  if (!(cfg.step > 0.0) || !(cfg.tolerance > 0.0))
    throw ContractError("run_gradient_suite: step and tolerance must be positive");
  std::vector<CheckResult> results;
  const auto& table = check_table();
  for (size_t ci = 0; ci < table.size(); ++ci) {
    CheckResult res;
    res.name = table[ci].first;
    res.tolerance = cfg.tolerance;
    for (int64_t inst = 0; inst < cfg.instances; ++inst) {
      Rng rng = derive_rng(cfg.seed, ci * 1024 + static_cast<uint64_t>(inst));
      Probe probe = table[ci].second(rng);
      run_probe(probe, cfg, rng, res);
      ++res.instances;
    }
    res.pass = res.elements > 0 && res.max_rel_err < cfg.tolerance &&
               res.skipped * 10 <= res.elements + res.skipped;
    results.push_back(std::move(res));
  }
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return !results.empty() &&
         std::all_of(results.begin(), results.end(),
                     [](const CheckResult& r) { return r.pass; });
}

void print_gradient_report(std::ostream& os,
                           const std::vector<CheckResult>& results) {
  os << std::left << std::setw(24) << "check" << std::right << std::setw(10)
     << "instances" << std::setw(10) << "elements" << std::setw(9) << "skipped"
     << std::setw(13) << "max_rel_err" << std::setw(8) << "verdict" << '\n';
  for (const CheckResult& r : results) {
    os << std::left << std::setw(24) << r.name << std::right << std::setw(10)
       << r.instances << std::setw(10) << r.elements << std::setw(9)
       << r.skipped << std::setw(13) << std::scientific
       << std::setprecision(3) << r.max_rel_err << std::defaultfloat
       << std::setw(8) << (r.pass ? "PASS" : "FAIL") << '\n';
  }
}

}  // namespace classkit
