#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "classkit/kernels.hpp"
#include "classkit/losses.hpp"
#include "classkit/model.hpp"
#include "classkit/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ck = classkit;
namespace kn = ck::kernels;

namespace {

std::vector<double> rand_buf(ck::Rng& rng, size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

double time_best(const std::function<void()>& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    auto t0 = std::chrono::steady_clock::now();
    f();
    auto t1 = std::chrono::steady_clock::now();
    best = std::min(best,
                    std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

struct Row {
  std::string name;
  double serial_ms = 0.0;
  double parallel_ms = 0.0;
  bool identical = false;
};

// one fixed workload, run through both backends; the outputs left in the
// buffers after the timing loop are what the equality check compares
Row bench_pair(const std::string& name, int reps,
               const std::function<void()>& serial_fn,
               const std::function<void()>& parallel_fn,
               const std::vector<double>& serial_out,
               const std::vector<double>& parallel_out) {
  Row row;
  row.name = name;
  row.serial_ms = time_best(serial_fn, reps);
  row.parallel_ms = time_best(parallel_fn, reps);
  row.identical = same_bits(serial_out, parallel_out);
  return row;
}

// full training step on a small model: forward, multi-level loss, backward;
// loss value and every parameter gradient must match across backends
Row bench_model(int reps) {
  auto run = [](kn::Backend b, double* loss_out,
                std::vector<std::vector<double>>* grads_out) {
    kn::Backend saved = kn::backend();
    kn::set_backend(b);
    ck::ModelConfig mc;
    mc.channels = 8;
    mc.input_h = 32;
    mc.input_w = 32;
    mc.init_seed = 11;
    ck::ClassMini model(mc);
    ck::Rng rng(5);
    ck::Tensor x = ck::Tensor::zeros({1, 3, 32, 32});
    for (double& v : x.value_mut()) v = rng.uniform(0.0, 1.0);
    ck::Tensor g = ck::Tensor::zeros({1, 32, 32});
    for (double& v : g.value_mut()) v = rng.bernoulli(0.3) ? 1.0 : 0.0;
    ck::ClassMini::ForwardOut out = model.forward(x, /*training=*/true);
    std::vector<ck::Tensor> levels;
    for (const ck::Tensor& p : out.preds)
      levels.push_back(ck::slice_batch(p, 0));
    ck::LossBreakdown lb = ck::multi_level_loss(levels, g, ck::LossConfig{});
    ck::backward(lb.final);
    if (loss_out) *loss_out = lb.final.item();
    if (grads_out) {
      grads_out->clear();
      for (const ck::NamedTensor& p : model.parameters())
        grads_out->push_back(p.tensor.grad());
    }
    kn::set_backend(saved);
  };

  Row row;
  row.name = "model_step_c8_32px";
  row.serial_ms =
      time_best([&] { run(kn::Backend::serial, nullptr, nullptr); }, reps);
  row.parallel_ms =
      time_best([&] { run(kn::Backend::parallel, nullptr, nullptr); }, reps);
  double loss_s = 0.0, loss_p = 0.0;
  std::vector<std::vector<double>> gs, gp;
  run(kn::Backend::serial, &loss_s, &gs);
  run(kn::Backend::parallel, &loss_p, &gp);
  row.identical = std::memcmp(&loss_s, &loss_p, sizeof loss_s) == 0 &&
                  gs.size() == gp.size();
  if (row.identical)
    for (size_t i = 0; i < gs.size(); ++i)
      if (!same_bits(gs[i], gp[i])) row.identical = false;
  return row;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "times every kernel on both backends and checks the outputs are "
      "bit-identical"};
  int reps = 5;
  int threads = 0;
  app.add_option("--reps", reps, "timing repetitions, best one counts");
  app.add_option("--threads", threads, "OpenMP threads; 0 keeps the default");
  CLI11_PARSE(app, argc, argv);
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  ck::Rng rng(42);
  std::vector<Row> rows;

  {
    const int64_t m = 96, k = 96, n = 96;
    std::vector<double> a = rand_buf(rng, m * k, -1, 1);
    std::vector<double> b = rand_buf(rng, k * n, -1, 1);
    std::vector<double> ys(m * n), yp(m * n);
    rows.push_back(bench_pair(
        "matmul_96", reps,
        [&] { kn::serial::matmul_fwd(a.data(), b.data(), ys.data(), m, k, n); },
        [&] { kn::par::matmul_fwd(a.data(), b.data(), yp.data(), m, k, n); },
        ys, yp));
  }
  {
    kn::ConvDims d{2, 16, 32, 32, 16, 3, 1, 1, 0, 0};
    d.oh = d.out_extent_h();
    d.ow = d.out_extent_w();
    std::vector<double> x = rand_buf(rng, d.n * d.cin * d.h * d.w, -1, 1);
    std::vector<double> w = rand_buf(rng, d.cout * d.cin * d.k * d.k, -1, 1);
    std::vector<double> bias = rand_buf(rng, d.cout, -1, 1);
    size_t ysz = static_cast<size_t>(d.n * d.cout * d.oh * d.ow);
    std::vector<double> ys(ysz), yp(ysz);
    rows.push_back(bench_pair(
        "conv2d_fwd_16c_32px", reps,
        [&] { kn::serial::conv2d_fwd(x.data(), w.data(), bias.data(), ys.data(), d); },
        [&] { kn::par::conv2d_fwd(x.data(), w.data(), bias.data(), yp.data(), d); },
        ys, yp));

    std::vector<double> dy = rand_buf(rng, ysz, -1, 1);
    size_t wsz = w.size();
    std::vector<double> dws(wsz), dwp(wsz);
    // backward kernels accumulate, so each rep starts from zero
    rows.push_back(bench_pair(
        "conv2d_bwd_weight", reps,
        [&] {
          std::fill(dws.begin(), dws.end(), 0.0);
          kn::serial::conv2d_bwd_weight(x.data(), dy.data(), dws.data(), d);
        },
        [&] {
          std::fill(dwp.begin(), dwp.end(), 0.0);
          kn::par::conv2d_bwd_weight(x.data(), dy.data(), dwp.data(), d);
        },
        dws, dwp));

    std::vector<double> dxs(x.size()), dxp(x.size());
    rows.push_back(bench_pair(
        "conv2d_bwd_input", reps,
        [&] {
          std::fill(dxs.begin(), dxs.end(), 0.0);
          kn::serial::conv2d_bwd_input(dy.data(), w.data(), dxs.data(), d);
        },
        [&] {
          std::fill(dxp.begin(), dxp.end(), 0.0);
          kn::par::conv2d_bwd_input(dy.data(), w.data(), dxp.data(), d);
        },
        dxs, dxp));
  }
  {
    const int64_t m = 64, n = 4096;
    std::vector<double> x = rand_buf(rng, m * n, -5, 5);
    std::vector<double> ys(m * n), yp(m * n);
    rows.push_back(bench_pair(
        "softmax_rows_64x4096", reps,
        [&] { kn::serial::softmax_rows_fwd(x.data(), ys.data(), m, n); },
        [&] { kn::par::softmax_rows_fwd(x.data(), yp.data(), m, n); }, ys,
        yp));
  }
  {
    kn::ResizeDims d{2, 16, 16, 16, 64, 64};
    std::vector<double> x = rand_buf(rng, d.n * d.c * d.hin * d.win, -1, 1);
    size_t ysz = static_cast<size_t>(d.n * d.c * d.hout * d.wout);
    std::vector<double> ys(ysz), yp(ysz);
    rows.push_back(bench_pair(
        "bilinear_up_16_to_64", reps,
        [&] { kn::serial::bilinear_fwd(x.data(), ys.data(), d); },
        [&] { kn::par::bilinear_fwd(x.data(), yp.data(), d); }, ys, yp));
  }
  {
    const int64_t n = 4, c = 16, hw = 32 * 32;
    std::vector<double> x = rand_buf(rng, n * c * hw, -2, 2);
    std::vector<double> mean(c), var(c);
    kn::serial::bn_stats(x.data(), mean.data(), var.data(), n, c, hw);
    std::vector<double> gamma = rand_buf(rng, c, 0.5, 1.5);
    std::vector<double> shift = rand_buf(rng, c, -0.5, 0.5);
    std::vector<double> ys(x.size()), yp(x.size());
    rows.push_back(bench_pair(
        "bn_apply_4x16x1024", reps,
        [&] {
          kn::serial::bn_apply(x.data(), mean.data(), var.data(), gamma.data(),
                               shift.data(), ys.data(), n, c, hw, 1e-5);
        },
        [&] {
          kn::par::bn_apply(x.data(), mean.data(), var.data(), gamma.data(),
                            shift.data(), yp.data(), n, c, hw, 1e-5);
        },
        ys, yp));
  }
  {
    const int64_t n = 1 << 20;
    std::vector<double> x = rand_buf(rng, n, -3, 3);
    std::vector<double> ys(n), yp(n);
    rows.push_back(bench_pair(
        "relu_1m", reps,
        [&] { kn::serial::relu_fwd(x.data(), ys.data(), n); },
        [&] { kn::par::relu_fwd(x.data(), yp.data(), n); }, ys, yp));
    rows.push_back(bench_pair(
        "sigmoid_1m", reps,
        [&] { kn::serial::sigmoid_fwd(x.data(), ys.data(), n); },
        [&] { kn::par::sigmoid_fwd(x.data(), yp.data(), n); }, ys, yp));
  }
  rows.push_back(bench_model(reps));

  std::printf("%-22s %10s %12s %9s %10s\n", "kernel", "serial_ms",
              "parallel_ms", "speedup", "identical");
  bool all_same = true;
  for (const Row& r : rows) {
    double speedup = r.parallel_ms > 0.0 ? r.serial_ms / r.parallel_ms : 0.0;
    std::printf("%-22s %10.3f %12.3f %8.2fx %10s\n", r.name.c_str(),
                r.serial_ms, r.parallel_ms, speedup,
                r.identical ? "yes" : "NO");
    all_same = all_same && r.identical;
  }
  if (!all_same) {
    std::fprintf(stderr, "error: backends disagree\n");
    return 1;
  }
  return 0;
}
