#include <cmath>
#include <cstring>
#include <vector>

#include "classkit/tensor.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;
using testutil::central_diff;
using testutil::guarded_diff;
using testutil::rel_err;
using testutil::same_bits;

namespace {

Tensor lit(std::vector<double> v, Shape s) {
  return Tensor::from(std::move(v), std::move(s));
}

// fixed random weighting so the probed scalar sees every output element
Tensor weigh(const Tensor& y, uint64_t salt) {
  Rng rng(salt);
  return sum(mul(y, Tensor::uniform(y.shape(), rng, 0.5, 1.5)));
}

}  // namespace

TEST_CASE("matmul: identity, dot product, gradient") {
  Tensor a = lit({1, 2, 3, 4}, {2, 2});
  CHECK(same_bits(matmul(lit({1, 0, 0, 1}, {2, 2}), a), a));
  CHECK(matmul(lit({1, 2}, {1, 2}), lit({3, 4}, {2, 1})).item() == 11.0);

  Rng rng(11);
  Tensor x = Tensor::uniform({3, 4}, rng, -1, 1);
  Tensor y = Tensor::uniform({4, 2}, rng, -1, 1);
  x.set_requires_grad(true);
  y.set_requires_grad(true);
  backward(weigh(matmul(x, y), 99));
  auto eval = [&] {
    NoGradGuard ng;
    return weigh(matmul(x, y), 99).item();
  };
  for (Tensor* t : {&x, &y})
    for (int64_t i = 0; i < t->numel(); ++i) {
      double fd = central_diff(eval, &t->value_mut()[static_cast<size_t>(i)],
                               1e-6);
      CHECK(rel_err(t->grad()[static_cast<size_t>(i)], fd) < 1e-6);
    }
}

TEST_CASE("softmax rows: hand values, normalization, shift stability") {
  Tensor even = softmax_rows(lit({3.7, 3.7}, {1, 2}));
  CHECK(even.value()[0] == 0.5);
  CHECK(even.value()[1] == 0.5);

  Tensor z = softmax_rows(lit({2, 6}, {1, 2}));
  CHECK(std::fabs(z.value()[0] - 1.0 / (1.0 + std::exp(4.0))) < 1e-12);
  CHECK(std::fabs(z.value()[0] - 0.017986) < 1e-6);
  CHECK(std::fabs(z.value()[1] - 0.982014) < 1e-6);

  Rng rng(3);
  Tensor m = Tensor::uniform({5, 7}, rng, -4, 4);
  Tensor sm = softmax_rows(m);
  Tensor sm_shifted = softmax_rows(add_const(m, 17.25));
  for (int64_t r = 0; r < 5; ++r) {
    double row = 0.0;
    for (int64_t c = 0; c < 7; ++c)
      row += sm.value()[static_cast<size_t>(r * 7 + c)];
    CHECK(std::fabs(row - 1.0) < 1e-9);
  }
  for (int64_t i = 0; i < 35; ++i) {
    double v = sm.value()[static_cast<size_t>(i)];
    CHECK(v > 0.0);
    CHECK(v < 1.0);
    CHECK(std::fabs(v - sm_shifted.value()[static_cast<size_t>(i)]) < 1e-12);
  }

  Tensor sg = Tensor::uniform({3, 5}, rng, -2, 2);
  sg.set_requires_grad(true);
  backward(weigh(softmax_rows(sg), 7));
  auto eval = [&] {
    NoGradGuard ng;
    return weigh(softmax_rows(sg), 7).item();
  };
  for (int64_t i = 0; i < 15; ++i) {
    double fd =
        central_diff(eval, &sg.value_mut()[static_cast<size_t>(i)], 1e-6);
    CHECK(rel_err(sg.grad()[static_cast<size_t>(i)], fd) < 1e-5);
  }
}

TEST_CASE("conv2d: pointwise scale, bias-only kernel, gradient") {
  Tensor x = lit({1, 2, 3, 4}, {1, 1, 2, 2});
  Tensor doubled = conv2d(x, lit({2}, {1, 1, 1, 1}), Tensor::zeros({1}), 1, 0);
  CHECK(doubled.value() == std::vector<double>{2, 4, 6, 8});

  Tensor flat = conv2d(x, Tensor::zeros({1, 1, 3, 3}),
                       Tensor::full({1}, 5.0), 1, 1);
  CHECK(flat.shape() == Shape{1, 1, 2, 2});
  for (double v : flat.value()) CHECK(v == 5.0);

  Rng rng(21);
  Tensor xr = Tensor::uniform({1, 2, 5, 5}, rng, -1, 1);
  Tensor wr = Tensor::uniform({3, 2, 3, 3}, rng, -0.5, 0.5);
  Tensor br = Tensor::uniform({3}, rng, -0.1, 0.1);
  for (Tensor* t : {&xr, &wr, &br}) t->set_requires_grad(true);
  backward(weigh(conv2d(xr, wr, br, 1, 1), 5));
  auto eval = [&] {
    NoGradGuard ng;
    return weigh(conv2d(xr, wr, br, 1, 1), 5).item();
  };
  Rng pick(77);
  for (Tensor* t : {&xr, &wr, &br})
    for (int k = 0; k < 6; ++k) {
      size_t i = static_cast<size_t>(pick.uniform_int(0, t->numel() - 1));
      double fd = central_diff(eval, &t->value_mut()[i], 1e-5);
      CHECK(rel_err(t->grad()[i], fd) < 1e-5);
    }

  Tensor strided = conv2d(xr, wr, br, 2, 1);
  CHECK(strided.shape() == Shape{1, 3, 3, 3});
}

TEST_CASE("bilinear resize: constants, identity, hand row, gradient") {
  Tensor up = bilinear_resize(lit({7}, {1, 1, 1, 1}), 2, 2);
  for (double v : up.value()) CHECK(v == 7.0);

  Rng rng(4);
  Tensor x = Tensor::uniform({1, 2, 3, 5}, rng, -1, 1);
  CHECK(same_bits(bilinear_resize(x, 3, 5), x));

  Tensor row = bilinear_resize(lit({1, 3}, {1, 1, 1, 2}), 1, 4);
  CHECK(row.value() == std::vector<double>{1.0, 1.5, 2.5, 3.0});

  Tensor xr = Tensor::uniform({1, 2, 3, 4}, rng, -1, 1);
  xr.set_requires_grad(true);
  backward(weigh(bilinear_resize(xr, 7, 5), 9));
  auto eval = [&] {
    NoGradGuard ng;
    return weigh(bilinear_resize(xr, 7, 5), 9).item();
  };
  for (int64_t i = 0; i < xr.numel(); ++i) {
    double fd =
        central_diff(eval, &xr.value_mut()[static_cast<size_t>(i)], 1e-6);
    CHECK(rel_err(xr.grad()[static_cast<size_t>(i)], fd) < 1e-6);
  }
}

TEST_CASE("batch norm: normalized input, constant channel, gradient") {
  Tensor gamma = Tensor::full({1}, 1.0);
  Tensor shift = Tensor::zeros({1});
  {
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0);
    Tensor x = lit({-1, 1, -1, 1}, {1, 1, 2, 2});
    Tensor y = batch_norm(x, gamma, shift, rm, rv, true);
    for (int64_t i = 0; i < 4; ++i)
      CHECK(std::fabs(y.value()[static_cast<size_t>(i)] -
                      x.value()[static_cast<size_t>(i)]) < 1e-4);
  }
  {
    Tensor rm = Tensor::zeros({1});
    Tensor rv = Tensor::full({1}, 1.0);
    Tensor c = Tensor::full({1, 1, 2, 2}, 0.7);
    Tensor y = batch_norm(c, gamma, shift, rm, rv, true);
    for (double v : y.value()) CHECK(v == 0.0);
    // training pass pulls the running stats toward the batch
    CHECK(rm.value()[0] == doctest::Approx(0.07));
  }

  Rng rng(8);
  Tensor x = Tensor::uniform({2, 3, 4, 4}, rng, -1, 1);
  Tensor gm = Tensor::uniform({3}, rng, 0.5, 1.5);
  Tensor sh = Tensor::uniform({3}, rng, -0.3, 0.3);
  for (Tensor* t : {&x, &gm, &sh}) t->set_requires_grad(true);
  // fresh running buffers per call so training-mode updates cannot leak
  auto run = [&] {
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0);
    return weigh(batch_norm(x, gm, sh, rm, rv, true), 13);
  };
  backward(run());
  auto eval = [&] {
    NoGradGuard ng;
    return run().item();
  };
  Rng pick(31);
  for (Tensor* t : {&x, &gm, &sh})
    for (int k = 0; k < 5; ++k) {
      size_t i = static_cast<size_t>(pick.uniform_int(0, t->numel() - 1));
      double fd = central_diff(eval, &t->value_mut()[i], 1e-5);
      CHECK(rel_err(t->grad()[i], fd) < 1e-4);
    }
}

TEST_CASE("pointwise: relu, sigmoid, arithmetic") {
  CHECK(relu(lit({-2}, {1})).item() == 0.0);
  CHECK(relu(lit({3}, {1})).item() == 3.0);

  Tensor zero = lit({0}, {1});
  zero.set_requires_grad(true);
  Tensor sg = sigmoid(zero);
  CHECK(sg.item() == 0.5);
  backward(sg);
  CHECK(zero.grad()[0] == 0.25);

  Rng rng(6);
  Tensor x = Tensor::uniform({2, 9}, rng, -2, 2);
  x.set_requires_grad(true);
  backward(weigh(sigmoid(x), 3));
  auto eval = [&] {
    NoGradGuard ng;
    return weigh(sigmoid(x), 3).item();
  };
  for (int64_t i = 0; i < x.numel(); ++i) {
    double fd =
        central_diff(eval, &x.value_mut()[static_cast<size_t>(i)], 1e-6);
    CHECK(rel_err(x.grad()[static_cast<size_t>(i)], fd) < 1e-6);
  }

  Tensor a = lit({1, 2}, {2});
  Tensor b = lit({4, 8}, {2});
  CHECK(add(a, b).value() == std::vector<double>{5, 10});
  CHECK(sub(a, b).value() == std::vector<double>{-3, -6});
  CHECK(mul(a, b).value() == std::vector<double>{4, 16});
  CHECK(div(a, b).value() == std::vector<double>{0.25, 0.25});
  CHECK(add_const(a, 1.0).value() == std::vector<double>{2, 3});
  CHECK(mul_const(a, 3.0).value() == std::vector<double>{3, 6});
  CHECK(sub_from_const(10.0, a).value() == std::vector<double>{9, 8});
  CHECK(max_const(lit({-1, 2}, {2}), 0.5).value() ==
        std::vector<double>{0.5, 2});
  CHECK(scale_add(lit({2}, {1}), a, b).value() == std::vector<double>{6, 12});
}

TEST_CASE("reductions: mean, stabilized deviation, window stats") {
  CHECK(mean(lit({1, 2, 3}, {3})).item() == 2.0);
  CHECK(sum(lit({1, 2, 3}, {3})).item() == 6.0);
  double flat = std_dev(Tensor::full({4}, 0.3)).item();
  CHECK(std::fabs(flat - 1e-6) < 1e-18);

  Rng rng(17);
  Tensor x = Tensor::uniform({8}, rng, -1, 1);
  x.set_requires_grad(true);
  Tensor s = std_dev(x);
  backward(s);
  auto eval = [&] {
    NoGradGuard ng;
    return std_dev(x).item();
  };
  for (int64_t i = 0; i < 8; ++i) {
    double fd =
        central_diff(eval, &x.value_mut()[static_cast<size_t>(i)], 1e-5);
    CHECK(rel_err(x.grad()[static_cast<size_t>(i)], fd) < 1e-4);
  }

  // a window covering the whole plane reduces to the plain statistics
  Tensor plane = Tensor::uniform({1, 1, 4, 4}, rng, 0, 1);
  Tensor as_vec = reshape(plane, {16});
  CHECK(window_mean(plane, 0, 0, 0, 0, 4, 4).item() == mean(as_vec).item());
  CHECK(std::fabs(window_std(plane, 0, 0, 0, 0, 4, 4).item() -
                  std_dev(as_vec).item()) < 1e-15);
}

TEST_CASE("shape ops are exact index maps") {
  Rng rng(2);
  Tensor x = Tensor::uniform({1, 2, 2}, rng, -1, 1);
  CHECK(same_bits(reshape(reshape(x, {1, 4}), {1, 2, 2}), x));

  Tensor m = Tensor::uniform({3, 5}, rng, -1, 1);
  CHECK(same_bits(transpose2d(transpose2d(m)), m));

  Tensor a = Tensor::uniform({1, 2, 3, 3}, rng, -1, 1);
  Tensor b = Tensor::uniform({1, 3, 3, 3}, rng, -1, 1);
  Tensor cat = concat_channels({a, b});
  CHECK(cat.shape() == Shape{1, 5, 3, 3});
  for (int64_t i = 0; i < 18; ++i)
    CHECK(cat.value()[static_cast<size_t>(i)] ==
          a.value()[static_cast<size_t>(i)]);
  for (int64_t i = 0; i < 27; ++i)
    CHECK(cat.value()[static_cast<size_t>(18 + i)] ==
          b.value()[static_cast<size_t>(i)]);

  Tensor batch = Tensor::uniform({3, 2, 2, 2}, rng, -1, 1);
  std::vector<Tensor> slices;
  for (int64_t i = 0; i < 3; ++i) slices.push_back(slice_batch(batch, i));
  CHECK(slices[0].shape() == Shape{2, 2, 2});
  CHECK(same_bits(stack_batch(slices), batch));
}

TEST_CASE("backward: fills, accumulation, guard") {
  Tensor x = lit({1, 2}, {2});
  x.set_requires_grad(true);
  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1});

  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(x.grad() == std::vector<double>{2, 4});

  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{3, 5});

  Tensor fresh = lit({1}, {1});
  fresh.set_requires_grad(true);
  CHECK(!fresh.has_grad());
  CHECK_THROWS_AS((void)fresh.grad(), ContractError);

  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK(!y.requires_grad());
  }
}

TEST_CASE("composite conv-bn-relu gradient survives the kink guard") {
  Rng rng(23);
  Tensor x = Tensor::uniform({1, 2, 4, 4}, rng, -1, 1);
  Tensor w = Tensor::uniform({4, 2, 3, 3}, rng, -0.4, 0.4);
  Tensor gm = Tensor::uniform({4}, rng, 0.8, 1.2);
  Tensor sh = Tensor::uniform({4}, rng, -0.2, 0.2);
  for (Tensor* t : {&x, &w, &gm, &sh}) t->set_requires_grad(true);
  auto run = [&] {
    Tensor rm = Tensor::zeros({4});
    Tensor rv = Tensor::full({4}, 1.0);
    Tensor conv = conv2d(x, w, Tensor(), 1, 1);
    return mean(relu(batch_norm(conv, gm, sh, rm, rv, true)));
  };
  backward(run());
  auto eval = [&] {
    NoGradGuard ng;
    return run().item();
  };
  Rng pick(41);
  int checked = 0;
  for (int k = 0; k < 24; ++k) {
    Tensor* t = k % 4 == 0 ? &x : (k % 4 == 1 ? &w : (k % 4 == 2 ? &gm : &sh));
    size_t i = static_cast<size_t>(pick.uniform_int(0, t->numel() - 1));
    testutil::FdProbe fd = guarded_diff(eval, &t->value_mut()[i], 1e-5);
    if (!fd.valid) continue;
    CHECK(rel_err(t->grad()[i], fd.value) < 1e-4);
    ++checked;
  }
  CHECK(checked >= 12);
}
