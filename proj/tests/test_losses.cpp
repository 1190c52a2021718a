#include <cmath>
#include <vector>

#include "classkit/data.hpp"
#include "classkit/errors.hpp"
#include "classkit/losses.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;
using testutil::blend_toward;
using testutil::central_diff;
using testutil::noise_mask;
using testutil::rand_tensor;
using testutil::rel_err;

TEST_CASE("pixel bce closed forms and gradient") {
  Rng rng(31);
  Tensor g = noise_mask(rng, 4, 4);
  Tensor half = Tensor::full({1, 4, 4}, 0.5);
  CHECK(std::fabs(pixel_bce(half, g).item() - std::log(2.0)) < 1e-12);

  Tensor g1 = Tensor::from({1.0}, {1, 1, 1});
  Tensor s9 = Tensor::from({0.9}, {1, 1, 1});
  CHECK(std::fabs(pixel_bce(s9, g1).item() + std::log(0.9)) < 1e-12);
  CHECK(std::fabs(pixel_bce(s9, g1).item() - 0.105361) < 1e-6);

  Tensor s = rand_tensor(rng, {1, 4, 4}, 0.2, 0.8);
  s.set_requires_grad(true);
  backward(pixel_bce(s, g));
  auto eval = [&] {
    NoGradGuard ng;
    return pixel_bce(s, g).item();
  };
  for (int64_t i = 0; i < 16; ++i) {
    double fd =
        central_diff(eval, &s.value_mut()[static_cast<size_t>(i)], 1e-6);
    CHECK(rel_err(s.grad()[static_cast<size_t>(i)], fd) < 1e-6);
  }
}

TEST_CASE("region loss vanishes on itself and matches the window oracle") {
  Rng rng(32);
  struct Geo {
    int64_t h, w, win, stride;
  };
  for (Geo geo : {Geo{8, 8, 4, 4}, Geo{8, 8, 3, 2}, Geo{16, 16, 5, 3}}) {
    RegionConfig cfg{geo.win, geo.stride};
    Tensor s = rand_tensor(rng, {1, geo.h, geo.w}, 0, 1);
    CHECK(region_ssd(s, s, cfg).item() <= 1e-12);

    Tensor g = rand_tensor(rng, {1, geo.h, geo.w}, 0, 1);
    double want = testutil::oracle_region_ssd(s.value(), g.value(), geo.h,
                                              geo.w, geo.win, geo.stride);
    CHECK(std::fabs(region_ssd(s, g, cfg).item() - want) < 1e-12);
  }
}

TEST_CASE("single constant window reduces to the squared mean gap") {
  // dyadic levels keep the expected value exactly representable
  Tensor s = Tensor::full({1, 5, 5}, 0.25);
  Tensor g = Tensor::full({1, 5, 5}, 0.75);
  RegionConfig cfg{5, 5};
  CHECK(region_ssd(s, g, cfg).item() == 0.25);
}

TEST_CASE("region loss rejects impossible window geometry") {
  Tensor s = Tensor::zeros({1, 8, 8});
  CHECK_THROWS_AS(region_ssd(s, s, RegionConfig{9, 1}), ConfigError);
  CHECK_THROWS_AS(region_ssd(s, s, RegionConfig{4, 5}), ConfigError);
  CHECK_THROWS_AS(region_ssd(s, s, RegionConfig{4, 0}), ConfigError);
}

TEST_CASE("region gradient matches central differences") {
  Rng rng(33);
  Tensor g = rand_tensor(rng, {1, 8, 8}, 0, 1);
  Tensor s = rand_tensor(rng, {1, 8, 8}, 0, 1);
  s.set_requires_grad(true);
  RegionConfig cfg{4, 2};
  backward(region_ssd(s, g, cfg));
  auto eval = [&] {
    NoGradGuard ng;
    return region_ssd(s, g, cfg).item();
  };
  for (int64_t i = 0; i < 64; i += 7) {
    double fd =
        central_diff(eval, &s.value_mut()[static_cast<size_t>(i)], 1e-6);
    CHECK(rel_err(s.grad()[static_cast<size_t>(i)], fd) < 1e-5);
  }
}

TEST_CASE("object loss hand case, miss, and perfect match") {
  Tensor g = Tensor::from({1, 1, 0, 0}, {1, 2, 2});
  Tensor s = Tensor::from({1, 0.5, 0.5, 0}, {1, 2, 2});
  SoftF f = object_fmeasure_loss(s, g);
  CHECK(std::fabs(f.precision.item() - 0.75) < 1e-6);
  CHECK(std::fabs(f.recall.item() - 0.75) < 1e-6);
  CHECK(std::fabs(f.f_value.item() - 0.75) < 1e-6);
  CHECK(std::fabs(f.loss.item() - 0.25) < 1e-5);

  Tensor miss = Tensor::from({0, 0, 1, 1}, {1, 2, 2});
  CHECK(std::fabs(object_fmeasure_loss(miss, g).loss.item() - 1.0) <= 1e-9);

  // binary self-match with one hundred foreground pixels
  Tensor big = Tensor::zeros({1, 16, 16});
  for (int64_t i = 0; i < 100; ++i)
    big.value_mut()[static_cast<size_t>(i * 2)] = 1.0;
  SoftF perfect = object_fmeasure_loss(big, big);
  CHECK(perfect.loss.item() >= 0.0);
  CHECK(perfect.loss.item() <= 1e-8);
}

TEST_CASE("soft f stays between precision and recall") {
  Rng rng(41);
  for (int it = 0; it < 20; ++it) {
    Tensor g = noise_mask(rng, 8, 8);
    Tensor s = rand_tensor(rng, {1, 8, 8}, 0, 1);
    SoftF f = object_fmeasure_loss(s, g);
    double p = f.precision.item();
    double r = f.recall.item();
    double fv = f.f_value.item();
    CHECK(fv >= std::min(p, r) - 1e-9);
    CHECK(fv <= std::max(p, r) + 1e-9);
    CHECK(f.loss.item() >= 0.0);
    CHECK(f.loss.item() <= 1.0);
  }
}

TEST_CASE("object gradient matches central differences") {
  Rng rng(42);
  Tensor g = noise_mask(rng, 6, 6);
  Tensor s = rand_tensor(rng, {1, 6, 6}, 0.05, 0.95);
  s.set_requires_grad(true);
  backward(object_fmeasure_loss(s, g).loss);
  auto eval = [&] {
    NoGradGuard ng;
    return object_fmeasure_loss(s, g).loss.item();
  };
  for (int64_t i = 0; i < 36; i += 5) {
    double fd =
        central_diff(eval, &s.value_mut()[static_cast<size_t>(i)], 1e-6);
    CHECK(rel_err(s.grad()[static_cast<size_t>(i)], fd) < 1e-5);
  }
}

TEST_CASE("combined loss is the exact sum of its parts") {
  Rng rng(51);
  LossConfig cfg;
  for (int it = 0; it < 5; ++it) {
    Tensor g = noise_mask(rng, 16, 16);
    Tensor s = rand_tensor(rng, {1, 16, 16}, 0.02, 0.98);
    LossBreakdown b = combined_loss(s, g, cfg);
    CHECK(b.total.item() == (b.pixel.item() + b.region.item()) +
                                b.object.item());
    CHECK(b.pixel.item() >= 0.0);
    CHECK(b.region.item() >= 0.0);
    CHECK(b.object.item() >= 0.0);
    REQUIRE(b.per_level.size() == 1);
    CHECK(b.per_level[0].level == 1);
    CHECK(b.final.item() == b.total.item());
  }
}

TEST_CASE("disabled loss components contribute exact zeros") {
  Rng rng(52);
  Tensor g = noise_mask(rng, 16, 16);
  Tensor s = rand_tensor(rng, {1, 16, 16}, 0.1, 0.9);
  LossConfig cfg;
  cfg.use_region = false;
  cfg.use_object = false;
  LossBreakdown b = combined_loss(s, g, cfg);
  CHECK(b.region.item() == 0.0);
  CHECK(b.object.item() == 0.0);
  CHECK(b.total.item() == b.pixel.item());
}

TEST_CASE("near-perfect prediction is dominated by the pixel term") {
  Rng rng(61);
  Tensor g = generate_sample(61, 0, 16).mask;
  Tensor s = Tensor::zeros({1, 16, 16});
  for (int64_t i = 0; i < 256; ++i)
    s.value_mut()[static_cast<size_t>(i)] =
        g.value()[static_cast<size_t>(i)] != 0.0 ? 1.0 - 1e-4 : 1e-4;
  LossBreakdown b = combined_loss(s, g, LossConfig{});
  CHECK(b.pixel.item() > 5e-5);
  CHECK(b.pixel.item() < 2e-4);
  CHECK(b.region.item() < 1e-6);
  // a sparse foreground inflates the soft-precision gap, so allow for it
  CHECK(b.object.item() < 5e-3);
}

TEST_CASE("combined loss insists on a binary truth map") {
  Rng rng(53);
  Tensor s = rand_tensor(rng, {1, 16, 16}, 0.1, 0.9);
  Tensor g = noise_mask(rng, 16, 16);
  g.value_mut()[5] = 0.25;
  CHECK_THROWS_AS(combined_loss(s, g, LossConfig{}), ContractError);
}

TEST_CASE("level weights halve and the fold follows declaration order") {
  Rng rng(71);
  Tensor g = noise_mask(rng, 16, 16);
  LossConfig cfg;

  Tensor s = rand_tensor(rng, {1, 16, 16}, 0.1, 0.9);
  LossBreakdown one = multi_level_loss({s}, g, cfg);
  LossBreakdown single = combined_loss(s, g, cfg);
  CHECK(one.final.item() == single.total.item());

  std::vector<Tensor> levels;
  for (int i = 0; i < 4; ++i)
    levels.push_back(rand_tensor(rng, {1, 16, 16}, 0.1, 0.9));
  LossBreakdown four = multi_level_loss(levels, g, cfg);
  REQUIRE(four.per_level.size() == 4);
  CHECK(four.per_level[0].weight == 1.0);
  CHECK(four.per_level[1].weight == 0.5);
  CHECK(four.per_level[2].weight == 0.25);
  CHECK(four.per_level[3].weight == 0.125);
  double want = four.per_level[0].total.item();
  for (size_t i = 1; i < 4; ++i)
    want += four.per_level[i].weight * four.per_level[i].total.item();
  CHECK(four.final.item() == want);

  // equal level totals put the final at 1.875x a single level
  LossBreakdown equal = multi_level_loss({s, s, s, s}, g, cfg);
  CHECK(std::fabs(equal.final.item() / single.total.item() - 1.875) < 1e-14);
}

TEST_CASE("adjacent levels pull gradients in an exact 2:1 ratio") {
  Rng rng(81);
  Tensor g = noise_mask(rng, 8, 8);
  Tensor base = rand_tensor(rng, {1, 8, 8}, 0.1, 0.9);
  Tensor s1 = Tensor::from(base.value(), {1, 8, 8});
  Tensor s2 = Tensor::from(base.value(), {1, 8, 8});
  s1.set_requires_grad(true);
  s2.set_requires_grad(true);
  LossBreakdown b = multi_level_loss({s1, s2}, g, LossConfig{});
  backward(b.final);
  const std::vector<double>& g1 = s1.grad();
  const std::vector<double>& g2 = s2.grad();
  int compared = 0;
  for (size_t i = 0; i < g1.size(); ++i) {
    if (g2[i] == 0.0) continue;
    CHECK(g1[i] == 2.0 * g2[i]);
    ++compared;
  }
  CHECK(compared > 32);
}

TEST_CASE("moving the prediction toward the truth lowers every term") {
  LossConfig cfg;
  for (int m = 0; m < 3; ++m) {
    Tensor g = generate_sample(91, m, 16).mask;
    double prev_pixel = 0.0, prev_region = 0.0, prev_object = 0.0;
    for (int k = 0; k <= 10; ++k) {
      Tensor s = blend_toward(g, k / 10.0);
      LossBreakdown b = combined_loss(s, g, cfg);
      if (k > 0) {
        CHECK(b.pixel.item() < prev_pixel);
        CHECK(b.region.item() < prev_region);
        CHECK(b.object.item() < prev_object);
      }
      prev_pixel = b.pixel.item();
      prev_region = b.region.item();
      prev_object = b.object.item();
    }
  }
}
