#include <algorithm>
#include <cmath>
#include <vector>

#include "classkit/decoder.hpp"
#include "classkit/errors.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;
using testutil::rand_tensor;
using testutil::same_bits;

TEST_CASE("zeroed gate halves the refined feature exactly") {
  Rng rng(3);
  FusionStage stage(4, FusionMode::ffm, rng);
  REQUIRE(stage.compress.has_value());
  REQUIRE(stage.gate.has_value());
  std::fill(stage.gate->weight.value_mut().begin(),
            stage.gate->weight.value_mut().end(), 0.0);

  Tensor f_l = rand_tensor(rng, {1, 4, 8, 8});
  Tensor f_h = rand_tensor(rng, {1, 4, 2, 2});
  Tensor d_prev = rand_tensor(rng, {1, 4, 4, 4});
  Tensor out = stage.forward(f_l, f_h, d_prev, false);
  CHECK(out.shape() == Shape{1, 4, 8, 8});

  // rebuild the ungated path with the stage's own filters
  Tensor h_up = bilinear_resize(f_h, 8, 8);
  Tensor d_up = bilinear_resize(d_prev, 8, 8);
  Tensor mixed = stage.compress->forward(concat_channels({f_l, h_up, d_up}));
  Tensor refined = stage.refine2.forward(stage.refine1.forward(mixed, false),
                                         false);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.value()[static_cast<size_t>(i)] ==
          0.5 * refined.value()[static_cast<size_t>(i)]);
}

TEST_CASE("zero inputs stay exactly zero through fusion") {
  Rng rng(4);
  FusionStage stage(4, FusionMode::ffm, rng);
  Tensor out = stage.forward(Tensor::zeros({1, 4, 8, 8}),
                             Tensor::zeros({1, 4, 2, 2}),
                             Tensor::zeros({1, 4, 4, 4}), false);
  for (double v : out.value()) CHECK(v == 0.0);
}

TEST_CASE("sum fusion skips compression and gating") {
  Rng rng(5);
  FusionStage stage(4, FusionMode::sum, rng);
  CHECK(!stage.compress.has_value());
  CHECK(!stage.gate.has_value());

  Tensor f_l = rand_tensor(rng, {2, 4, 6, 6});
  Tensor f_h = rand_tensor(rng, {2, 4, 2, 2});
  Tensor d_prev = rand_tensor(rng, {2, 4, 3, 3});
  Tensor out = stage.forward(f_l, f_h, d_prev, false);
  CHECK(out.shape() == Shape{2, 4, 6, 6});

  Tensor mixed = add(add(f_l, bilinear_resize(f_h, 6, 6)),
                     bilinear_resize(d_prev, 6, 6));
  Tensor refined = stage.refine2.forward(stage.refine1.forward(mixed, false),
                                         false);
  CHECK(same_bits(out, refined));
}

TEST_CASE("fusion rejects a previous stage at the wrong extent") {
  Rng rng(6);
  FusionStage stage(4, FusionMode::ffm, rng);
  Tensor f_l = rand_tensor(rng, {1, 4, 8, 8});
  Tensor f_h = rand_tensor(rng, {1, 4, 2, 2});
  CHECK_THROWS_AS(
      stage.forward(f_l, f_h, rand_tensor(rng, {1, 4, 8, 8}), false),
      ShapeError);
  CHECK_THROWS_AS(
      stage.forward(f_l, f_h, rand_tensor(rng, {1, 2, 4, 4}), false),
      ShapeError);
}

TEST_CASE("saliency head: zero filters give the half map") {
  Rng rng(7);
  SaliencyHead head(4, rng);
  std::fill(head.predict.weight.value_mut().begin(),
            head.predict.weight.value_mut().end(), 0.0);
  Tensor d = rand_tensor(rng, {2, 4, 4, 4});
  Tensor y = head.forward(d, 16, 16);
  CHECK(y.shape() == Shape{2, 1, 16, 16});
  for (double v : y.value()) CHECK(v == 0.5);
}

TEST_CASE("saliency head keeps values strictly inside the unit interval") {
  Rng rng(8);
  SaliencyHead head(4, rng);
  Tensor d = rand_tensor(rng, {1, 4, 4, 4}, -3, 3);
  Tensor y = head.forward(d, 8, 8);
  CHECK(y.shape() == Shape{1, 1, 8, 8});
  for (double v : y.value()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  // the target extent may match the feature but never undercut it
  CHECK(head.forward(d, 4, 4).shape() == Shape{1, 1, 4, 4});
  CHECK_THROWS_AS(head.forward(d, 2, 8), ShapeError);
}
