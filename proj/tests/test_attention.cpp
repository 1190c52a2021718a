#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "classkit/attention.hpp"
#include "classkit/errors.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;
using testutil::rand_tensor;
using testutil::same_bits;

TEST_CASE("fresh attention modules are exact identities") {
  Rng rng(1);
  PositionAttention pa(4, rng);
  CHECK(pa.alpha.value()[0] == 0.0);
  ChannelAttention ca;
  CHECK(ca.beta.value()[0] == 0.0);

  Tensor fh = rand_tensor(rng, {2, 4, 2, 2});
  Tensor fl = rand_tensor(rng, {2, 4, 4, 4});
  CHECK(same_bits(pa.forward(fh, fl), fh));
  CHECK(same_bits(ca.forward(fh, fl), fl));

  CrossLevelAttention cla(4, true, true, rng);
  CrossLevelAttention::Out out = cla.forward(fh, fl);
  CHECK(same_bits(out.f_h, fh));
  CHECK(same_bits(out.f_l, fl));
}

TEST_CASE("position attention hand case with identity projections") {
  Rng rng(2);
  PositionAttention pa(1, rng);
  pa.query.weight.value_mut()[0] = 1.0;
  pa.key.weight.value_mut()[0] = 1.0;
  pa.value.weight.value_mut()[0] = 1.0;
  pa.alpha.value_mut()[0] = 1.0;

  Tensor fh = Tensor::from({2.0}, {1, 1, 1, 1});
  Tensor fl = Tensor::from({1.0, 3.0}, {1, 1, 1, 2});
  std::vector<Tensor> maps;
  Tensor out = pa.forward(fh, fl, &maps);

  REQUIRE(maps.size() == 1);
  REQUIRE(maps[0].shape() == Shape{1, 2});
  double lo = 1.0 / (1.0 + std::exp(4.0));
  CHECK(std::fabs(maps[0].value()[0] - lo) < 1e-12);
  CHECK(std::fabs(maps[0].value()[0] - 0.017986) < 1e-6);
  CHECK(std::fabs(maps[0].value()[1] - 0.982014) < 1e-6);
  CHECK(std::fabs(out.item() - 4.964028) < 1e-5);
}

TEST_CASE("channel attention with one channel blends the exact constant") {
  ChannelAttention ca;
  ca.beta.value_mut()[0] = 0.7;
  Tensor fh = Tensor::from({4.0}, {1, 1, 1, 1});
  Tensor fl = Tensor::from({1.0, 2.0, 3.0, 4.0}, {1, 1, 2, 2});
  std::vector<Tensor> maps;
  Tensor out = ca.forward(fh, fl, &maps);

  REQUIRE(maps.size() == 1);
  CHECK(maps[0].value()[0] == 1.0);
  for (int64_t i = 0; i < 4; ++i)
    CHECK(out.value()[static_cast<size_t>(i)] ==
          doctest::Approx(0.7 * 4.0 + fl.value()[static_cast<size_t>(i)]));
}

TEST_CASE("position attention ignores spatial order of the fine input") {
  Rng rng(9);
  PositionAttention pa(6, rng);
  pa.alpha.value_mut()[0] = 0.8;
  Tensor fh = rand_tensor(rng, {1, 6, 2, 3});
  Tensor fl = rand_tensor(rng, {1, 6, 4, 5});
  Tensor base = pa.forward(fh, fl);

  std::vector<int64_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t i = 19; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)],
              perm[static_cast<size_t>(rng.uniform_int(0, i))]);
  Tensor flp = Tensor::zeros({1, 6, 4, 5});
  for (int64_t c = 0; c < 6; ++c)
    for (int64_t p = 0; p < 20; ++p)
      flp.value_mut()[static_cast<size_t>(c * 20 + perm[static_cast<size_t>(p)])] =
          fl.value()[static_cast<size_t>(c * 20 + p)];

  CHECK(same_bits(pa.forward(fh, flp), base));
}

TEST_CASE("channel attention ignores channel order of the coarse input") {
  Rng rng(10);
  ChannelAttention ca;
  ca.beta.value_mut()[0] = 0.6;
  Tensor fh = rand_tensor(rng, {1, 5, 2, 2});
  Tensor fl = rand_tensor(rng, {1, 5, 4, 4});
  Tensor base = ca.forward(fh, fl);

  std::vector<int64_t> perm = {3, 0, 4, 2, 1};
  Tensor fhp = Tensor::zeros({1, 5, 2, 2});
  for (int64_t c = 0; c < 5; ++c)
    for (int64_t p = 0; p < 4; ++p)
      fhp.value_mut()[static_cast<size_t>(perm[static_cast<size_t>(c)] * 4 + p)] =
          fh.value()[static_cast<size_t>(c * 4 + p)];

  CHECK(same_bits(ca.forward(fhp, fl), base));
}

TEST_CASE("attention maps are row-stochastic on random shapes") {
  Rng rng(12);
  for (int it = 0; it < 10; ++it) {
    int64_t c = 2 * rng.uniform_int(1, 4);
    int64_t hh = rng.uniform_int(1, 3);
    int64_t wh = rng.uniform_int(1, 3);
    CrossLevelAttention cla(c, true, true, rng);
    Tensor fh = rand_tensor(rng, {2, c, hh, wh}, -2, 2);
    Tensor fl = rand_tensor(rng, {2, c, hh * 2, wh * 2}, -2, 2);
    std::vector<AttentionMaps> maps;
    cla.forward(fh, fl, &maps);
    REQUIRE(maps.size() == 2);
    for (const AttentionMaps& m : maps) {
      REQUIRE(m.position_map.defined());
      REQUIRE(m.channel_map.defined());
      for (const Tensor* t : {&m.position_map, &m.channel_map}) {
        const Shape& s = t->shape();
        REQUIRE(s.size() == 2);
        for (int64_t r = 0; r < s[0]; ++r) {
          double row = 0.0;
          for (int64_t cc = 0; cc < s[1]; ++cc) {
            double v = t->value()[static_cast<size_t>(r * s[1] + cc)];
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
            row += v;
          }
          CHECK(std::fabs(row - 1.0) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("disabled attention halves pass their input through untouched") {
  Rng rng(14);
  Tensor fh = rand_tensor(rng, {1, 4, 2, 2});
  Tensor fl = rand_tensor(rng, {1, 4, 4, 4});

  CrossLevelAttention pos_only(4, true, false, rng);
  CHECK(pos_only.position.has_value());
  CHECK(!pos_only.channel.has_value());
  CHECK(same_bits(pos_only.forward(fh, fl).f_l, fl));

  CrossLevelAttention chan_only(4, false, true, rng);
  CHECK(same_bits(chan_only.forward(fh, fl).f_h, fh));

  std::vector<AttentionMaps> maps;
  pos_only.forward(fh, fl, &maps);
  REQUIRE(maps.size() == 1);
  CHECK(maps[0].position_map.defined());
  CHECK(!maps[0].channel_map.defined());
}

TEST_CASE("attention rejects mismatched pairs") {
  Rng rng(15);
  PositionAttention pa(4, rng);
  Tensor fh = rand_tensor(rng, {1, 4, 2, 2});
  CHECK_THROWS_AS(pa.forward(fh, rand_tensor(rng, {1, 6, 4, 4})), ShapeError);
  CHECK_THROWS_AS(pa.forward(fh, rand_tensor(rng, {2, 4, 4, 4})), ShapeError);
  CHECK_THROWS_AS(pa.forward(fh, rand_tensor(rng, {1, 4, 1, 4})), ShapeError);
}
