#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "classkit/data.hpp"
#include "classkit/errors.hpp"
#include "classkit/losses.hpp"
#include "classkit/model.hpp"
#include "classkit/trainer.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;
using testutil::rand_tensor;
using testutil::same_bits;

namespace {

ModelConfig small_config(uint64_t seed) {
  ModelConfig cfg;
  cfg.channels = 8;
  cfg.input_h = 32;
  cfg.input_w = 32;
  cfg.init_seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("same seed builds bit-identical parameters") {
  ClassMini a(small_config(5));
  ClassMini b(small_config(5));
  std::vector<NamedTensor> pa = a.parameters();
  std::vector<NamedTensor> pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(same_bits(pa[i].tensor, pb[i].tensor));
  }
  ClassMini c(small_config(6));
  bool any_differ = false;
  std::vector<NamedTensor> pc = c.parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    any_differ = any_differ || !same_bits(pa[i].tensor, pc[i].tensor);
  CHECK(any_differ);
}

TEST_CASE("parameter count follows the layer arithmetic") {
  ModelConfig cfg;  // sixteen channels
  ClassMini m(cfg);
  const int64_t c = cfg.channels;
  auto conv_bn = [](int64_t cin, int64_t cout, int64_t k) {
    return cout * cin * k * k + 2 * cout;
  };
  auto enc_block = [&](int64_t cin) {
    return conv_bn(cin, c, 3) + conv_bn(c, c, 3);
  };
  int64_t encoder = enc_block(3) + 3 * enc_block(c);
  int64_t bridge = conv_bn(c, c, 1) + conv_bn(c, c, 3);
  int64_t one_cla = 3 * (c * c + c) + 1 + 1;
  int64_t one_ffm = (3 * c * c + c) + 2 * conv_bn(c, c, 3) + (c * c + c);
  int64_t heads = 4 * (c + 1);
  int64_t want = encoder + bridge + 3 * one_cla + 3 * one_ffm + heads;

  int64_t got = 0;
  for (const NamedTensor& p : m.parameters()) got += p.tensor.numel();
  CHECK(got == want);
  CHECK(got == 39146);
}

TEST_CASE("fresh attention leaves the forward pass unchanged") {
  ModelConfig with = small_config(3);
  ModelConfig without = with;
  without.use_position_attention = false;
  without.use_channel_attention = false;
  ClassMini a(with);
  ClassMini b(without);

  // align the shared filters; the attention-free build draws different values
  std::map<std::string, Tensor> lut;
  for (const NamedTensor& p : a.parameters()) lut.emplace(p.name, p.tensor);
  for (NamedTensor& p : b.parameters()) {
    REQUIRE(lut.count(p.name) == 1);
    p.tensor.value_mut() = lut.at(p.name).value();
  }

  Rng rng(55);
  Tensor x = rand_tensor(rng, {2, 3, 32, 32}, 0, 1);
  ClassMini::ForwardOut ya = a.forward(x, false);
  ClassMini::ForwardOut yb = b.forward(x, false);
  REQUIRE(ya.preds.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(same_bits(ya.preds[i], yb.preds[i]));
}

TEST_CASE("forward emits four in-range maps at the input extent") {
  ClassMini model(small_config(4));
  Rng rng(56);
  Tensor x = rand_tensor(rng, {2, 3, 32, 32}, 0, 1);
  ClassMini::ForwardOut out = model.forward(x, true);
  REQUIRE(out.preds.size() == 4);
  for (const Tensor& p : out.preds) {
    CHECK(p.shape() == Shape{2, 1, 32, 32});
    for (double v : p.value()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  }
  CHECK(out.maps.empty());

  ClassMini::ForwardOut with_maps = model.forward(x, false, true);
  REQUIRE(with_maps.maps.size() == 3);
  for (const std::vector<AttentionMaps>& level : with_maps.maps) {
    REQUIRE(level.size() == 2);
    CHECK(level[0].position_map.defined());
    CHECK(level[0].channel_map.defined());
  }

  // evaluation passes are repeatable and leave the buffers alone
  ClassMini::ForwardOut e1 = model.forward(x, false);
  std::vector<NamedTensor> before = model.buffers();
  std::vector<std::vector<double>> frozen;
  for (const NamedTensor& b : before) frozen.push_back(b.tensor.value());
  ClassMini::ForwardOut e2 = model.forward(x, false);
  for (int i = 0; i < 4; ++i) CHECK(same_bits(e1.preds[i], e2.preds[i]));
  std::vector<NamedTensor> after = model.buffers();
  for (size_t i = 0; i < after.size(); ++i)
    CHECK(after[i].tensor.value() == frozen[i]);

  // a training pass moves at least one running statistic
  model.forward(x, true);
  bool moved = false;
  std::vector<NamedTensor> trained = model.buffers();
  for (size_t i = 0; i < trained.size(); ++i)
    moved = moved || trained[i].tensor.value() != frozen[i];
  CHECK(moved);
}

TEST_CASE("the first map comes from the last fusion stage's head") {
  ClassMini model(small_config(7));
  for (NamedTensor& p : model.parameters()) {
    if (p.name == "head2.weight" || p.name == "head2.bias")
      std::fill(p.tensor.value_mut().begin(), p.tensor.value_mut().end(), 0.0);
  }
  Rng rng(57);
  Tensor x = rand_tensor(rng, {1, 3, 32, 32}, 0, 1);
  ClassMini::ForwardOut out = model.forward(x, false);
  for (double v : out.preds[0].value()) CHECK(v == 0.5);
  bool flat = true;
  for (double v : out.preds[1].value()) flat = flat && v == 0.5;
  CHECK(!flat);
}

TEST_CASE("off-grid inputs are accepted or rejected by the 16-pixel rule") {
  ClassMini model(small_config(8));
  Rng rng(58);
  // a different multiple of 16 than the configured extent still runs
  Tensor tall = rand_tensor(rng, {1, 3, 48, 16}, 0, 1);
  ClassMini::ForwardOut out = model.forward(tall, false);
  CHECK(out.preds[0].shape() == Shape{1, 1, 48, 16});

  CHECK_THROWS_AS(model.forward(rand_tensor(rng, {1, 3, 20, 32}, 0, 1), false),
                  ShapeError);
  CHECK_THROWS_AS(model.forward(rand_tensor(rng, {1, 1, 32, 32}, 0, 1), false),
                  ShapeError);
  CHECK_THROWS_AS(model.forward(rand_tensor(rng, {3, 32, 32}, 0, 1), false),
                  ShapeError);
}

TEST_CASE("config validation names the offending field") {
  ModelConfig bad = small_config(1);
  bad.channels = 7;
  CHECK_THROWS_AS(ClassMini{bad}, ConfigError);
  bad.channels = 2;
  CHECK_THROWS_AS(ClassMini{bad}, ConfigError);
  bad = small_config(1);
  bad.input_h = 20;
  CHECK_THROWS_AS(ClassMini{bad}, ConfigError);
  bad = small_config(1);
  bad.norm_epsilon = 0.0;
  CHECK_THROWS_AS(ClassMini{bad}, ConfigError);
  bad = small_config(1);
  bad.channels = 7;
  bool threw = false;
  try {
    bad.validate();
  } catch (const ConfigError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("channels") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("eval-mode samples in a batch do not bleed into each other") {
  ClassMini model(small_config(9));
  Rng rng(59);
  Tensor pair = rand_tensor(rng, {2, 3, 32, 32}, 0, 1);
  Tensor joint = model.forward(pair, false).preds[0];
  for (int64_t b = 0; b < 2; ++b) {
    Tensor alone = stack_batch({slice_batch(pair, b)});
    Tensor solo = model.forward(alone, false).preds[0];
    CHECK(same_bits(slice_batch(joint, b), slice_batch(solo, 0)));
  }
}

TEST_CASE("checkpoint roundtrip restores parameters, buffers, and outputs") {
  std::string dir = testutil::scratch_dir("ckpt");
  ClassMini a(small_config(11));
  Rng rng(60);
  Tensor x = rand_tensor(rng, {2, 3, 32, 32}, 0, 1);
  a.forward(x, true);  // move the running stats off their init values
  save_checkpoint(a, dir + "/m.clsk");

  ClassMini b(small_config(11));
  load_checkpoint(b, dir + "/m.clsk");
  std::vector<NamedTensor> pa = a.parameters(), pb = b.parameters();
  for (size_t i = 0; i < pa.size(); ++i)
    CHECK(same_bits(pa[i].tensor, pb[i].tensor));
  std::vector<NamedTensor> ba = a.buffers(), bb = b.buffers();
  REQUIRE(ba.size() == bb.size());
  for (size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i].name == bb[i].name);
    CHECK(same_bits(ba[i].tensor, bb[i].tensor));
  }
  ClassMini::ForwardOut ya = a.forward(x, false);
  ClassMini::ForwardOut yb = b.forward(x, false);
  for (int i = 0; i < 4; ++i) CHECK(same_bits(ya.preds[i], yb.preds[i]));

  CHECK(peek_config(dir + "/m.clsk") == a.config);
}

TEST_CASE("checkpoint loader rejects foreign and mismatched files") {
  std::string dir = testutil::scratch_dir("ckpt_bad");
  ClassMini model(small_config(12));

  {
    std::ofstream out(dir + "/garbage.clsk", std::ios::binary);
    out << "NOTACHECKPOINTFILE_PADDING________";
  }
  CHECK_THROWS_AS(load_checkpoint(model, dir + "/garbage.clsk"), ConfigError);

  {
    std::ofstream out(dir + "/short.clsk", std::ios::binary);
    out << "CL";
  }
  CHECK_THROWS_AS(load_checkpoint(model, dir + "/short.clsk"), IoError);

  save_checkpoint(model, dir + "/good.clsk");
  std::string bytes = testutil::slurp(dir + "/good.clsk");
  bytes[4] = static_cast<char>(bytes[4] ^ 0x40);  // corrupt the version word
  {
    std::ofstream out(dir + "/version.clsk", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(model, dir + "/version.clsk"), ConfigError);

  ClassMini other(small_config(13));  // differing config echo
  CHECK_THROWS_AS(load_checkpoint(other, dir + "/good.clsk"), ConfigError);

  ModelConfig wide = small_config(12);
  wide.channels = 16;
  wide.input_h = wide.input_w = 32;
  ClassMini big(wide);
  CHECK_THROWS_AS(load_checkpoint(big, dir + "/good.clsk"), ConfigError);
}

TEST_CASE("whole-model gradients agree with finite differences") {
  ModelConfig cfg = small_config(2);
  cfg.channels = 4;
  ClassMini model(cfg);
  Rng rng(66);
  Tensor x = rand_tensor(rng, {1, 3, 32, 32}, 0, 1);
  Tensor g = generate_sample(4, 0, 32).mask;
  LossConfig lc;

  auto run = [&] {
    ClassMini::ForwardOut out = model.forward(x, true);
    std::vector<Tensor> levels;
    for (const Tensor& p : out.preds) levels.push_back(slice_batch(p, 0));
    return multi_level_loss(levels, g, lc).final;
  };
  model.zero_grads();
  backward(run());
  auto eval = [&] {
    NoGradGuard ng;
    return run().item();
  };

  std::vector<NamedTensor> params = model.parameters();
  Rng pick(77);
  int checked = 0;
  for (int k = 0; k < 24; ++k) {
    NamedTensor& p = params[static_cast<size_t>(
        pick.uniform_int(0, static_cast<int64_t>(params.size()) - 1))];
    size_t i = static_cast<size_t>(pick.uniform_int(0, p.tensor.numel() - 1));
    testutil::FdProbe fd =
        testutil::guarded_diff(eval, &p.tensor.value_mut()[i], 1e-5);
    if (!fd.valid) continue;
    double got = p.tensor.has_grad() ? p.tensor.grad()[i] : 0.0;
    CHECK(testutil::rel_err(got, fd.value) < 1e-4);
    ++checked;
  }
  CHECK(checked >= 12);
}
