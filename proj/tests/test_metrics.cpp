#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "classkit/data.hpp"
#include "classkit/errors.hpp"
#include "classkit/metrics.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace classkit;
using testutil::noise_mask;
using testutil::rand_tensor;

TEST_CASE("mae: exact basics and oracle agreement") {
  Rng rng(7);
  Tensor g = noise_mask(rng, 16, 16);
  CHECK(mae(g, g) == 0.0);
  CHECK(mae(Tensor::full({1, 16, 16}, 0.5), g) == 0.5);

  for (int it = 0; it < 10; ++it) {
    Tensor s = rand_tensor(rng, {1, 16, 16}, 0, 1);
    Tensor gg = noise_mask(rng, 16, 16);
    CHECK(std::fabs(mae(s, gg) -
                    testutil::oracle_mae(s.value(), gg.value())) < 1e-12);
  }

  // complement symmetry on values whose complements are exact
  Tensor sq = Tensor::zeros({1, 16, 16});
  for (double& v : sq.value_mut())
    v = static_cast<double>(rng.uniform_int(0, 256)) / 256.0;
  Tensor sc = Tensor::zeros({1, 16, 16});
  Tensor gc = Tensor::zeros({1, 16, 16});
  for (int64_t i = 0; i < 256; ++i) {
    sc.value_mut()[static_cast<size_t>(i)] =
        1.0 - sq.value()[static_cast<size_t>(i)];
    gc.value_mut()[static_cast<size_t>(i)] =
        1.0 - g.value()[static_cast<size_t>(i)];
  }
  CHECK(mae(sq, g) == mae(sc, gc));
}

TEST_CASE("pr curve: perfect, empty, and oracle-checked predictions") {
  Rng rng(19);
  Tensor g = noise_mask(rng, 8, 8);
  PrCurve perfect = pr_curve(g, g);
  for (int t = 1; t <= 255; ++t) {
    CHECK(std::fabs(perfect.precision[static_cast<size_t>(t)] - 1.0) < 1e-6);
    CHECK(std::fabs(perfect.recall[static_cast<size_t>(t)] - 1.0) < 1e-6);
  }

  PrCurve none = pr_curve(Tensor::zeros({1, 8, 8}), g);
  for (int t = 1; t <= 255; ++t)
    CHECK(none.recall[static_cast<size_t>(t)] <= 1e-6);

  for (int it = 0; it < 10; ++it) {
    Tensor s = rand_tensor(rng, {1, 8, 8}, 0, 1);
    Tensor gg = noise_mask(rng, 8, 8);
    PrCurve got = pr_curve(s, gg);
    testutil::OraclePr want = testutil::oracle_pr(s.value(), gg.value());
    for (int t = 0; t < 256; ++t) {
      CHECK(std::fabs(got.precision[static_cast<size_t>(t)] -
                      want.precision[static_cast<size_t>(t)]) < 1e-12);
      CHECK(std::fabs(got.recall[static_cast<size_t>(t)] -
                      want.recall[static_cast<size_t>(t)]) < 1e-12);
    }
    for (int t = 1; t < 256; ++t)
      CHECK(got.recall[static_cast<size_t>(t)] <=
            got.recall[static_cast<size_t>(t - 1)]);
  }
}

TEST_CASE("f measure hand values") {
  CHECK(std::fabs(f_measure(0.75, 0.75) - 0.75) < 1e-6);
  CHECK(std::fabs(f_measure(1.0, 0.5) - 0.8125) < 1e-6);
  CHECK(f_measure(0.0, 0.0) == 0.0);
  CHECK(std::fabs(f_measure(0.5, 0.5) -
                  testutil::oracle_f(0.5, 0.5)) < 1e-15);
}

TEST_CASE("s measure: perfect masks score near one, uniform edges are exact") {
  for (int it = 0; it < 20; ++it) {
    Tensor g = generate_sample(123, it, 16).mask;
    CHECK(s_measure(g, g).s >= 0.99);
  }
  Tensor z = Tensor::zeros({1, 8, 8});
  Tensor o = Tensor::full({1, 8, 8}, 1.0);
  CHECK(s_measure(z, z).s == 1.0);
  CHECK(s_measure(o, z).s == 0.0);
  CHECK(s_measure(o, o).s == 1.0);
  CHECK(s_measure(z, o).s == 0.0);
  SMeasure edge = s_measure(Tensor::full({1, 8, 8}, 0.25), z);
  CHECK(edge.s == 0.75);
  CHECK(edge.s_region == edge.s);
  CHECK(edge.s_object == edge.s);
}

TEST_CASE("s measure matches the flat re-derivation") {
  Rng rng(37);
  for (int it = 0; it < 10; ++it) {
    Tensor s = rand_tensor(rng, {1, 16, 16}, 0, 1);
    Tensor g = noise_mask(rng, 16, 16);
    double want = testutil::oracle_s_measure(s.value(), g.value(), 16, 16);
    CHECK(std::fabs(s_measure(s, g).s - want) < 1e-9);
  }
  // coherent masks exercise off-center block splits
  for (int it = 0; it < 5; ++it) {
    Tensor g = generate_sample(39, it, 16).mask;
    Tensor s = rand_tensor(rng, {1, 16, 16}, 0, 1);
    double want = testutil::oracle_s_measure(s.value(), g.value(), 16, 16);
    CHECK(std::fabs(s_measure(s, g).s - want) < 1e-9);
  }
}

TEST_CASE("per-image summary keeps f max on top") {
  Rng rng(49);
  for (int it = 0; it < 5; ++it) {
    Tensor s = rand_tensor(rng, {1, 16, 16}, 0, 1);
    Tensor g = noise_mask(rng, 16, 16);
    ImageMetrics m = evaluate_image(s, g);
    CHECK(m.f_max >= m.f_mean);
    CHECK(m.f_max >= m.f_adaptive);
    CHECK(m.mae >= 0.0);
    CHECK(m.mae <= 1.0);
    CHECK(m.s_measure >= 0.0);
    CHECK(m.s_measure <= 1.0);
  }
}

TEST_CASE("dataset report averages per-image metrics in id order") {
  Rng rng(43);
  Tensor s1 = rand_tensor(rng, {1, 16, 16}, 0, 1);
  Tensor g1 = noise_mask(rng, 16, 16);
  Tensor s2 = rand_tensor(rng, {1, 16, 16}, 0, 1);
  Tensor g2 = noise_mask(rng, 16, 16);
  ImageMetrics m1 = evaluate_image(s1, g1);
  ImageMetrics m2 = evaluate_image(s2, g2);

  MetricsReport one = evaluate_dataset({{"a", s1, g1}});
  CHECK(one.images == 1);
  CHECK(one.f_max == m1.f_max);
  CHECK(one.mae == m1.mae);
  CHECK(one.s_measure == m1.s_measure);

  MetricsReport dup = evaluate_dataset({{"a", s1, g1}, {"b", s1, g1}});
  CHECK(dup.mae == m1.mae);
  CHECK(dup.f_max == m1.f_max);

  std::vector<std::pair<std::string, ImageMetrics>> rows;
  MetricsReport two = evaluate_dataset({{"a", s1, g1}, {"b", s2, g2}}, &rows);
  CHECK(two.images == 2);
  CHECK(std::fabs(two.f_max - 0.5 * (m1.f_max + m2.f_max)) < 1e-12);
  CHECK(std::fabs(two.mae - 0.5 * (m1.mae + m2.mae)) < 1e-12);
  CHECK(std::fabs(two.s_measure - 0.5 * (m1.s_measure + m2.s_measure)) <
        1e-12);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].first == "a");
  CHECK(rows[1].first == "b");

  MetricsReport swapped = evaluate_dataset({{"b", s2, g2}, {"a", s1, g1}});
  CHECK(std::memcmp(&two.f_max, &swapped.f_max, sizeof(double)) == 0);
  CHECK(std::memcmp(&two.mae, &swapped.mae, sizeof(double)) == 0);
  for (int t = 0; t < 256; t += 51)
    CHECK(two.curve.precision[static_cast<size_t>(t)] ==
          swapped.curve.precision[static_cast<size_t>(t)]);
}

TEST_CASE("dataset evaluation names the offending pair") {
  std::vector<EvalPair> bad = {
      {"x", Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 9})}};
  bool threw = false;
  try {
    evaluate_dataset(bad);
  } catch (const ShapeError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("pair 'x'") != std::string::npos);
  }
  CHECK(threw);
  CHECK_THROWS_AS(evaluate_dataset({}), ContractError);
}

TEST_CASE("metric csv files carry one row per image plus summary") {
  Rng rng(59);
  Tensor s = rand_tensor(rng, {1, 8, 8}, 0, 1);
  Tensor g = noise_mask(rng, 8, 8);
  std::vector<std::pair<std::string, ImageMetrics>> rows;
  MetricsReport rep = evaluate_dataset({{"a", s, g}, {"b", s, g}}, &rows);

  std::string dir = testutil::scratch_dir("metrics_csv");
  write_metrics_csv(dir + "/m.csv", rows, rep);
  std::string m = testutil::slurp(dir + "/m.csv");
  CHECK(testutil::count_lines(m) == 4);
  CHECK(m.find("id,f_max,f_mean,f_adaptive,mae,s_measure,s_region,s_object") ==
        0);
  CHECK(m.find("summary,") != std::string::npos);

  write_pr_csv(dir + "/pr.csv", rep.curve);
  std::string pr = testutil::slurp(dir + "/pr.csv");
  CHECK(testutil::count_lines(pr) == 257);
  CHECK(pr.find("threshold,precision,recall") == 0);
}
