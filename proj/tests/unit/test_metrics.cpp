#include <doctest.h>

#include "../support/support.hpp"

#include "affclip/errors.hpp"
#include "affclip/metrics.hpp"

#include <algorithm>
#include <random>

using namespace affclip;

TEST_SUITE("metrics") {
  TEST_CASE("metrics agree with the loop oracles") {
    Rng rng(41);
    for (int i = 0; i < 200; ++i) {
      const Index h = 1 + static_cast<Index>(rng.below(12)), w = 1 + static_cast<Index>(rng.below(12));
      const EvalMap m = testing::random_map(rng, h, w, 0.0, 2.0);
      const EvalMap g = testing::random_map(rng, h, w, 0.0, 1.0);
      const EvalMap z = testing::random_map(rng, h, w, -4.0, 4.0);
      const auto om = testing::to_oracle(m), og = testing::to_oracle(g), oz = testing::to_oracle(z);
      CHECK(std::abs(kld(m, g) - oracle::kld(om, og, kDefaultEpsilon)) < 1e-10);
      CHECK(std::abs(sim(m, g) - oracle::sim(om, og)) < 1e-12);
      if (h * w > 1) CHECK(std::abs(nss(z, g) - oracle::nss(oz, og)) < 1e-10);
    }
  }

  TEST_CASE("kld of uniform against one-hot is about log n") {
    EvalMap u = EvalMap::Constant(2, 2, 0.25), hot = EvalMap::Zero(2, 2);
    hot(1, 0) = 1.0;
    CHECK(kld(u, hot) == doctest::Approx(std::log(4.0)).epsilon(1e-10));
  }

  TEST_CASE("kld of a map with itself follows the regularized formula") {
    Rng rng(42);
    for (Index n : {1, 2, 3, 8}) {
      const EvalMap x = testing::random_map(rng, n, n, 0.1, 1.0);
      // log(eps + x/(eps + x)) ~ eps - eps/x per pixel, so the sum is ~ (1 - n^2) eps.
      CHECK(kld(x, x) == doctest::Approx((1.0 - static_cast<double>(n * n)) * kDefaultEpsilon).epsilon(1e-3));
    }
    EvalMap one(1, 1);
    one << 3.0;
    CHECK(std::abs(kld(one, one)) <= 10 * kDefaultEpsilon);
  }

  TEST_CASE("sim identities") {
    Rng rng(43);
    const EvalMap x = testing::random_map(rng, 6, 5, 0.0, 1.0);
    const EvalMap y = testing::random_map(rng, 6, 5, 0.0, 1.0);
    CHECK(sim(x, x) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(sim(x, y) == sim(y, x));
    CHECK(sim(x, y) >= 0.0);
    CHECK(sim(x, y) <= 1.0);
    EvalMap a = EvalMap::Zero(2, 2), b = EvalMap::Zero(2, 2);
    a(0, 0) = 1;
    b(1, 1) = 1;
    CHECK(sim(a, b) == 0.0);
  }

  TEST_CASE("nss cases") {
    EvalMap m(1, 2), g(1, 2);
    m << 0, 1;
    g << 0, 1;
    CHECK(nss(m, g) == 1.0);
    const NssResult flat = nss_checked(EvalMap::Constant(3, 3, 0.7), EvalMap::Ones(3, 3));
    CHECK(flat.value == 0.0);
    CHECK(flat.degenerate);
    Rng rng(44);
    for (int i = 0; i < 100; ++i) {
      const EvalMap z = testing::random_map(rng, 8, 8, -1, 1);
      const EvalMap w = testing::random_map(rng, 8, 8, 0, 1);
      const double a = rng.uniform(1e-3, 1e3), b = rng.uniform(-1e3, 1e3);
      CHECK(nss((a * z + b).eval(), w) == doctest::Approx(nss(z, w)).epsilon(1e-9));
    }
  }

  TEST_CASE("degenerate and malformed inputs") {
    CHECK_THROWS_AS(kld(EvalMap::Zero(2, 2), EvalMap::Ones(2, 2)), DegenerateInput);
    CHECK_THROWS_AS(sim(EvalMap::Ones(2, 2), EvalMap::Zero(2, 2)), DegenerateInput);
    CHECK_THROWS_AS(kld(EvalMap::Ones(2, 2), EvalMap::Ones(3, 2)), InvalidInput);
    EvalMap neg = EvalMap::Ones(2, 2);
    neg(0, 0) = -1;
    CHECK_THROWS_AS(normalize_mass(neg), DegenerateInput);
    CHECK_THROWS_AS(nss(EvalMap::Ones(2, 2), EvalMap::Zero(2, 2)), DegenerateInput);
    CHECK(is_normalized(normalize_mass(EvalMap::Constant(3, 3, 2.0))));
  }

  TEST_CASE("post-processing") {
    EvalMap logits(2, 2);
    logits << -1, 0, 1, 2;
    bool flat = true;
    const EvalMap p = postprocess_prediction(logits, 2, 2, PostprocessOptions{}, &flat);
    CHECK_FALSE(flat);
    CHECK(p.minCoeff() == 0.0);
    CHECK(p.maxCoeff() == 1.0);
    const EvalMap c = postprocess_prediction(EvalMap::Constant(4, 4, 3.0), 8, 8, PostprocessOptions{}, &flat);
    CHECK(flat);
    CHECK((c == 1.0).all());
    const EvalMap raw = postprocess_prediction(logits, 2, 2, PostprocessOptions{false, false});
    CHECK((raw == logits).all());
  }

  TEST_CASE("report aggregates are order independent and re-checked on load") {
    MetricReport a, b;
    std::vector<SampleMetrics> samples = {{"c", 1.0, 0.2, 0.5, false}, {"a", 2.0, 0.4, 1.5, true}, {"b", 0.5, 0.3, -0.1, false}};
    a.per_sample = samples;
    std::reverse(samples.begin(), samples.end());
    b.per_sample = samples;
    a.finalize();
    b.finalize();
    CHECK(a.dump() == b.dump());
    CHECK(a.kld == doctest::Approx(3.5 / 3));
    CHECK(a.degenerate_count == 1);
    CHECK(MetricReport::from_json(a.to_json()).dump() == a.dump());
    auto j = a.to_json();
    j["aggregate"]["kld"] = 9.0;
    CHECK_THROWS_AS(MetricReport::from_json(j), InvalidInput);
  }
}
