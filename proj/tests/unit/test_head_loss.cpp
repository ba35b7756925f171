#include <doctest.h>

#include "../support/support.hpp"

#include "affclip/head_loss.hpp"

using namespace affclip;

namespace {

MaskGT random_mask(Rng& rng, Index b, Index h, Index w) {
  MaskGT gt;
  gt.height = h;
  gt.width = w;
  gt.values.resize(b, h * w);
  for (Index i = 0; i < gt.values.size(); ++i) gt.values.data()[i] = static_cast<std::uint8_t>(rng.below(2));
  return gt;
}

}  // namespace

TEST_SUITE("head_loss") {
  TEST_CASE("activation equals explicit per-pixel dot products") {
    Rng rng(31);
    const FeatureBatch<double> dense = testing::random_batch(rng, 3, 5, 7, 6);
    const RowMatrix<double> q = rng.uniform_matrix<double>(3, 6, 1.0);
    const ActivationMap<double> act = compute_activation(q, dense, 40, 56);
    CHECK(act.logits.rows() == 3);
    CHECK(act.logits.cols() == 40 * 56);
    const auto pix = testing::to_oracle(dense);
    double worst = 0.0;
    for (Index b = 0; b < 3; ++b) {
      const std::vector<double> qv(q.row(b).data(), q.row(b).data() + 6);
      const oracle::Map ref = oracle::activation(qv, pix[static_cast<std::size_t>(b)], 40, 56);
      for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 56; ++x) worst = std::max(worst, std::abs(act.logits(b, y * 56 + x) - ref(y, x)));
      for (Index y = 0; y < 5; ++y)
        for (Index x = 0; x < 7; ++x) {
          double d = 0.0;
          for (Index c = 0; c < 6; ++c) d += q(b, c) * dense.at(b, y, x, c);
          worst = std::max(worst, std::abs(act.stride8_logits(b, y * 7 + x) - d));
        }
    }
    CHECK(worst < 1e-12);
  }

  TEST_CASE("normalization and scale options") {
    Rng rng(32);
    const FeatureBatch<double> dense = testing::random_batch(rng, 1, 2, 2, 4);
    const RowMatrix<double> q = rng.uniform_matrix<double>(1, 4, 1.0);
    HeadOptions opt;
    opt.normalize_text = opt.normalize_pixels = true;
    opt.scale = 10.0;
    const ActivationMap<double> act = compute_activation(q, dense, 2, 2, opt);
    for (Index p = 0; p < 4; ++p) {
      const double cosine = dense.data.row(p).dot(q.row(0)) / (dense.data.row(p).norm() * q.row(0).norm());
      CHECK(act.logits(0, p) == doctest::Approx(10.0 * cosine).epsilon(1e-12));
      CHECK(std::abs(act.logits(0, p)) <= 10.0 + 1e-12);
    }
  }

  TEST_CASE("head backward matches central differences") {
    Rng rng(33);
    for (bool normalize : {false, true}) {
      HeadOptions opt;
      opt.normalize_pixels = normalize;
      FeatureBatch<double> dense = testing::random_batch(rng, 2, 3, 3, 4);
      const RowMatrix<double> q = rng.uniform_matrix<double>(2, 4, 1.0);
      const RowMatrix<double> r = rng.uniform_matrix<double>(2, 24 * 24, 1.0);
      HeadCache<double> cache;
      compute_activation(q, dense, 24, 24, opt, &cache);
      const FeatureBatch<double> g = activation_backward(upsample_backward(r, cache, opt.upsample), cache, opt);
      double worst = 0.0;
      for (Index i = 0; i < dense.data.size(); i += 3) {
        const double keep = dense.data.data()[i], h = 1e-6;
        dense.data.data()[i] = keep + h;
        const double up = (compute_activation(q, dense, 24, 24, opt).logits.array() * r.array()).sum();
        dense.data.data()[i] = keep - h;
        const double down = (compute_activation(q, dense, 24, 24, opt).logits.array() * r.array()).sum();
        dense.data.data()[i] = keep;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(numeric - g.data.data()[i]) / std::max(1e-6, std::abs(numeric)));
      }
      CHECK(worst < 1e-6);
    }
  }

  TEST_CASE("loss equals the definition and ln 2 at zero") {
    Rng rng(34);
    const MaskGT gt = random_mask(rng, 2, 4, 4);
    CHECK(contrastive_loss(RowMatrix<double>::Zero(2, 16).eval(), gt) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const RowMatrix<double> z = rng.uniform_matrix<double>(2, 16, 5.0);
    std::vector<double> zs(z.data(), z.data() + z.size());
    std::vector<int> ys;
    for (Index i = 0; i < gt.values.size(); ++i) ys.push_back(gt.values.data()[i]);
    CHECK(contrastive_loss(z, gt) == doctest::Approx(oracle::bce(zs, ys)).epsilon(1e-13));
  }

  TEST_CASE("loss gradient matches central differences") {
    Rng rng(35);
    for (int trial = 0; trial < 10; ++trial) {
      const MaskGT gt = random_mask(rng, 1, 4, 4);
      RowMatrix<double> z = rng.uniform_matrix<double>(1, 16, 6.0);
      RowMatrix<double> g;
      contrastive_loss(z, gt, &g);
      for (Index i = 0; i < 16; ++i) {
        const double keep = z(0, i), h = 1e-5;
        z(0, i) = keep + h;
        const double up = contrastive_loss(z, gt);
        z(0, i) = keep - h;
        const double down = contrastive_loss(z, gt);
        z(0, i) = keep;
        CHECK(g(0, i) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
      }
    }
  }

  TEST_CASE("loss is finite and exact for extreme logits") {
    MaskGT gt;
    gt.height = 1;
    gt.width = 4;
    gt.values.resize(1, 4);
    gt.values << 1, 0, 1, 0;
    RowMatrix<double> z(1, 4);
    z << 1e4, -1e4, -1e4, 1e4;
    RowMatrix<double> g;
    const double l = contrastive_loss(z, gt, &g);
    CHECK(std::isfinite(l));
    CHECK(l == doctest::Approx(0.5e4));
    CHECK(g.allFinite());
    CHECK(g(0, 0) == doctest::Approx(0.0));
    CHECK(g(0, 2) == doctest::Approx(-0.25));
    RowMatrix<float> zf = z.cast<float>();
    CHECK(std::isfinite(contrastive_loss(zf, gt)));
  }

  TEST_CASE("loss ignores pixel order and falls as positive logits rise") {
    Rng rng(36);
    const MaskGT gt = random_mask(rng, 1, 6, 6);
    const RowMatrix<double> z = rng.uniform_matrix<double>(1, 36, 4.0);
    const auto perm = rng.permutation(36);
    MaskGT pg = gt;
    RowMatrix<double> pz = z;
    for (Index i = 0; i < 36; ++i) {
      pg.values(0, i) = gt.values(0, static_cast<Index>(perm[static_cast<std::size_t>(i)]));
      pz(0, i) = z(0, static_cast<Index>(perm[static_cast<std::size_t>(i)]));
    }
    CHECK(contrastive_loss(pz, pg) == doctest::Approx(contrastive_loss(z, gt)).epsilon(1e-14));
    RowMatrix<double> g;
    const double base = contrastive_loss(z, gt, &g);
    RowMatrix<double> up = z;
    for (Index i = 0; i < 36; ++i)
      if (gt.values(0, i)) {
        CHECK(g(0, i) < 0.0);
        up(0, i) += 0.5;
      }
    CHECK(contrastive_loss(up, gt) < base);
    CHECK(base > 0.0);
  }

  TEST_CASE("loss input validation") {
    MaskGT gt;
    gt.height = gt.width = 2;
    gt.values.resize(1, 4);
    gt.values << 0, 1, 2, 0;
    CHECK_THROWS_AS(contrastive_loss(RowMatrix<double>::Zero(1, 4).eval(), gt), InvalidInput);
    gt.values << 0, 1, 1, 0;
    CHECK_THROWS_AS(contrastive_loss(RowMatrix<double>::Zero(1, 5).eval(), gt), InvalidInput);
  }

  TEST_CASE("head rejects mismatched widths") {
    CHECK_THROWS_AS(compute_activation(RowMatrix<double>::Zero(1, 3).eval(), FeatureBatch<double>(1, 2, 2, 4), 16, 16),
                    ConfigError);
    CHECK_THROWS_AS(compute_activation(RowMatrix<double>::Zero(2, 4).eval(), FeatureBatch<double>(1, 2, 2, 4), 16, 16),
                    InvalidInput);
  }

  TEST_CASE("mask downsampling picks nearest pixels") {
    MaskGT gt;
    gt.height = gt.width = 4;
    gt.values.resize(1, 16);
    gt.values << 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1;
    const MaskGT small = resize_mask(gt, 2, 2);
    CHECK(small.values(0, 0) == 1);
    CHECK(small.values(0, 1) == 0);
    CHECK(small.values(0, 2) == 0);
    CHECK(small.values(0, 3) == 1);
  }
}
