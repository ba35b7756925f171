#include <doctest.h>

#include "../support/support.hpp"

#include "affclip/layers.hpp"

using namespace affclip;

namespace {

// weight[(ky*k + kx)*cin + c][co] -> oracle layout [ky][kx][c][co]
std::vector<std::vector<std::vector<std::vector<double>>>> oracle_weight(const RowMatrix<double>& w, Index cin) {
  const Index cout = w.cols();
  std::vector<std::vector<std::vector<std::vector<double>>>> o(
      3, std::vector<std::vector<std::vector<double>>>(3, std::vector<std::vector<double>>(
                                                             static_cast<std::size_t>(cin), std::vector<double>(static_cast<std::size_t>(cout)))));
  for (Index ky = 0; ky < 3; ++ky)
    for (Index kx = 0; kx < 3; ++kx)
      for (Index c = 0; c < cin; ++c)
        for (Index co = 0; co < cout; ++co)
          o[static_cast<std::size_t>(ky)][static_cast<std::size_t>(kx)][static_cast<std::size_t>(c)][static_cast<std::size_t>(co)] =
              w((ky * 3 + kx) * cin + c, co);
  return o;
}

double naive_conv_zero(const FeatureBatch<double>& x, const RowMatrix<double>& w, Index k, Index stride, Index pad, Index b,
                       Index oy, Index ox, Index co) {
  double s = 0.0;
  for (Index ky = 0; ky < k; ++ky)
    for (Index kx = 0; kx < k; ++kx) {
      const Index iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
      if (iy < 0 || iy >= x.height || ix < 0 || ix >= x.width) continue;
      for (Index c = 0; c < x.channels(); ++c) s += x.at(b, iy, ix, c) * w((ky * k + kx) * x.channels() + c, co);
    }
  return s;
}

}  // namespace

TEST_SUITE("layers") {
  TEST_CASE("3x3 replicate-padded convolution agrees with the loop oracle") {
    Rng rng(10);
    const FeatureBatch<double> x = testing::random_batch(rng, 2, 5, 4, 3);
    const RowMatrix<double> w = rng.uniform_matrix<double>(27, 4, 1.0);
    const FeatureBatch<double> y = conv2d(x, w, ConvGeometry{3, 1, 1, Padding::Replicate});
    CHECK(testing::max_abs_diff(y, oracle::conv3x3_replicate(testing::to_oracle(x), oracle_weight(w, 3))) < 1e-12);
  }

  TEST_CASE("zero padding and stride") {
    Rng rng(11);
    const FeatureBatch<double> x = testing::random_batch(rng, 1, 7, 6, 2);
    const RowMatrix<double> w = rng.uniform_matrix<double>(18, 3, 1.0);
    for (Index stride : {1, 2}) {
      const ConvGeometry g{3, stride, 1, Padding::Zero};
      const FeatureBatch<double> y = conv2d(x, w, g);
      REQUIRE(y.height == g.out_size(7));
      double worst = 0.0;
      for (Index oy = 0; oy < y.height; ++oy)
        for (Index ox = 0; ox < y.width; ++ox)
          for (Index co = 0; co < 3; ++co)
            worst = std::max(worst, std::abs(y.at(0, oy, ox, co) - naive_conv_zero(x, w, 3, stride, 1, 0, oy, ox, co)));
      CHECK(worst < 1e-12);
    }
  }

  TEST_CASE("weight gradient is the adjoint of the convolution") {
    Rng rng(12);
    const ConvGeometry g{3, 1, 1, Padding::Replicate};
    const FeatureBatch<double> x = testing::random_batch(rng, 2, 4, 4, 3);
    const FeatureBatch<double> gy = testing::random_batch(rng, 2, 4, 4, 2);
    RowMatrix<double> gw = RowMatrix<double>::Zero(27, 2);
    conv2d_accumulate_weight_grad(x, gy, g, gw);
    const RowMatrix<double> w = rng.uniform_matrix<double>(27, 2, 1.0);
    // <conv(x, w), gy> is linear in w, so its gradient is exact.
    const double lhs = (conv2d(x, w, g).data.array() * gy.data.array()).sum();
    CHECK(lhs == doctest::Approx((w.array() * gw.array()).sum()).epsilon(1e-12));
  }

  TEST_CASE("conv-bn-relu gradients match central differences") {
    Rng rng(13);
    for (const auto& g : {ConvGeometry{3, 1, 1, Padding::Replicate}, ConvGeometry{1, 1, 0, Padding::Zero}}) {
      ConvBnRelu<double> layer("l", 3, 4, g);
      layer.reset_parameters(rng);
      layer.bn().gamma = rng.uniform_matrix<double>(1, 4, 1.0).array() + 1.5;
      layer.bn().beta = rng.uniform_matrix<double>(1, 4, 0.5);
      const FeatureBatch<double> x = testing::random_batch(rng, 2, 4, 3, 3);
      const FeatureBatch<double> r = testing::random_batch(rng, 2, 4, 3, 4);
      auto loss = [&](ConvBnRelu<double>& l) {
        typename ConvBnRelu<double>::Cache c;
        return (l.forward_train(x, c).data.array() * r.data.array()).sum();
      };
      typename ConvBnRelu<double>::Cache cache;
      layer.zero_grad();
      layer.forward_train(x, cache);
      FeatureBatch<double> gx;
      layer.backward(cache, r, g.kernel == 1 ? &gx : nullptr);
      auto params = std::vector<ParameterRef<double>>{};
      layer.append_parameters(params);
      double worst = 0.0;
      for (auto& p : params) {
        for (Index i = 0; i < std::min<Index>(p.value.size(), 12); ++i) {
          const double keep = p.value.data()[i], h = 1e-6;
          ConvBnRelu<double> probe = layer;
          auto pp = std::vector<ParameterRef<double>>{};
          probe.append_parameters(pp);
          auto& target = *std::find_if(pp.begin(), pp.end(), [&](const auto& q) { return q.name == p.name; });
          target.value.data()[i] = keep + h;
          const double up = loss(probe);
          target.value.data()[i] = keep - h;
          const double down = loss(probe);
          const double numeric = (up - down) / (2 * h);
          worst = std::max(worst, std::abs(numeric - p.grad.data()[i]) / std::max(1e-6, std::abs(numeric)));
        }
      }
      CHECK(worst < 1e-5);
      if (g.kernel == 1) {
        double wx = 0.0;
        FeatureBatch<double> xp = x;
        for (Index i = 0; i < 10; ++i) {
          const double keep = xp.data.data()[i], h = 1e-6;
          ConvBnRelu<double> probe = layer;
          typename ConvBnRelu<double>::Cache c;
          xp.data.data()[i] = keep + h;
          const double up = (probe.forward_train(xp, c).data.array() * r.data.array()).sum();
          xp.data.data()[i] = keep - h;
          const double down = (probe.forward_train(xp, c).data.array() * r.data.array()).sum();
          xp.data.data()[i] = keep;
          const double numeric = (up - down) / (2 * h);
          wx = std::max(wx, std::abs(numeric - gx.data.data()[i]) / std::max(1e-6, std::abs(numeric)));
        }
        CHECK(wx < 1e-5);
      }
    }
  }

  TEST_CASE("eval-mode batch norm uses running statistics") {
    BatchNorm<double> bn(2);
    bn.running_mean << 1.0, -2.0;
    bn.running_var << 4.0, 9.0;
    bn.gamma << 2.0, 1.0;
    bn.beta << 0.5, 0.0;
    RowMatrix<double> x(1, 2);
    x << 3.0, 1.0;
    bn.forward_eval(x);
    CHECK(x(0, 0) == doctest::Approx(2.0 * 2.0 / std::sqrt(4.0 + 1e-5) + 0.5));
    CHECK(x(0, 1) == doctest::Approx(3.0 / std::sqrt(9.0 + 1e-5)));
  }

  TEST_CASE("training-mode batch norm updates running estimates with momentum 0.1") {
    BatchNorm<double> bn(1);
    RowMatrix<double> x(4, 1);
    x << 1, 2, 3, 6;
    typename BatchNorm<double>::Cache c;
    bn.forward_train(x, c);
    CHECK(bn.running_mean(0) == doctest::Approx(0.1 * 3.0));
    CHECK(bn.running_var(0) == doctest::Approx(0.9 + 0.1 * 14.0 / 3.0));
    CHECK(x.mean() == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("initialization follows the fan-out uniform scheme") {
    Rng rng(14);
    ConvBnRelu<float> layer("proj", 512, 64, ConvGeometry{3, 1, 1, Padding::Replicate});
    layer.reset_parameters(rng);
    const double var = layer.weight().cast<double>().array().square().mean();
    const double expected = 2.0 / (64.0 * 9.0);
    CHECK(std::abs(var / expected - 1.0) < 0.1);
    CHECK(layer.weight().cwiseAbs().maxCoeff() <= std::sqrt(6.0 / (64.0 * 9.0)));
    CHECK((layer.bn().gamma.array() == 1.0f).all());
    CHECK((layer.bn().beta.array() == 0.0f).all());
  }

  TEST_CASE("channel mismatch is rejected") {
    ConvBnRelu<double> layer("l", 3, 4, ConvGeometry{1, 1, 0, Padding::Zero});
    CHECK_THROWS_AS(layer.forward_eval(FeatureBatch<double>(1, 2, 2, 5)), InvalidInput);
  }
}
