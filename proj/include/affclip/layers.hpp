#pragma once

#include "affclip/errors.hpp"
#include "affclip/rng.hpp"
#include "affclip/tensor.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace affclip {

enum class Padding { Zero, Replicate };

struct ConvGeometry {
  Index kernel = 3;
  Index stride = 1;
  Index pad = 1;
  Padding padding = Padding::Zero;

  Index out_size(Index in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

/// Gathers, for one kernel tap, the input row feeding every output pixel.
/// Rows falling in the zero padding are left at zero.
template <typename Scalar>
void gather_tap(const FeatureBatch<Scalar>& x, const ConvGeometry& g, Index out_h, Index out_w,
                Index ky, Index kx, RowMatrix<Scalar>& dst) {
  dst.setZero(x.batch * out_h * out_w, x.channels());
  for (Index b = 0; b < x.batch; ++b) {
    for (Index oy = 0; oy < out_h; ++oy) {
      Index iy = oy * g.stride + ky - g.pad;
      if (iy < 0 || iy >= x.height) {
        if (g.padding == Padding::Zero) continue;
        iy = std::clamp<Index>(iy, 0, x.height - 1);
      }
      for (Index ox = 0; ox < out_w; ++ox) {
        Index ix = ox * g.stride + kx - g.pad;
        if (ix < 0 || ix >= x.width) {
          if (g.padding == Padding::Zero) continue;
          ix = std::clamp<Index>(ix, 0, x.width - 1);
        }
        dst.row((b * out_h + oy) * out_w + ox) = x.data.row(x.row(b, iy, ix));
      }
    }
  }
}

/// Channels-last 2-D convolution without bias.
/// `weight` is (kernel*kernel*C_in) x C_out, tap-major: row (ky*kernel + kx)*C_in + c.
template <typename Scalar>
FeatureBatch<Scalar> conv2d(const FeatureBatch<Scalar>& x, const RowMatrix<Scalar>& weight,
                            const ConvGeometry& g) {
  const Index cin = x.channels();
  if (weight.rows() != g.kernel * g.kernel * cin)
    throw ConfigError("conv2d: weight has " + std::to_string(weight.rows()) + " rows, expected " +
                      std::to_string(g.kernel * g.kernel * cin));
  const Index oh = g.out_size(x.height), ow = g.out_size(x.width);
  FeatureBatch<Scalar> y(x.batch, oh, ow, weight.cols());
  if (g.kernel == 1 && g.stride == 1 && g.pad == 0) {
    y.data.noalias() = x.data * weight;
    return y;
  }
  RowMatrix<Scalar> tap;
  for (Index ky = 0; ky < g.kernel; ++ky) {
    for (Index kx = 0; kx < g.kernel; ++kx) {
      gather_tap(x, g, oh, ow, ky, kx, tap);
      y.data.noalias() += tap * weight.middleRows((ky * g.kernel + kx) * cin, cin);
    }
  }
  return y;
}

/// Accumulates dL/dweight for conv2d given the layer input and dL/doutput.
template <typename Scalar>
void conv2d_accumulate_weight_grad(const FeatureBatch<Scalar>& x, const FeatureBatch<Scalar>& grad_out,
                                   const ConvGeometry& g, RowMatrix<Scalar>& grad_weight) {
  const Index cin = x.channels();
  if (g.kernel == 1 && g.stride == 1 && g.pad == 0) {
    grad_weight.noalias() += x.data.transpose() * grad_out.data;
    return;
  }
  RowMatrix<Scalar> tap;
  for (Index ky = 0; ky < g.kernel; ++ky) {
    for (Index kx = 0; kx < g.kernel; ++kx) {
      gather_tap(x, g, grad_out.height, grad_out.width, ky, kx, tap);
      grad_weight.middleRows((ky * g.kernel + kx) * cin, cin).noalias() +=
          tap.transpose() * grad_out.data;
    }
  }
}

/// Per-channel batch normalization over all pixel rows.
template <typename Scalar>
struct BatchNorm {
  RowVector<Scalar> gamma, beta;
  RowVector<Scalar> running_mean, running_var;
  RowVector<Scalar> grad_gamma, grad_beta;
  Scalar eps = Scalar(1e-5);
  Scalar momentum = Scalar(0.1);

  struct Cache {
    RowMatrix<Scalar> normalized;
    RowVector<Scalar> inv_std;
  };

  BatchNorm() = default;
  explicit BatchNorm(Index channels)
      : gamma(RowVector<Scalar>::Ones(channels)),
        beta(RowVector<Scalar>::Zero(channels)),
        running_mean(RowVector<Scalar>::Zero(channels)),
        running_var(RowVector<Scalar>::Ones(channels)),
        grad_gamma(RowVector<Scalar>::Zero(channels)),
        grad_beta(RowVector<Scalar>::Zero(channels)) {}

  Index channels() const { return gamma.size(); }

  void forward_eval(RowMatrix<Scalar>& x) const {
    const RowVector<Scalar> scale = gamma.array() / (running_var.array() + eps).sqrt();
    const RowVector<Scalar> shift = beta.array() - running_mean.array() * scale.array();
    x.array().rowwise() *= scale.array();
    x.array().rowwise() += shift.array();
  }

  /// Normalizes with batch statistics and updates the running estimates.
  void forward_train(RowMatrix<Scalar>& x, Cache& cache) {
    const Index n = x.rows();
    const RowVector<Scalar> mean = x.colwise().mean();
    x.rowwise() -= mean;
    const RowVector<Scalar> var = x.array().square().colwise().sum() / static_cast<Scalar>(n);
    cache.inv_std = (var.array() + eps).rsqrt();
    x.array().rowwise() *= cache.inv_std.array();
    cache.normalized = x;
    x.array().rowwise() *= gamma.array();
    x.array().rowwise() += beta.array();

    const Scalar unbiased = n > 1 ? static_cast<Scalar>(n) / static_cast<Scalar>(n - 1) : Scalar(1);
    running_mean = (Scalar(1) - momentum) * running_mean + momentum * mean;
    running_var = (Scalar(1) - momentum) * running_var + momentum * unbiased * var;
  }

  /// Consumes dL/dy, accumulates parameter gradients, returns dL/dx in place.
  void backward(const Cache& cache, RowMatrix<Scalar>& grad) {
    const Scalar n = static_cast<Scalar>(grad.rows());
    const RowVector<Scalar> dbeta = grad.colwise().sum();
    const RowVector<Scalar> dgamma = (grad.array() * cache.normalized.array()).colwise().sum();
    grad_beta += dbeta;
    grad_gamma += dgamma;
    const RowVector<Scalar> coeff = gamma.array() * cache.inv_std.array() / n;
    grad *= n;
    grad.rowwise() -= dbeta;
    grad.array() -= cache.normalized.array().rowwise() * dgamma.array();
    grad.array().rowwise() *= coeff.array();
  }
};

/// Named view of one trainable tensor and its gradient.
template <typename Scalar>
struct ParameterRef {
  std::string name;
  Eigen::Ref<RowMatrix<Scalar>> value;
  Eigen::Ref<RowMatrix<Scalar>> grad;
};

/// Named view of a non-trainable state tensor (batch-norm running statistics).
template <typename Scalar>
struct BufferRef {
  std::string name;
  Eigen::Ref<RowMatrix<Scalar>> value;
};

/// Convolution -> batch normalization -> ReLU, the building block of the
/// pyramid decoder. The convolution has no bias (batch-norm shift subsumes it).
template <typename Scalar>
class ConvBnRelu {
 public:
  struct Cache {
    FeatureBatch<Scalar> input;
    typename BatchNorm<Scalar>::Cache bn;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> active;
    Index out_h = 0, out_w = 0;
  };

  ConvBnRelu() = default;
  ConvBnRelu(std::string name, Index in_channels, Index out_channels, ConvGeometry geometry)
      : name_(std::move(name)),
        geometry_(geometry),
        in_channels_(in_channels),
        weight_(RowMatrix<Scalar>::Zero(geometry.kernel * geometry.kernel * in_channels, out_channels)),
        grad_weight_(RowMatrix<Scalar>::Zero(weight_.rows(), weight_.cols())),
        bn_(out_channels) {}

  const std::string& name() const { return name_; }
  const ConvGeometry& geometry() const { return geometry_; }
  Index in_channels() const { return in_channels_; }
  Index out_channels() const { return weight_.cols(); }
  Index trainable_count() const { return weight_.size() + 2 * bn_.channels(); }
  Index fan_out() const { return out_channels() * geometry_.kernel * geometry_.kernel; }

  RowMatrix<Scalar>& weight() { return weight_; }
  const RowMatrix<Scalar>& weight() const { return weight_; }
  BatchNorm<Scalar>& bn() { return bn_; }
  const BatchNorm<Scalar>& bn() const { return bn_; }

  /// He-uniform over fan-out: U(-b, b), b = sqrt(6 / fan_out), so Var = 2 / fan_out.
  void reset_parameters(Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_out()));
    weight_ = rng.uniform_matrix<Scalar>(weight_.rows(), weight_.cols(), bound);
    bn_ = BatchNorm<Scalar>(out_channels());
  }

  FeatureBatch<Scalar> forward_eval(const FeatureBatch<Scalar>& x) const {
    check_input(x);
    FeatureBatch<Scalar> y = conv2d(x, weight_, geometry_);
    bn_.forward_eval(y.data);
    y.data = y.data.cwiseMax(Scalar(0));
    return y;
  }

  FeatureBatch<Scalar> forward_train(const FeatureBatch<Scalar>& x, Cache& cache) {
    check_input(x);
    FeatureBatch<Scalar> y = conv2d(x, weight_, geometry_);
    bn_.forward_train(y.data, cache.bn);
    cache.active = y.data.array() > Scalar(0);
    y.data = y.data.cwiseMax(Scalar(0));
    cache.input = x;
    cache.out_h = y.height;
    cache.out_w = y.width;
    return y;
  }

  /// Accumulates parameter gradients. When `grad_input` is non-null it also
  /// receives dL/dx (supported for 1x1 convolutions only, the decoder never
  /// back-propagates into the frozen encoder outputs).
  void backward(const Cache& cache, FeatureBatch<Scalar> grad_out, FeatureBatch<Scalar>* grad_input) {
    grad_out.data = cache.active.select(grad_out.data, Scalar(0));
    bn_.backward(cache.bn, grad_out.data);
    conv2d_accumulate_weight_grad(cache.input, grad_out, geometry_, grad_weight_);
    if (grad_input != nullptr) {
      if (geometry_.kernel != 1 || geometry_.stride != 1)
        throw ConfigError(name_ + ": input gradient only implemented for 1x1 convolutions");
      *grad_input = FeatureBatch<Scalar>::like(cache.input, in_channels_);
      grad_input->data.noalias() = grad_out.data * weight_.transpose();
    }
  }

  void zero_grad() {
    grad_weight_.setZero();
    bn_.grad_gamma.setZero();
    bn_.grad_beta.setZero();
  }

  void append_parameters(std::vector<ParameterRef<Scalar>>& out) {
    out.push_back({name_ + ".conv.weight", weight_, grad_weight_});
    out.push_back({name_ + ".bn.weight", bn_.gamma, bn_.grad_gamma});
    out.push_back({name_ + ".bn.bias", bn_.beta, bn_.grad_beta});
  }

  void append_buffers(std::vector<BufferRef<Scalar>>& out) {
    out.push_back({name_ + ".bn.running_mean", bn_.running_mean});
    out.push_back({name_ + ".bn.running_var", bn_.running_var});
  }

 private:
  void check_input(const FeatureBatch<Scalar>& x) const {
    if (x.channels() != in_channels_)
      throw InvalidInput(name_ + ": expected " + std::to_string(in_channels_) + " channels, got " +
                         x.shape_string());
  }

  std::string name_;
  ConvGeometry geometry_;
  Index in_channels_ = 0;
  RowMatrix<Scalar> weight_;
  RowMatrix<Scalar> grad_weight_;
  BatchNorm<Scalar> bn_;
};

}  // namespace affclip
