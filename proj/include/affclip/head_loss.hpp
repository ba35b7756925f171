#pragma once

#include "affclip/errors.hpp"
#include "affclip/resample.hpp"
#include "affclip/tensor.hpp"

#include <cmath>
#include <cstdint>

namespace affclip {

struct HeadOptions {
  double scale = 1.0;
  bool normalize_text = false;
  bool normalize_pixels = false;
  Interpolation upsample = Interpolation::Bilinear;
};

/// Per-pixel logits for one batch of (image, prompt) pairs.
/// Rows are samples, columns are pixels in row-major (y, x) order.
template <typename Scalar>
struct ActivationMap {
  Index height = 0, width = 0;      // input resolution
  Index grid_h = 0, grid_w = 0;     // stride-8 grid
  RowMatrix<Scalar> logits;         // B x (H*W)
  RowMatrix<Scalar> stride8_logits; // B x (H/8 * W/8)

  Index batch() const { return logits.rows(); }

  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> map(Index b) const {
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(height, width);
    for (Index y = 0; y < height; ++y)
      for (Index x = 0; x < width; ++x) m(y, x) = logits(b, y * width + x);
    return m;
  }
};

/// Intermediate values needed to back-propagate the head.
template <typename Scalar>
struct HeadCache {
  RowMatrix<Scalar> query;      // B x C, after optional normalization and scaling
  RowMatrix<Scalar> pixels;     // (B*h*w) x C as used in the dot product
  Vector<Scalar> pixel_norms;   // only when normalizing pixels
  Index grid_h = 0, grid_w = 0, height = 0, width = 0;
};

template <typename Scalar>
ActivationMap<Scalar> compute_activation(const RowMatrix<Scalar>& f_q, const FeatureBatch<Scalar>& dense, Index out_h,
                                         Index out_w, const HeadOptions& opt = {}, HeadCache<Scalar>* cache = nullptr) {
  if (f_q.cols() != dense.channels())
    throw ConfigError("activation head: text width " + std::to_string(f_q.cols()) + " != pixel width " +
                      std::to_string(dense.channels()));
  if (f_q.rows() != dense.batch) throw InvalidInput("activation head: batch mismatch between text and image");
  RowMatrix<Scalar> q = f_q;
  if (opt.normalize_text) q.rowwise().normalize();
  q *= static_cast<Scalar>(opt.scale);

  const Index n = dense.pixels();
  RowMatrix<Scalar> pixels;
  const RowMatrix<Scalar>* used = &dense.data;
  Vector<Scalar> norms;
  if (opt.normalize_pixels) {
    norms = dense.data.rowwise().norm().cwiseMax(Scalar(1e-12));
    pixels = dense.data.array().colwise() / norms.array();
    used = &pixels;
  }

  ActivationMap<Scalar> out;
  out.height = out_h;
  out.width = out_w;
  out.grid_h = dense.height;
  out.grid_w = dense.width;
  out.stride8_logits.resize(dense.batch, n);
  for (Index b = 0; b < dense.batch; ++b)
    out.stride8_logits.row(b).noalias() = (used->middleRows(b * n, n) * q.row(b).transpose()).transpose();

  const auto op = resize_operator<Scalar>(dense.height, dense.width, out_h, out_w, opt.upsample);
  out.logits.noalias() = (op * out.stride8_logits.transpose()).transpose();

  if (cache) {
    cache->query = std::move(q);
    if (opt.normalize_pixels) {
      cache->pixels = std::move(pixels);
      cache->pixel_norms = std::move(norms);
    } else {
      cache->pixels = dense.data;
    }
    cache->grid_h = dense.height;
    cache->grid_w = dense.width;
    cache->height = out_h;
    cache->width = out_w;
  }
  return out;
}

/// dL/d(stride-8 logits) from dL/d(full-resolution logits).
template <typename Scalar>
RowMatrix<Scalar> upsample_backward(const RowMatrix<Scalar>& grad_logits, const HeadCache<Scalar>& cache,
                                    Interpolation mode) {
  const auto op = resize_operator<Scalar>(cache.grid_h, cache.grid_w, cache.height, cache.width, mode);
  return (op.transpose() * grad_logits.transpose()).transpose();
}

/// dL/d(dense) from dL/d(stride-8 logits). The text side is frozen and gets no gradient.
template <typename Scalar>
FeatureBatch<Scalar> activation_backward(const RowMatrix<Scalar>& grad_stride8, const HeadCache<Scalar>& cache,
                                         const HeadOptions& opt = {}) {
  const Index batch = grad_stride8.rows();
  FeatureBatch<Scalar> g(batch, cache.grid_h, cache.grid_w, cache.query.cols());
  for (Index b = 0; b < batch; ++b) g.sample(b).noalias() = grad_stride8.row(b).transpose() * cache.query.row(b);
  if (opt.normalize_pixels) {
    // d(e/|e|) = (I - u u^T) / |e|
    const Vector<Scalar> proj = (g.data.array() * cache.pixels.array()).rowwise().sum();
    g.data.array() -= cache.pixels.array().colwise() * proj.array();
    g.data.array().colwise() /= cache.pixel_norms.array();
  }
  return g;
}

/// Binary ground truth, one row per sample, pixels row-major.
struct MaskGT {
  Index height = 0, width = 0;
  Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> values;  // B x (H*W), {0, 1}

  Index batch() const { return values.rows(); }
};

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

/// Mean binary cross-entropy with logits over every pixel:
/// softplus(-z) on positives, softplus(z) on negatives. When `grad` is given
/// it receives dL/dlogits.
template <typename Scalar>
double contrastive_loss(const RowMatrix<Scalar>& logits, const MaskGT& gt, RowMatrix<Scalar>* grad = nullptr) {
  if (logits.rows() != gt.values.rows() || logits.cols() != gt.values.cols())
    throw InvalidInput("contrastive loss: logits " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                       " vs mask " + std::to_string(gt.values.rows()) + "x" + std::to_string(gt.values.cols()));
  if ((gt.values > 1).any()) throw InvalidInput("contrastive loss: mask is not binary");
  const double count = static_cast<double>(logits.size());
  if (count == 0) throw InvalidInput("contrastive loss: empty input");
  if (grad) grad->resize(logits.rows(), logits.cols());
  double total = 0.0;
  for (Index r = 0; r < logits.rows(); ++r) {
    for (Index c = 0; c < logits.cols(); ++c) {
      const double z = static_cast<double>(logits(r, c));
      const bool positive = gt.values(r, c) != 0;
      total += positive ? softplus(-z) : softplus(z);
      if (grad) {
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        (*grad)(r, c) = static_cast<Scalar>((s - (positive ? 1.0 : 0.0)) / count);
      }
    }
  }
  return total / count;
}

/// Nearest-neighbour downsampling of a mask batch (used when the loss is taken on the stride-8 grid).
inline MaskGT resize_mask(const MaskGT& gt, Index out_h, Index out_w) {
  if (gt.height == out_h && gt.width == out_w) return gt;
  const auto ty = axis_taps(gt.height, out_h, Interpolation::Nearest);
  const auto tx = axis_taps(gt.width, out_w, Interpolation::Nearest);
  MaskGT out;
  out.height = out_h;
  out.width = out_w;
  out.values.resize(gt.batch(), out_h * out_w);
  for (Index b = 0; b < gt.batch(); ++b)
    for (Index y = 0; y < out_h; ++y)
      for (Index x = 0; x < out_w; ++x)
        out.values(b, y * out_w + x) =
            gt.values(b, ty[static_cast<std::size_t>(y)][0].source * gt.width + tx[static_cast<std::size_t>(x)][0].source);
  return out;
}

}  // namespace affclip
