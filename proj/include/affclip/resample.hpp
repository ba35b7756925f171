#pragma once

#include "affclip/errors.hpp"
#include "affclip/tensor.hpp"

#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <string_view>
#include <vector>

namespace affclip {

// Parameter-free resampling. Sampling positions follow the half-pixel
// convention (align_corners = false) used by common deep-learning runtimes,
// so a feature map resized here matches one resized by the reference model.

enum class Interpolation { Bilinear, Nearest };

inline std::string_view to_string(Interpolation mode) {
  return mode == Interpolation::Bilinear ? "bilinear" : "nearest";
}

inline Interpolation parse_interpolation(std::string_view s) {
  if (s == "bilinear") return Interpolation::Bilinear;
  if (s == "nearest") return Interpolation::Nearest;
  throw ConfigError("unknown interpolation mode '" + std::string(s) + "'");
}

struct AxisTap {
  Index source;
  double weight;
};

/// Source taps for every output coordinate along one axis.
inline std::vector<std::vector<AxisTap>> axis_taps(Index in, Index out, Interpolation mode) {
  std::vector<std::vector<AxisTap>> taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    auto& t = taps[static_cast<std::size_t>(o)];
    if (mode == Interpolation::Nearest) {
      const Index s = std::min(static_cast<Index>(std::floor(static_cast<double>(o) * scale)), in - 1);
      t.push_back({s, 1.0});
      continue;
    }
    const double src = std::max(scale * (static_cast<double>(o) + 0.5) - 0.5, 0.0);
    const Index i0 = static_cast<Index>(src);
    const Index i1 = i0 + (i0 < in - 1 ? 1 : 0);
    const double l1 = src - static_cast<double>(i0);
    t.push_back({i0, 1.0 - l1});
    t.push_back({i1, l1});
  }
  return taps;
}

/// Sparse (out_h*out_w) x (in_h*in_w) operator; applying it to the pixel rows of
/// one sample resizes every channel at once. Its transpose is the exact adjoint
/// used when back-propagating through an upsampling step.
template <typename Scalar>
Eigen::SparseMatrix<Scalar, Eigen::RowMajor> resize_operator(Index in_h, Index in_w, Index out_h,
                                                             Index out_w, Interpolation mode) {
  const auto ty = axis_taps(in_h, out_h, mode);
  const auto tx = axis_taps(in_w, out_w, mode);
  std::vector<Eigen::Triplet<Scalar>> triplets;
  triplets.reserve(static_cast<std::size_t>(out_h * out_w * 4));
  for (Index y = 0; y < out_h; ++y) {
    for (Index x = 0; x < out_w; ++x) {
      for (const auto& a : ty[static_cast<std::size_t>(y)]) {
        for (const auto& b : tx[static_cast<std::size_t>(x)]) {
          const double w = a.weight * b.weight;
          if (w == 0.0) continue;
          triplets.emplace_back(y * out_w + x, a.source * in_w + b.source, static_cast<Scalar>(w));
        }
      }
    }
  }
  Eigen::SparseMatrix<Scalar, Eigen::RowMajor> op(out_h * out_w, in_h * in_w);
  op.setFromTriplets(triplets.begin(), triplets.end());
  return op;
}

template <typename Scalar>
FeatureBatch<Scalar> resize(const FeatureBatch<Scalar>& in, Index out_h, Index out_w,
                            Interpolation mode) {
  if (in.height == out_h && in.width == out_w) return in;
  const auto op = resize_operator<Scalar>(in.height, in.width, out_h, out_w, mode);
  FeatureBatch<Scalar> out(in.batch, out_h, out_w, in.channels());
  for (Index b = 0; b < in.batch; ++b) out.sample(b).noalias() = op * in.sample(b);
  return out;
}

/// Adjoint of resize(): maps a gradient at (out_h, out_w) back to (in_h, in_w).
template <typename Scalar>
FeatureBatch<Scalar> resize_adjoint(const FeatureBatch<Scalar>& grad_out, Index in_h, Index in_w,
                                    Interpolation mode) {
  if (grad_out.height == in_h && grad_out.width == in_w) return grad_out;
  const auto op = resize_operator<Scalar>(in_h, in_w, grad_out.height, grad_out.width, mode);
  FeatureBatch<Scalar> grad_in(grad_out.batch, in_h, in_w, grad_out.channels());
  for (Index b = 0; b < grad_out.batch; ++b)
    grad_in.sample(b).noalias() = op.transpose() * grad_out.sample(b);
  return grad_in;
}

/// Single-channel H x W map convenience wrapper.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> resize_map(
    const Eigen::DenseBase<Derived>& map, Index out_h, Index out_w, Interpolation mode) {
  using Scalar = typename Derived::Scalar;
  const Index h = map.rows(), w = map.cols();
  const auto op = resize_operator<Scalar>(h, w, out_h, out_w, mode);
  RowMatrix<Scalar> flat(h * w, 1);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) flat(y * w + x, 0) = map.derived().coeff(y, x);
  const RowMatrix<Scalar> r = op * flat;
  Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> out(out_h, out_w);
  for (Index y = 0; y < out_h; ++y)
    for (Index x = 0; x < out_w; ++x) out(y, x) = r(y * out_w + x, 0);
  return out;
}

/// Non-overlapping average pooling with kernel = stride = factor.
template <typename Scalar>
FeatureBatch<Scalar> average_pool(const FeatureBatch<Scalar>& in, Index factor) {
  if (in.height % factor != 0 || in.width % factor != 0)
    throw InvalidInput("average_pool: " + in.shape_string() + " not divisible by " +
                       std::to_string(factor));
  FeatureBatch<Scalar> out(in.batch, in.height / factor, in.width / factor, in.channels());
  const Scalar norm = Scalar(1) / static_cast<Scalar>(factor * factor);
  for (Index b = 0; b < in.batch; ++b)
    for (Index y = 0; y < in.height; ++y)
      for (Index x = 0; x < in.width; ++x)
        out.data.row(out.row(b, y / factor, x / factor)) += in.data.row(in.row(b, y, x));
  out.data *= norm;
  return out;
}

}  // namespace affclip
