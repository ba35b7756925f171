#pragma once

#include <Eigen/Core>

#include <cassert>
#include <string>

namespace affclip {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Channels-last batch of feature maps (B x H x W x C).
///
/// Stored as a (B*H*W) x C row-major matrix so that the channel vector of a
/// pixel is contiguous and 1x1 convolutions, dot-product heads and batch-norm
/// statistics reduce to plain matrix expressions. Row index of pixel (b, y, x)
/// is (b*H + y)*W + x.
template <typename Scalar>
struct FeatureBatch {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  RowMatrix<Scalar> data;

  FeatureBatch() = default;
  FeatureBatch(Index b, Index h, Index w, Index c)
      : batch(b), height(h), width(w), data(RowMatrix<Scalar>::Zero(b * h * w, c)) {}

  static FeatureBatch like(const FeatureBatch& other, Index channels) {
    return FeatureBatch(other.batch, other.height, other.width, channels);
  }

  Index channels() const { return data.cols(); }
  Index pixels() const { return height * width; }
  Index rows() const { return data.rows(); }
  Index row(Index b, Index y, Index x) const { return (b * height + y) * width + x; }

  auto sample(Index b) { return data.middleRows(b * pixels(), pixels()); }
  auto sample(Index b) const { return data.middleRows(b * pixels(), pixels()); }

  Scalar& at(Index b, Index y, Index x, Index c) { return data(row(b, y, x), c); }
  Scalar at(Index b, Index y, Index x, Index c) const { return data(row(b, y, x), c); }

  bool same_geometry(const FeatureBatch& o) const {
    return batch == o.batch && height == o.height && width == o.width;
  }
  bool same_shape(const FeatureBatch& o) const {
    return same_geometry(o) && channels() == o.channels();
  }

  template <typename Other>
  FeatureBatch<Other> cast() const {
    FeatureBatch<Other> out;
    out.batch = batch;
    out.height = height;
    out.width = width;
    out.data = data.template cast<Other>();
    return out;
  }

  std::string shape_string() const {
    return std::to_string(batch) + "x" + std::to_string(height) + "x" + std::to_string(width) +
           "x" + std::to_string(channels());
  }
};

}  // namespace affclip
