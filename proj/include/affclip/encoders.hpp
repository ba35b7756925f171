#pragma once

#include "affclip/image_io.hpp"
#include "affclip/tensor.hpp"
#include "affclip/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace affclip {

/// Normalized pixels, channels-last (B*H*W) x 3.
struct ImageBatch {
  FeatureBatch<float> pixels;

  Index batch() const { return pixels.batch; }
  Index height_px() const { return pixels.height; }
  Index width_px() const { return pixels.width; }
};

struct Normalization {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
};

/// Resizes every image to size x size (bilinear) and applies the channel normalization.
ImageBatch make_image_batch(const std::vector<Image>& images, Index size, const Normalization& norm);

/// Strides 8/16/32 plus the global embedding (B x C).
template <typename Scalar>
struct VisualFeatures {
  FeatureBatch<Scalar> f1, f2, f3;
  RowMatrix<Scalar> f_s;

  Index batch() const { return f_s.rows(); }

  template <typename Other>
  VisualFeatures<Other> cast() const {
    return {f1.template cast<Other>(), f2.template cast<Other>(), f3.template cast<Other>(),
            f_s.template cast<Other>()};
  }
};

struct TextFeatures {
  RowMatrix<float> f_t;  // (B*L) x C, row b*L + position
  RowMatrix<float> f_q;  // B x C
  Index context = 0;
};

struct BackboneInfo {
  std::string kind;
  Index c1 = 512, c2 = 1024, c3 = 2048, embed = 512;
  std::int64_t vocab_size = 49152;
  std::int64_t context_length = 77;
  Normalization normalization;
};

enum class TextPooling { EndOfSequence, FirstToken };

struct BackboneConfig {
  std::string kind = "stub";  // "stub" or "clip-resnet"
  std::filesystem::path weights;
  std::filesystem::path manifest;  // optional {"sha256": "..."} for the weights file
  std::uint64_t seed = 0;
  Index c1 = 512, c2 = 1024, c3 = 2048, embed = 512;
  std::int64_t vocab_size = 49152;
  std::int64_t context_length = 77;
  TextPooling text_pooling = TextPooling::EndOfSequence;
};

/// Frozen dual encoder. Implementations are immutable after construction and
/// safe to call from several threads at once.
class Backbone {
 public:
  virtual ~Backbone() = default;

  virtual const BackboneInfo& info() const = 0;
  virtual VisualFeatures<float> encode_image(const ImageBatch& images) const = 0;
  virtual TextFeatures encode_text(const std::vector<TokenSequence>& tokens) const = 0;
  /// SHA-256 over every frozen parameter; used to prove nothing was modified.
  virtual std::string parameter_digest() const = 0;

  TokenizerConfig tokenizer_config() const;

 protected:
  void check_image(const ImageBatch& images) const;
  void check_tokens(const std::vector<TokenSequence>& tokens) const;
};

/// Weightless stand-in: per-level strided average pooling followed by a fixed
/// random channel lift, and a bag-of-token-ids random text embedding.
class StubBackbone final : public Backbone {
 public:
  explicit StubBackbone(const BackboneConfig& config);

  const BackboneInfo& info() const override { return info_; }
  VisualFeatures<float> encode_image(const ImageBatch& images) const override;
  TextFeatures encode_text(const std::vector<TokenSequence>& tokens) const override;
  std::string parameter_digest() const override;

  RowVector<float> token_embedding(std::int32_t id) const;

 private:
  BackboneInfo info_;
  std::uint64_t seed_;
  RowMatrix<float> lift1_, lift2_, lift3_, lift_s_;
};

/// Pretrained CLIP ResNet (modified stem, anti-aliased strides, attention
/// pooling) plus its causal text transformer, loaded from a tensor file using
/// the reference parameter names. Taps: f1 = layer2, f2 = layer3, f3 = layer4,
/// f_s = attention-pool output.
class ClipResNetBackbone final : public Backbone {
 public:
  explicit ClipResNetBackbone(const BackboneConfig& config);
  ~ClipResNetBackbone() override;

  const BackboneInfo& info() const override;
  VisualFeatures<float> encode_image(const ImageBatch& images) const override;
  TextFeatures encode_text(const std::vector<TokenSequence>& tokens) const override;
  std::string parameter_digest() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config);

TextPooling parse_text_pooling(const std::string& s);
std::string to_string(TextPooling p);

}  // namespace affclip
