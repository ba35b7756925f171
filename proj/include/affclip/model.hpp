#pragma once

#include "affclip/checkpoint.hpp"
#include "affclip/encoders.hpp"
#include "affclip/fpn_decoder.hpp"
#include "affclip/head_loss.hpp"
#include "affclip/metrics.hpp"
#include "affclip/tokenizer.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace affclip {

/// Frozen encoders + trained decoder + head, queried with free-form prompts.
/// Immutable after construction; predict() may run on several threads.
class AffordanceModel {
 public:
  AffordanceModel(std::shared_ptr<const Backbone> backbone, std::shared_ptr<const FpnDecoder<float>> decoder,
                  HeadOptions head, Index input_size, std::string model_tag);

  /// Rebuilds the backbone described by the checkpoint's config. `weights`
  /// replaces the recorded pretrained-weights path when non-empty.
  static AffordanceModel from_checkpoint(const std::filesystem::path& path, const std::filesystem::path& weights = {});

  /// Logits at the model input resolution for each (image, prompt) pair.
  ActivationMap<float> predict(const std::vector<Image>& images, const std::vector<std::string>& prompts) const;
  ActivationMap<float> predict(const Image& image, const std::string& prompt) const;

  /// Logits bilinearly resized back to the image's own size.
  EvalMap predict_native(const Image& image, const std::string& prompt) const;

  const Backbone& backbone() const { return *backbone_; }
  const FpnDecoder<float>& decoder() const { return *decoder_; }
  const BpeTokenizer& tokenizer() const { return *tokenizer_; }
  const HeadOptions& head() const { return head_; }
  Index input_size() const { return input_size_; }
  const std::string& model_tag() const { return model_tag_; }

 private:
  std::shared_ptr<const Backbone> backbone_;
  std::shared_ptr<const FpnDecoder<float>> decoder_;
  std::shared_ptr<const BpeTokenizer> tokenizer_;
  HeadOptions head_;
  Index input_size_;
  std::string model_tag_;
};

/// Min-max normalized 16-bit heatmap plus the logit range needed to invert it.
struct Heatmap16 {
  Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> levels;
  double min_logit = 0.0, max_logit = 0.0;
};

Heatmap16 quantize_heatmap(const EvalMap& logits);
/// Blends a colour-mapped heatmap (levels / 65535) over the image.
Image render_overlay(const Image& image, const EvalMap& scores01, double alpha = 0.5);
std::array<float, 3> colormap(double t);

}  // namespace affclip
