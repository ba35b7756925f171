#include "affclip/model.hpp"

#include "affclip/errors.hpp"
#include "affclip/resample.hpp"

#include <algorithm>
#include <cmath>

namespace affclip {

AffordanceModel::AffordanceModel(std::shared_ptr<const Backbone> backbone, std::shared_ptr<const FpnDecoder<float>> decoder,
                                 HeadOptions head, Index input_size, std::string model_tag)
    : backbone_(std::move(backbone)),
      decoder_(std::move(decoder)),
      tokenizer_(std::make_shared<BpeTokenizer>(backbone_->tokenizer_config())),
      head_(head),
      input_size_(input_size),
      model_tag_(std::move(model_tag)) {
  decoder_->config().check_backbone(backbone_->info());
  if (input_size_ <= 0 || input_size_ % 32 != 0) throw ConfigError("model input size must be a positive multiple of 32");
}

AffordanceModel AffordanceModel::from_checkpoint(const std::filesystem::path& path, const std::filesystem::path& weights) {
  const LoadedCheckpoint ckpt = read_checkpoint(path);
  BackboneConfig bc = ckpt.config.backbone;
  if (!weights.empty()) bc.weights = weights;
  std::shared_ptr<const Backbone> backbone = make_backbone(bc);
  DecoderConfig dc = ckpt.config.decoder;
  auto decoder = std::make_shared<FpnDecoder<float>>(dc);
  restore_decoder(ckpt, *decoder);
  return AffordanceModel(std::move(backbone), std::move(decoder), ckpt.config.head, ckpt.config.train.input_size,
                         ckpt.model_tag);
}

ActivationMap<float> AffordanceModel::predict(const std::vector<Image>& images, const std::vector<std::string>& prompts) const {
  if (images.size() != prompts.size() || images.empty()) throw InvalidInput("predict: need one prompt per image");
  std::vector<TokenSequence> tokens;
  tokens.reserve(prompts.size());
  for (const auto& p : prompts) {
    if (p.find_first_not_of(" \t\r\n") == std::string::npos) throw InvalidInput("predict: empty prompt");
    tokens.push_back(tokenizer_->tokenize(p));
  }
  for (const auto& img : images)
    if (img.height <= 0 || img.width <= 0) throw InvalidInput("predict: empty image");
  // One pair at a time: GEMM blocking depends on the row count, so batching
  // would make a sample's logits depend on its batch mates in the last bits.
  ActivationMap<float> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ImageBatch batch = make_image_batch({images[i]}, input_size_, backbone_->info().normalization);
    const VisualFeatures<float> visual = backbone_->encode_image(batch);
    const TextFeatures text = backbone_->encode_text({tokens[i]});
    const FeatureBatch<float> dense = decoder_->forward(visual);
    ActivationMap<float> one = compute_activation(text.f_q, dense, input_size_, input_size_, head_);
    if (i == 0) {
      out = one;
      out.logits.resize(static_cast<Index>(images.size()), one.logits.cols());
      out.stride8_logits.resize(static_cast<Index>(images.size()), one.stride8_logits.cols());
    }
    out.logits.row(static_cast<Index>(i)) = one.logits.row(0);
    out.stride8_logits.row(static_cast<Index>(i)) = one.stride8_logits.row(0);
  }
  return out;
}

ActivationMap<float> AffordanceModel::predict(const Image& image, const std::string& prompt) const {
  return predict(std::vector<Image>{image}, std::vector<std::string>{prompt});
}

EvalMap AffordanceModel::predict_native(const Image& image, const std::string& prompt) const {
  const ActivationMap<float> act = predict(image, prompt);
  return resize_map(act.map(0).cast<double>(), image.height, image.width, Interpolation::Bilinear);
}

Heatmap16 quantize_heatmap(const EvalMap& logits) {
  Heatmap16 h;
  h.min_logit = logits.minCoeff();
  h.max_logit = logits.maxCoeff();
  const double range = h.max_logit - h.min_logit;
  if (range > 0.0) {
    h.levels = ((logits - h.min_logit) / range * 65535.0).round().cast<std::uint16_t>();
  } else {
    h.levels = Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(logits.rows(), logits.cols());
  }
  return h;
}

std::array<float, 3> colormap(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto ramp = [](double x) { return static_cast<float>(std::clamp(1.5 - std::abs(x), 0.0, 1.0)); };
  return {ramp(4.0 * t - 3.0), ramp(4.0 * t - 2.0), ramp(4.0 * t - 1.0)};
}

Image render_overlay(const Image& image, const EvalMap& scores01, double alpha) {
  if (scores01.rows() != image.height || scores01.cols() != image.width)
    throw InvalidInput("overlay: heatmap and image sizes differ");
  Image out = image;
  const auto a = static_cast<float>(alpha);
  for (Index y = 0; y < image.height; ++y)
    for (Index x = 0; x < image.width; ++x) {
      const auto c = colormap(scores01(y, x));
      for (Index k = 0; k < 3; ++k) out.at(y, x, k) = (1.0f - a) * image.at(y, x, k) + a * c[static_cast<std::size_t>(k)];
    }
  return out;
}

}  // namespace affclip
