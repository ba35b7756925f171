#pragma once

#include "affclip/checkpoint.hpp"
#include "affclip/config.hpp"
#include "affclip/data.hpp"
#include "affclip/encoders.hpp"
#include "affclip/fpn_decoder.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace affclip {

/// Random-access referring data decoded at a fixed square size.
class ReferringSource {
 public:
  virtual ~ReferringSource() = default;
  virtual std::size_t size() const = 0;
  virtual ReferringItem get(std::size_t index, Index input_size) const = 0;
};

class ManifestSource final : public ReferringSource {
 public:
  explicit ManifestSource(std::vector<ReferringSample> samples) : samples_(std::move(samples)) {}
  std::size_t size() const override { return samples_.size(); }
  ReferringItem get(std::size_t index, Index input_size) const override {
    return load_referring_item(samples_.at(index), input_size);
  }

 private:
  std::vector<ReferringSample> samples_;
};

/// Renders synthetic scenes in memory (no files involved).
class SyntheticSource final : public ReferringSource {
 public:
  SyntheticSource(std::uint64_t seed, std::size_t count, Index canvas);
  std::size_t size() const override { return samples_.size(); }
  ReferringItem get(std::size_t index, Index input_size) const override;

 private:
  std::vector<SyntheticSample> samples_;
};

std::unique_ptr<ReferringSource> make_source(const DataConfig& data);

/// Decoder with the documented initialization: conv weights U(-b, b) with
/// b = sqrt(6 / fan_out), batch-norm scale 1 and shift 0.
FpnDecoder<float> initialize_decoder(const DecoderConfig& cfg, std::uint64_t seed);

struct GradientFlowReport {
  std::vector<std::pair<std::string, double>> grad_norms;  // per parameter tensor
  Index zero_tensors = 0;
  Index zero_scalars = 0;
  Index total_scalars = 0;

  bool ok() const { return zero_tensors == 0 && !grad_norms.empty(); }
};

GradientFlowReport inspect_gradients(FpnDecoder<float>& decoder);

struct TrainResult {
  std::vector<double> losses;  // one per executed step
  Index first_step = 0, last_step = 0;
  std::filesystem::path final_checkpoint;
  std::optional<GradientFlowReport> gradient_flow;  // fresh runs only
  std::string encoder_digest_before, encoder_digest_after;
  double seconds = 0.0;
};

struct TrainHooks {
  std::function<void(Index step, double loss)> on_step;
};

/// Trains only the decoder. With `resume_from`, decoder, batch-norm buffers,
/// optimizer moments and the step counter are restored and the data order
/// continues where it left off. Writes loss.csv, config.json and checkpoints
/// under cfg.train.checkpoint_dir.
TrainResult train(const RunConfig& cfg, const Backbone& backbone, const ReferringSource& data,
                  const std::optional<std::filesystem::path>& resume_from = std::nullopt, const TrainHooks& hooks = {});

/// Sample indices used at a (1-based) step.
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t dataset_size, Index batch_size, Index step);
Index steps_per_epoch(std::size_t dataset_size, Index batch_size);

}  // namespace affclip
