#pragma once

#include "affclip/encoders.hpp"
#include "affclip/fpn_decoder.hpp"
#include "affclip/head_loss.hpp"
#include "affclip/metrics.hpp"
#include "affclip/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace affclip {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  AdamConfig adam;  // learning_rate 1e-4
  LrSchedule schedule = LrSchedule::Constant;
  Index batch_size = 32;
  Index epochs = 1;
  Index max_steps = 0;  // 0 = run all epochs
  Index input_size = 416;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir = "runs/default";
  Index checkpoint_every = 0;  // 0 = final checkpoint only
  Index log_every = 10;
  bool loss_at_stride8 = false;
  bool mixed_precision = false;
  Index prefetch = 4;

  double learning_rate_at(Index step, Index total_steps) const;
};

struct SyntheticDataConfig {
  Index count = 0;
  std::uint64_t seed = 0;
  Index canvas = 128;
};

struct DataConfig {
  std::vector<std::filesystem::path> train_manifests;
  SyntheticDataConfig synthetic;
};

struct EvalConfig {
  PostprocessOptions postprocess;
  double epsilon = kDefaultEpsilon;
  Index batch_size = 8;
};

/// Resolved run configuration. Every field has a default; files and
/// overrides only name what they change, and unknown keys are rejected.
struct RunConfig {
  BackboneConfig backbone;
  DecoderConfig decoder;  // backbone widths are filled from the backbone at build time
  HeadOptions head;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  static nlohmann::json defaults();
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

  nlohmann::json to_json() const;

  /// Copies the widths and text geometry reported by a built backbone into
  /// the backbone and decoder sections.
  void adopt_backbone(const BackboneInfo& info);
};

/// Sets a dotted key ("train.learning_rate=1e-3"); the value is parsed as JSON
/// and falls back to a plain string.
void apply_override(nlohmann::json& config, const std::string& assignment);
/// Recursively merges `patch` into `base`, rejecting keys absent from `base`.
void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

}  // namespace affclip
