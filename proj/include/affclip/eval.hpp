#pragma once

#include "affclip/config.hpp"
#include "affclip/data.hpp"
#include "affclip/metrics.hpp"
#include "affclip/model.hpp"
#include "affclip/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace affclip {

struct EvalOptions {
  EvalConfig config;
  std::optional<std::filesystem::path> render_dir;  // input | prediction | ground truth, one PNG per sample
  std::string dataset_name;                          // echoed in the report
};

/// Predicts every sample and scores it against its ground-truth heatmap.
/// KLD and SIM use the post-processed prediction, NSS the resized raw logits.
MetricReport evaluate(const AffordanceModel& model, const std::vector<AffordanceSample>& samples, const EvalOptions& opt);

/// IoU of (sigmoid(logit) > threshold) against the binary masks, averaged over samples.
struct IouResult {
  double mean_iou = 0.0;
  std::vector<double> per_sample;
};
IouResult mask_iou(const AffordanceModel& model, const ReferringSource& data, double threshold = 0.5,
                   Index batch_size = 8);

double binary_iou(const BinaryMask& a, const BinaryMask& b);

struct AblationEntry {
  std::string label;  // e.g. "{F1,F2}"
  std::filesystem::path checkpoint;
  std::optional<MetricReport> report;
};

struct AblationResult {
  std::vector<AblationEntry> entries;
  std::vector<std::filesystem::path> missing;  // checkpoints that do not exist

  nlohmann::json to_json() const;
  std::string table() const;
};

/// Evaluates one checkpoint per level subset on the same samples. Missing
/// checkpoints are listed instead of aborting the sweep. With `render_dir`,
/// writes one side-by-side PNG per sample (input, then one overlay per entry).
AblationResult run_ablation(const std::vector<std::filesystem::path>& checkpoints,
                            const std::vector<AffordanceSample>& samples, const EvalOptions& opt,
                            const std::filesystem::path& weights = {});

/// Conventional checkpoint location for a level subset inside an ablation run directory.
std::filesystem::path ablation_checkpoint(const std::filesystem::path& runs_dir, const LevelSet& levels);

/// File-name-safe form of a sample id.
std::string sanitize_id(const std::string& id);

}  // namespace affclip
