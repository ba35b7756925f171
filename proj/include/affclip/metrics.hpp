#pragma once

#include "affclip/tensor.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace affclip {

using EvalMap = Eigen::ArrayXXd;

inline constexpr double kDefaultEpsilon = 1e-12;

/// Rescales a non-negative map to unit mass. Throws DegenerateInput when the
/// map is all zero, has negative or non-finite entries.
EvalMap normalize_mass(const EvalMap& m, const char* what = "map");
bool is_normalized(const EvalMap& m, double tol = 1e-9);

/// sum_i g_i * log(eps + g_i / (eps + m_i)) on unit-mass versions of both maps.
double kld(const EvalMap& m, const EvalMap& m_gt, double eps = kDefaultEpsilon);

/// sum_i min(m_i, g_i) on unit-mass versions of both maps.
double sim(const EvalMap& m, const EvalMap& m_gt);

struct NssResult {
  double value = 0.0;
  bool degenerate = false;  // prediction had zero spread
};

/// Mean of the population z-scores of m weighted by m_gt (weights sum to N = sum g).
NssResult nss_checked(const EvalMap& m, const EvalMap& m_gt);
inline double nss(const EvalMap& m, const EvalMap& m_gt) { return nss_checked(m, m_gt).value; }

struct PostprocessOptions {
  bool sigmoid = true;
  bool minmax = true;
};

/// Resized to the ground-truth grid (bilinear), then sigmoid and min-max as
/// configured. A constant map becomes all ones and sets `degenerate`.
EvalMap postprocess_prediction(const EvalMap& logits, Index gt_h, Index gt_w, const PostprocessOptions& opt,
                               bool* degenerate = nullptr);

struct SampleMetrics {
  std::string id;
  double kld = 0.0, sim = 0.0, nss = 0.0;
  bool degenerate = false;
};

struct MetricReport {
  double kld = 0.0, sim = 0.0, nss = 0.0;
  std::vector<SampleMetrics> per_sample;
  Index n_samples = 0;
  Index degenerate_count = 0;
  nlohmann::json config = nlohmann::json::object();

  /// Sorts samples by id and recomputes aggregates, so the result does not
  /// depend on the order samples were evaluated in.
  void finalize();

  nlohmann::json to_json() const;
  std::string dump() const;
  /// Parses and re-checks that aggregates equal the mean of per-sample values.
  static MetricReport from_json(const nlohmann::json& j);
};

}  // namespace affclip
