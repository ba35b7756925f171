#include "affclip/metrics.hpp"

#include "affclip/errors.hpp"
#include "affclip/resample.hpp"

#include <algorithm>
#include <cmath>

namespace affclip {
namespace {

void check_pair(const EvalMap& a, const EvalMap& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InvalidInput("metric inputs differ in shape: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                       " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  if (a.size() == 0) throw InvalidInput("metric inputs are empty");
}

}  // namespace

EvalMap normalize_mass(const EvalMap& m, const char* what) {
  if (!m.allFinite()) throw DegenerateInput(std::string(what) + " has non-finite values");
  if ((m < 0.0).any()) throw DegenerateInput(std::string(what) + " has negative values");
  const double total = m.sum();
  if (!(total > 0.0)) throw DegenerateInput(std::string(what) + " has zero mass");
  return m / total;
}

bool is_normalized(const EvalMap& m, double tol) { return (m >= 0.0).all() && std::abs(m.sum() - 1.0) <= tol; }

double kld(const EvalMap& m, const EvalMap& m_gt, double eps) {
  check_pair(m, m_gt);
  const EvalMap p = normalize_mass(m, "prediction");
  const EvalMap g = normalize_mass(m_gt, "ground truth");
  return (g * (eps + g / (eps + p)).log()).sum();
}

double sim(const EvalMap& m, const EvalMap& m_gt) {
  check_pair(m, m_gt);
  return normalize_mass(m, "prediction").min(normalize_mass(m_gt, "ground truth")).sum();
}

NssResult nss_checked(const EvalMap& m, const EvalMap& m_gt) {
  check_pair(m, m_gt);
  if (!m.allFinite()) throw DegenerateInput("prediction has non-finite values");
  if ((m_gt < 0.0).any() || !(m_gt.sum() > 0.0)) throw DegenerateInput("ground truth must be non-negative with positive mass");
  const double mean = m.mean();
  const double sd = std::sqrt((m - mean).square().mean());
  if (m.maxCoeff() == m.minCoeff() || !(sd > 0.0)) return {0.0, true};
  return {(((m - mean) / sd) * m_gt).sum() / m_gt.sum(), false};
}

EvalMap postprocess_prediction(const EvalMap& logits, Index gt_h, Index gt_w, const PostprocessOptions& opt,
                               bool* degenerate) {
  EvalMap p = resize_map(logits, gt_h, gt_w, Interpolation::Bilinear);
  if (opt.sigmoid) p = 1.0 / (1.0 + (-p).exp());
  bool flat = false;
  if (opt.minmax) {
    const double lo = p.minCoeff(), hi = p.maxCoeff();
    if (hi > lo) {
      p = (p - lo) / (hi - lo);
    } else {
      p.setOnes();
      flat = true;
    }
  }
  if (degenerate) *degenerate = flat;
  return p;
}

void MetricReport::finalize() {
  std::stable_sort(per_sample.begin(), per_sample.end(),
                   [](const SampleMetrics& a, const SampleMetrics& b) { return a.id < b.id; });
  n_samples = static_cast<Index>(per_sample.size());
  degenerate_count = 0;
  double k = 0.0, s = 0.0, n = 0.0;
  for (const auto& m : per_sample) {
    k += m.kld;
    s += m.sim;
    n += m.nss;
    degenerate_count += m.degenerate ? 1 : 0;
  }
  const double count = n_samples > 0 ? static_cast<double>(n_samples) : 1.0;
  kld = k / count;
  sim = s / count;
  nss = n / count;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& m : per_sample)
    samples.push_back({{"id", m.id}, {"kld", m.kld}, {"sim", m.sim}, {"nss", m.nss}, {"degenerate", m.degenerate}});
  return {{"config", config},
          {"aggregate", {{"kld", kld}, {"sim", sim}, {"nss", nss}}},
          {"n_samples", n_samples},
          {"degenerate_count", degenerate_count},
          {"per_sample", samples}};
}

std::string MetricReport::dump() const { return to_json().dump(2) + "\n"; }

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.config = j.value("config", nlohmann::json::object());
    for (const auto& s : j.at("per_sample"))
      r.per_sample.push_back({s.at("id").get<std::string>(), s.at("kld").get<double>(), s.at("sim").get<double>(),
                              s.at("nss").get<double>(), s.value("degenerate", false)});
    const auto& agg = j.at("aggregate");
    r.kld = agg.at("kld").get<double>();
    r.sim = agg.at("sim").get<double>();
    r.nss = agg.at("nss").get<double>();
    r.n_samples = j.at("n_samples").get<Index>();
    r.degenerate_count = j.at("degenerate_count").get<Index>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed metric report: ") + e.what());
  }
  MetricReport check = r;
  check.finalize();
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
  if (check.n_samples != r.n_samples || check.degenerate_count != r.degenerate_count || !close(check.kld, r.kld) ||
      !close(check.sim, r.sim) || !close(check.nss, r.nss))
    throw InvalidInput("metric report aggregates disagree with its per-sample entries");
  return r;
}

}  // namespace affclip
