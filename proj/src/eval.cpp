#include "affclip/eval.hpp"

#include "affclip/errors.hpp"
#include "affclip/resample.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

namespace fs = std::filesystem;

namespace affclip {
namespace {

EvalMap sigmoid(const EvalMap& m) { return 1.0 / (1.0 + (-m).exp()); }

EvalMap minmax01(const EvalMap& m) {
  const double lo = m.minCoeff(), hi = m.maxCoeff();
  if (!(hi > lo)) return EvalMap::Zero(m.rows(), m.cols());
  return (m - lo) / (hi - lo);
}

Image hconcat(const std::vector<Image>& tiles) {
  Index w = 0, h = 0;
  for (const auto& t : tiles) {
    w += t.width;
    h = std::max(h, t.height);
  }
  Image out(h, w);
  Index x0 = 0;
  for (const auto& t : tiles) {
    for (Index y = 0; y < t.height; ++y)
      for (Index x = 0; x < t.width; ++x)
        for (Index c = 0; c < 3; ++c) out.at(y, x0 + x, c) = t.at(y, x, c);
    x0 += t.width;
  }
  return out;
}

// Runs the model over samples in batches and hands each native-resolution logit map to `visit`.
template <typename Visit>
void predict_all(const AffordanceModel& model, const std::vector<AffordanceSample>& samples, Index batch_size,
                 Visit&& visit) {
  const std::size_t bs = static_cast<std::size_t>(std::max<Index>(1, batch_size));
  for (std::size_t start = 0; start < samples.size(); start += bs) {
    const std::size_t end = std::min(samples.size(), start + bs);
    std::vector<AffordanceItem> items;
    std::vector<Image> images;
    std::vector<std::string> prompts;
    for (std::size_t i = start; i < end; ++i) {
      items.push_back(load_affordance_item(samples[i]));
      images.push_back(items.back().image);
      prompts.push_back(items.back().action);
    }
    const ActivationMap<float> act = model.predict(images, prompts);
    for (std::size_t k = 0; k < items.size(); ++k) visit(items[k], act.map(static_cast<Index>(k)).template cast<double>());
  }
}

}  // namespace

fs::path ablation_checkpoint(const fs::path& runs_dir, const LevelSet& levels) {
  std::string name = "levels";
  for (int l = 1; l <= 3; ++l)
    if (levels.has(l)) name += "_" + std::to_string(l);
  return runs_dir / name / "final.ckpt";
}

std::string sanitize_id(const std::string& id) {
  std::string out;
  for (char c : id) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return out.empty() ? "_" : out;
}

MetricReport evaluate(const AffordanceModel& model, const std::vector<AffordanceSample>& samples, const EvalOptions& opt) {
  if (samples.empty()) throw InvalidInput("evaluation set is empty");
  if (opt.render_dir) fs::create_directories(*opt.render_dir);
  MetricReport report;
  predict_all(model, samples, opt.config.batch_size, [&](const AffordanceItem& item, const EvalMap& logits) {
    const Index gh = item.heatmap.rows(), gw = item.heatmap.cols();
    SampleMetrics s;
    s.id = item.id;
    bool flat = false;
    const EvalMap pred = postprocess_prediction(logits, gh, gw, opt.config.postprocess, &flat);
    const NssResult n = nss_checked(resize_map(logits, gh, gw, Interpolation::Bilinear), item.heatmap);
    s.kld = kld(pred, item.heatmap, opt.config.epsilon);
    s.sim = sim(pred, item.heatmap);
    s.nss = n.value;
    s.degenerate = flat || n.degenerate;
    report.per_sample.push_back(s);
    if (opt.render_dir) {
      const EvalMap native = resize_map(logits, item.image.height, item.image.width, Interpolation::Bilinear);
      const Image overlay = render_overlay(item.image, minmax01(sigmoid(native)));
      const EvalMap gt = minmax01(resize_map(item.heatmap, item.image.height, item.image.width, Interpolation::Bilinear));
      const Image panel = hconcat({item.image, overlay, render_overlay(item.image, gt)});
      write_file(*opt.render_dir / (sanitize_id(item.id) + ".png"), encode_png_rgb8(panel));
    }
  });
  report.config = {
      {"dataset", opt.dataset_name},
      {"model_tag", model.model_tag()},
      {"input_size", model.input_size()},
      {"levels", model.decoder().config().levels.to_string()},
      {"sigmoid", opt.config.postprocess.sigmoid},
      {"minmax", opt.config.postprocess.minmax},
      {"epsilon", opt.config.epsilon},
  };
  report.finalize();
  return report;
}

double binary_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InvalidInput("IoU: mask sizes differ");
  const auto pa = a != 0, pb = b != 0;
  const Index inter = (pa && pb).count(), uni = (pa || pb).count();
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

IouResult mask_iou(const AffordanceModel& model, const ReferringSource& data, double threshold, Index batch_size) {
  if (data.size() == 0) throw InvalidInput("IoU: empty dataset");
  const double cut = std::log(threshold / (1.0 - threshold));  // sigmoid(x) > t  <=>  x > logit(t)
  IouResult r;
  const std::size_t bs = static_cast<std::size_t>(std::max<Index>(1, batch_size));
  for (std::size_t start = 0; start < data.size(); start += bs) {
    const std::size_t end = std::min(data.size(), start + bs);
    std::vector<ReferringItem> items;
    std::vector<Image> images;
    std::vector<std::string> prompts;
    for (std::size_t i = start; i < end; ++i) {
      items.push_back(data.get(i, model.input_size()));
      images.push_back(items.back().image);
      prompts.push_back(items.back().expression);
    }
    const ActivationMap<float> act = model.predict(images, prompts);
    for (std::size_t k = 0; k < items.size(); ++k) {
      const BinaryMask pred = (act.map(static_cast<Index>(k)).template cast<double>() > cut).cast<std::uint8_t>();
      r.per_sample.push_back(binary_iou(pred, items[k].mask));
    }
  }
  double sum = 0.0;
  for (double v : r.per_sample) sum += v;
  r.mean_iou = sum / static_cast<double>(r.per_sample.size());
  return r;
}

nlohmann::json AblationResult::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json row = {{"levels", e.label}, {"checkpoint", e.checkpoint.filename().string()}};
    if (e.report) {
      row["kld"] = e.report->kld;
      row["sim"] = e.report->sim;
      row["nss"] = e.report->nss;
      row["n_samples"] = e.report->n_samples;
    }
    rows.push_back(row);
  }
  nlohmann::json miss = nlohmann::json::array();
  for (const auto& m : missing) miss.push_back(m.string());
  return {{"entries", rows}, {"missing", miss}};
}

std::string AblationResult::table() const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "levels" << std::right << std::setw(10) << "KLD" << std::setw(10) << "SIM"
     << std::setw(10) << "NSS" << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& e : entries) {
    if (!e.report) continue;
    os << std::left << std::setw(14) << e.label << std::right << std::setw(10) << e.report->kld << std::setw(10)
       << e.report->sim << std::setw(10) << e.report->nss << "\n";
  }
  for (const auto& m : missing) os << "missing checkpoint: " << m.string() << "\n";
  return os.str();
}

AblationResult run_ablation(const std::vector<fs::path>& checkpoints, const std::vector<AffordanceSample>& samples,
                            const EvalOptions& opt, const fs::path& weights) {
  AblationResult result;
  std::vector<AffordanceModel> models;
  for (const auto& path : checkpoints) {
    if (!fs::exists(path)) {
      result.missing.push_back(path);
      continue;
    }
    models.push_back(AffordanceModel::from_checkpoint(path, weights));
    EvalOptions plain = opt;
    plain.render_dir.reset();
    AblationEntry e;
    const LevelSet& lv = models.back().decoder().config().levels;
    for (int l = 1; l <= 3; ++l)
      if (lv.has(l)) e.label += (e.label.empty() ? "F" : ",F") + std::to_string(l);
    e.label = "{" + e.label + "}";
    e.checkpoint = path;
    e.report = evaluate(models.back(), samples, plain);
    result.entries.push_back(std::move(e));
  }
  if (opt.render_dir && !models.empty()) {
    fs::create_directories(*opt.render_dir);
    for (const auto& s : samples) {
      const AffordanceItem item = load_affordance_item(s);
      std::vector<Image> tiles{item.image};
      for (const auto& m : models) {
        const EvalMap native = m.predict_native(item.image, item.action);
        tiles.push_back(render_overlay(item.image, minmax01(sigmoid(native))));
      }
      write_file(*opt.render_dir / (sanitize_id(item.id) + ".png"), encode_png_rgb8(hconcat(tiles)));
    }
  }
  return result;
}

}  // namespace affclip
