#include <doctest.h>

#include "../support/support.hpp"

#include "affclip/eval.hpp"

#include <algorithm>

using namespace affclip;
namespace fs = std::filesystem;

namespace {

fs::path golden_dir() { return testing::source_dir() / "tests" / "golden"; }

const AffordanceModel& golden_model() {
  static const AffordanceModel model = AffordanceModel::from_checkpoint(golden_dir() / "model.ckpt");
  return model;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("report covers every sample and does not depend on sample order") {
    auto samples = load_affordance_eval(golden_dir() / "affordance.jsonl");
    EvalOptions opt;
    opt.dataset_name = "golden";
    const MetricReport a = evaluate(golden_model(), samples, opt);
    std::reverse(samples.begin(), samples.end());
    const MetricReport b = evaluate(golden_model(), samples, opt);
    CHECK(a.n_samples == static_cast<Index>(samples.size()));
    CHECK(a.per_sample.size() == samples.size());
    CHECK(a.dump() == b.dump());
    CHECK(a.config["dataset"] == "golden");
    CHECK(a.config["model_tag"] == golden_model().model_tag());
    CHECK(std::isfinite(a.kld));
    CHECK(a.sim > 0.0);
    CHECK(a.sim <= 1.0);
  }

  TEST_CASE("report equals the stored golden report") {
    const auto samples = load_affordance_eval(golden_dir() / "affordance.jsonl");
    const nlohmann::json stored = nlohmann::json::parse(read_file(golden_dir() / "report.json"));
    EvalOptions opt;
    opt.dataset_name = stored["config"]["dataset"].get<std::string>();
    const MetricReport r = evaluate(golden_model(), samples, opt);
    CHECK(r.kld == doctest::Approx(stored["aggregate"]["kld"].get<double>()).epsilon(1e-12));
    CHECK(r.sim == doctest::Approx(stored["aggregate"]["sim"].get<double>()).epsilon(1e-12));
    CHECK(r.nss == doctest::Approx(stored["aggregate"]["nss"].get<double>()).epsilon(1e-12));
  }

  TEST_CASE("rendering writes one panel per sample") {
    const auto samples = load_affordance_eval(golden_dir() / "affordance.jsonl");
    const fs::path dir = testing::scratch_dir("renders");
    EvalOptions opt;
    opt.render_dir = dir;
    evaluate(golden_model(), std::vector<AffordanceSample>(samples.begin(), samples.begin() + 3), opt);
    Index n = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
      const Image img = read_image(e.path());
      CHECK(img.width == 3 * img.height);
      ++n;
    }
    CHECK(n == 3);
  }

  TEST_CASE("a perfect prediction scores zero divergence and full similarity") {
    const auto samples = load_affordance_eval(golden_dir() / "affordance.jsonl");
    const AffordanceItem item = load_affordance_item(samples[0]);
    CHECK(std::abs(kld(item.heatmap, item.heatmap)) < 1e-8);
    CHECK(sim(item.heatmap, item.heatmap) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(nss(item.heatmap, item.heatmap) > 0.0);
  }

  TEST_CASE("different prompts give different maps") {
    const auto samples = load_affordance_eval(golden_dir() / "affordance.jsonl");
    const Image img = read_image(samples[0].image_path);
    const EvalMap a = golden_model().predict_native(img, "the blue circle");
    const EvalMap b = golden_model().predict_native(img, "the red square");
    CHECK(a.rows() == img.height);
    CHECK(a.cols() == img.width);
    CHECK((a - b).abs().maxCoeff() > 1e-6);
    CHECK((a - golden_model().predict_native(img, "the blue circle")).abs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(golden_model().predict_native(img, "   "), InvalidInput);
  }

  TEST_CASE("mask IoU") {
    BinaryMask a = BinaryMask::Zero(4, 4), b = BinaryMask::Zero(4, 4);
    CHECK(binary_iou(a, b) == 1.0);
    a.block(0, 0, 2, 2) = 1;
    b.block(0, 0, 2, 1) = 1;
    CHECK(binary_iou(a, b) == doctest::Approx(0.5));
    CHECK(binary_iou(a, a) == 1.0);
    const SyntheticSource src(5, 6, 64);
    const IouResult r = mask_iou(golden_model(), src);
    CHECK(r.per_sample.size() == 6);
    CHECK(r.mean_iou >= 0.0);
    CHECK(r.mean_iou <= 1.0);
  }

  TEST_CASE("ablation lists missing checkpoints instead of failing") {
    auto samples = load_affordance_eval(golden_dir() / "affordance.jsonl");
    samples.resize(4);
    const fs::path missing = testing::scratch_dir("ablation") / "levels_1" / "final.ckpt";
    const AblationResult r = run_ablation({golden_dir() / "model.ckpt", missing}, samples, EvalOptions{});
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].label == "{F1,F2,F3}");
    CHECK(r.entries[0].report.has_value());
    REQUIRE(r.missing.size() == 1);
    CHECK(r.missing[0] == missing);
    CHECK(r.table().find("{F1,F2,F3}") != std::string::npos);
    CHECK(r.to_json()["missing"].size() == 1);
    CHECK(ablation_checkpoint("runs", LevelSet::parse("1,2")) == fs::path("runs") / "levels_1_2" / "final.ckpt");
  }

  TEST_CASE("sample ids become safe file names") {
    CHECK(sanitize_id("a/b:3") == "a_b_3");
    CHECK(sanitize_id("0001") == "0001");
  }
}
