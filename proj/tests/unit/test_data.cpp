#include <doctest.h>

#include "../support/support.hpp"

#include "affclip/data.hpp"
#include "affclip/errors.hpp"
#include "affclip/image_io.hpp"

#include <fstream>

using namespace affclip;
namespace fs = std::filesystem;

namespace {

void write_gray8(const fs::path& path, const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>& levels) {
  write_file(path, encode_png_gray8(levels));
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("referring manifests resolve relative paths and keep line ids") {
    const fs::path dir = testing::scratch_dir("manifest");
    Image img(8, 8);
    write_file(dir / "a.png", encode_png_rgb8(img));
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> m = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(8, 8);
    m.block(2, 2, 3, 3) = 255;
    write_gray8(dir / "a_mask.png", m);
    std::ofstream(dir / "train.jsonl") << R"({"image": "a.png", "text": "the cup", "mask": "a_mask.png"})" << "\n\n"
                                       << R"({"image": "a.png", "text": "the left cup", "mask": "a_mask.png", "split": "val"})"
                                       << "\n";
    const auto samples = load_referring_manifest(dir / "train.jsonl");
    REQUIRE(samples.size() == 2);
    CHECK(samples[0].image_path == dir / "a.png");
    CHECK(samples[1].split == "val");
    CHECK(samples[0].id != samples[1].id);

    const ReferringItem item = load_referring_item(samples[0], 16);
    CHECK(item.image.height == 16);
    CHECK(item.mask.rows() == 16);
    CHECK(item.mask.maxCoeff() == 1);
    CHECK(item.mask.cast<int>().sum() == 36);
  }

  TEST_CASE("malformed manifests and masks are rejected with the sample id") {
    const fs::path dir = testing::scratch_dir("bad_manifest");
    std::ofstream(dir / "missing.jsonl") << R"({"image": "a.png", "mask": "m.png"})" << "\n";
    CHECK_THROWS_AS(load_referring_manifest(dir / "missing.jsonl"), DataValidationError);
    std::ofstream(dir / "broken.jsonl") << "{not json\n";
    CHECK_THROWS_AS(load_referring_manifest(dir / "broken.jsonl"), DataValidationError);
    CHECK_THROWS_AS(load_referring_manifest(dir / "absent.jsonl"), IoError);

    write_file(dir / "a.png", encode_png_rgb8(Image(4, 4)));
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> m = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(4, 4);
    m(0, 0) = 255;
    m(1, 1) = 128;
    write_gray8(dir / "gray.png", m);
    write_gray8(dir / "small.png", Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(2, 2));
    ReferringSample s{"x:1", dir / "a.png", "thing", dir / "gray.png", "train"};
    try {
      load_referring_item(s, 32);
      FAIL("expected DataValidationError");
    } catch (const DataValidationError& e) {
      CHECK(e.sample_id() == "x:1");
    }
    s.mask_path = dir / "small.png";
    CHECK_THROWS_AS(load_referring_item(s, 32), DataValidationError);
  }

  TEST_CASE("synthetic scenes are valid, distinct and reproducible") {
    const auto suite = synthetic_suite(2024, 24, 128);
    REQUIRE(suite.size() == 24);
    for (const auto& spec : suite) {
      CHECK_NOTHROW(spec.validate());
      const SyntheticSample s = generate_synthetic(spec);
      CHECK(s.mask.cast<int>().sum() > 0);
      CHECK(is_normalized(s.heatmap));
      const ShapeSpec& t = spec.shapes[spec.target];
      CHECK(s.mask(static_cast<Index>(t.cy), static_cast<Index>(t.cx)) == 1);
      CHECK(s.expression == spec.expression());
    }
    CHECK(synthetic_checksum(suite) == synthetic_checksum(synthetic_suite(2024, 24, 128)));
    CHECK(synthetic_checksum(suite) != synthetic_checksum(synthetic_suite(2025, 24, 128)));
    CHECK(synthetic_checksum(synthetic_suite(2024, 16, 128)) ==
          "412631320db3520785c1964c2c0d7a9a85cf4c566d78c87f17780020365f0049");
  }

  TEST_CASE("scene validation") {
    SyntheticSceneSpec spec;
    spec.canvas = 64;
    spec.shapes = {{ShapeKind::Circle, "red", 16, 16, 8}, {ShapeKind::Circle, "red", 48, 48, 8}};
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec.shapes[1].color = "blue";
    CHECK_NOTHROW(spec.validate());
    spec.shapes[1].cx = 20;
    spec.shapes[1].cy = 20;
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec.shapes[1] = {ShapeKind::Square, "blue", 60, 48, 8};
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec.shapes[1] = {ShapeKind::Square, "mauve", 48, 48, 8};
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec.shapes[1].color = "blue";
    spec.target = 2;
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
  }

  TEST_CASE("synthetic dataset round-trips through the manifest loaders") {
    const fs::path dir = testing::scratch_dir("synthetic");
    write_synthetic_dataset(dir, 7, 4, 64);
    const auto referring = load_referring_manifest(dir / "referring.jsonl");
    const auto affordance = load_affordance_eval(dir / "affordance.jsonl");
    REQUIRE(referring.size() == 4);
    REQUIRE(affordance.size() == 4);
    const auto specs = synthetic_suite(7, 4, 64);
    for (std::size_t i = 0; i < 4; ++i) {
      const SyntheticSample ref = generate_synthetic(specs[i]);
      const ReferringItem r = load_referring_item(referring[i], 64);
      CHECK((r.mask == ref.mask).all());
      CHECK(r.expression == ref.expression);
      const AffordanceItem a = load_affordance_item(affordance[i]);
      CHECK(is_normalized(a.heatmap));
      CHECK((a.heatmap - ref.heatmap).abs().maxCoeff() < 1e-4 * ref.heatmap.maxCoeff() + 1e-9);
    }
  }

  TEST_CASE("heatmap and mask resizing") {
    EvalMap h = EvalMap::Zero(4, 4);
    h(1, 1) = 3.0;
    const EvalMap r = resize_heatmap(h, 8, 8);
    CHECK(is_normalized(r));
    BinaryMask m = BinaryMask::Zero(2, 2);
    m(0, 1) = 1;
    const BinaryMask big = resize_mask(m, 4, 4);
    CHECK(big.cast<int>().sum() == 4);
    CHECK(big(0, 3) == 1);
  }

  TEST_CASE("prefetcher delivers in order and rethrows producer errors") {
    int n = 0;
    Prefetcher<int> p(2, [&]() -> std::optional<int> {
      if (n == 5) return std::nullopt;
      return n++;
    });
    for (int i = 0; i < 5; ++i) CHECK(p.next() == i);
    CHECK_FALSE(p.next().has_value());

    int k = 0;
    Prefetcher<int> failing(2, [&]() -> std::optional<int> {
      if (k == 2) throw DataValidationError("s:3", "bad");
      return k++;
    });
    CHECK(failing.next() == 0);
    CHECK(failing.next() == 1);
    CHECK_THROWS_AS(failing.next(), DataValidationError);
  }
}
