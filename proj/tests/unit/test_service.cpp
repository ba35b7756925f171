#include <doctest.h>

#include "../support/support.hpp"

#include "affclip/image_io.hpp"
#include "affclip/service.hpp"

#include <httplib.h>

#include <future>

using namespace affclip;
namespace fs = std::filesystem;

namespace {

fs::path golden_dir() { return testing::source_dir() / "tests" / "golden"; }

std::shared_ptr<const AffordanceModel> golden_model() {
  static const auto model =
      std::make_shared<const AffordanceModel>(AffordanceModel::from_checkpoint(golden_dir() / "model.ckpt"));
  return model;
}

std::string image_bytes(const std::string& name = "0000.png") {
  const Bytes b = read_file(golden_dir() / "images" / name);
  return std::string(b.begin(), b.end());
}

httplib::Result post(httplib::Client& cli, const std::string& image, const std::string& prompt) {
  httplib::MultipartFormDataItems items;
  if (!image.empty()) items.push_back({"image", image, "image.png", "image/png"});
  items.push_back({"prompt", prompt, "", ""});
  return cli.Post("/predict", items);
}

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("base64 round-trip") {
    const std::vector<std::uint8_t> data{0, 1, 2, 250, 255, 7, 9};
    for (std::size_t n = 0; n <= data.size(); ++n) {
      const std::span<const std::uint8_t> part(data.data(), n);
      CHECK(base64_decode(base64_encode(part)) == std::vector<std::uint8_t>(part.begin(), part.end()));
    }
    CHECK(base64_encode(std::vector<std::uint8_t>{'M', 'a', 'n'}) == "TWFu");
  }

  TEST_CASE("health and prediction over HTTP") {
    PredictionService svc(golden_model(), ServiceOptions{"127.0.0.1", 0});
    const int port = svc.start();
    REQUIRE(port > 0);
    httplib::Client cli("127.0.0.1", port);

    auto health = cli.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(nlohmann::json::parse(health->body)["model_tag"] == golden_model()->model_tag());
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

    auto res = post(cli, image_bytes(), "the blue circle");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    const auto j = nlohmann::json::parse(res->body);
    const Image img = read_image(golden_dir() / "images" / "0000.png");
    CHECK(j["width"] == img.width);
    CHECK(j["height"] == img.height);
    const auto png = base64_decode(j["heatmap"].get<std::string>());
    const auto levels = decode_png_gray16(png);
    CHECK(levels.rows() == img.height);
    CHECK(levels.cols() == img.width);
    CHECK(levels.maxCoeff() == 65535);
    CHECK(levels.minCoeff() == 0);
    CHECK(j["min_logit"].get<double>() < j["max_logit"].get<double>());
    CHECK(j == prediction_json(*golden_model(), img, "the blue circle"));

    auto again = post(cli, image_bytes(), "the blue circle");
    REQUIRE(again);
    CHECK(again->body == res->body);

    auto pre = cli.Options("/predict");
    REQUIRE(pre);
    CHECK(pre->status == 204);
    auto none = cli.Get("/nothing");
    REQUIRE(none);
    CHECK(none->status == 404);
    svc.stop();
  }

  TEST_CASE("client errors answer 400 with a message") {
    PredictionService svc(golden_model(), ServiceOptions{"127.0.0.1", 0});
    httplib::Client cli("127.0.0.1", svc.start());
    for (const auto& [image, prompt] : std::vector<std::pair<std::string, std::string>>{
             {image_bytes(), ""}, {image_bytes(), "  "}, {"", "the cup"}, {"not an image at all", "the cup"}}) {
      auto res = post(cli, image, prompt);
      REQUIRE(res);
      CHECK(res->status == 400);
      CHECK(nlohmann::json::parse(res->body).contains("error"));
    }
    auto plain = cli.Post("/predict", "{}", "application/json");
    REQUIRE(plain);
    CHECK(plain->status == 400);
    svc.stop();
  }

  TEST_CASE("oversized uploads answer 413") {
    ServiceOptions opt{"127.0.0.1", 0};
    opt.max_upload_bytes = 2048;
    PredictionService svc(golden_model(), opt);
    httplib::Client cli("127.0.0.1", svc.start());
    auto res = post(cli, std::string(8192, 'x'), "the cup");
    REQUIRE(res);
    CHECK(res->status == 413);
    svc.stop();
  }

  TEST_CASE("concurrent requests with different prompts") {
    PredictionService svc(golden_model(), ServiceOptions{"127.0.0.1", 0});
    const int port = svc.start();
    const std::vector<std::string> prompts{"the blue circle", "the red square", "the green triangle", "the purple square"};
    const Image img = read_image(golden_dir() / "images" / "0000.png");
    std::vector<std::future<std::string>> futures;
    for (int round = 0; round < 2; ++round)
      for (const auto& p : prompts)
        futures.push_back(std::async(std::launch::async, [&, p] {
          httplib::Client cli("127.0.0.1", port);
          auto res = post(cli, image_bytes(), p);
          return res && res->status == 200 ? res->body : std::string();
        }));
    std::vector<std::string> bodies;
    for (auto& f : futures) bodies.push_back(f.get());
    for (std::size_t i = 0; i < bodies.size(); ++i) {
      CAPTURE(i);
      REQUIRE_FALSE(bodies[i].empty());
      CHECK(nlohmann::json::parse(bodies[i]) == prediction_json(*golden_model(), img, prompts[i % prompts.size()]));
    }
    CHECK(bodies[0] != bodies[1]);
    svc.stop();
  }
}
