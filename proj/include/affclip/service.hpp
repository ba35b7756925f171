#pragma once

#include "affclip/model.hpp"

#include <json.hpp>

#include <cstddef>
#include <memory>
#include <span>
#include <string>

namespace affclip {

struct ServiceOptions {
  std::string host = "127.0.0.1";
  int port = 8080;                          // 0 picks a free port
  std::size_t max_upload_bytes = 16u << 20;  // larger requests get 413
  std::string cors_origin = "*";
  std::size_t threads = 4;
};

/// Wire format of one prediction: 16-bit PNG heatmap at the image's own size,
/// min-max normalized, base64 encoded, with the logit range to undo it.
nlohmann::json prediction_json(const AffordanceModel& model, const Image& image, const std::string& prompt);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// HTTP front end:
///   GET  /health   -> {"status": "ok", "model_tag": ...}
///   POST /predict  multipart fields "image" (PNG/JPEG) and "prompt"
/// Client errors answer 400 with {"error": ...}; unexpected failures answer
/// 500 with an opaque {"error_id": ...} that is also written to stderr.
class PredictionService {
 public:
  PredictionService(std::shared_ptr<const AffordanceModel> model, ServiceOptions opt = {});
  ~PredictionService();
  PredictionService(const PredictionService&) = delete;
  PredictionService& operator=(const PredictionService&) = delete;

  /// Binds the socket and returns the bound port. Throws IoError on failure.
  int bind();
  /// Serves until stop(); call bind() first.
  void serve();
  /// bind() and serve() on a background thread; returns once accepting.
  int start();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

}  // namespace affclip
