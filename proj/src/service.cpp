#include "affclip/service.hpp"

#include "affclip/errors.hpp"
#include "affclip/rng.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <thread>

namespace affclip {

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw InvalidInput("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw InvalidInput("base64: malformed input");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

nlohmann::json prediction_json(const AffordanceModel& model, const Image& image, const std::string& prompt) {
  const Heatmap16 h = quantize_heatmap(model.predict_native(image, prompt));
  return {
      {"width", image.width},
      {"height", image.height},
      {"heatmap", base64_encode(encode_png_gray16(h.levels))},
      {"min_logit", h.min_logit},
      {"max_logit", h.max_logit},
      {"model_tag", model.model_tag()},
  };
}

struct PredictionService::Impl {
  std::shared_ptr<const AffordanceModel> model;
  ServiceOptions opt;
  httplib::Server server;
  std::thread thread;
  std::atomic<std::uint64_t> error_counter{0};

  void reply_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  void install() {
    server.set_payload_max_length(opt.max_upload_bytes);
    const std::size_t threads = std::max<std::size_t>(1, opt.threads);
    server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    server.set_default_headers({{"Access-Control-Allow-Origin", opt.cors_origin}});

    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      reply_json(res, 200, {{"status", "ok"}, {"model_tag", model->model_tag()}});
    });

    server.Options("/predict", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "POST, GET, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
      if (!req.is_multipart_form_data()) {
        reply_json(res, 400, {{"error", "expected multipart/form-data with fields 'image' and 'prompt'"}});
        return;
      }
      if (!req.has_file("image")) {
        reply_json(res, 400, {{"error", "missing field 'image'"}});
        return;
      }
      if (!req.has_file("prompt")) {
        reply_json(res, 400, {{"error", "missing field 'prompt'"}});
        return;
      }
      const std::string prompt = req.get_file_value("prompt").content;
      const std::string& data = req.get_file_value("image").content;
      try {
        const Image image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()), "upload");
        reply_json(res, 200, prediction_json(*model, image, prompt));
      } catch (const InvalidInput& e) {
        reply_json(res, 400, {{"error", e.what()}});
      } catch (const DegenerateInput& e) {
        reply_json(res, 400, {{"error", e.what()}});
      }
    });

    server.set_exception_handler([this](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
      const std::uint64_t n = error_counter.fetch_add(1);
      const auto now = static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count());
      char id[17];
      std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(mix_seed(now, n)));
      std::string what = "unknown exception";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      std::cerr << "error " << id << " on " << req.method << " " << req.path << ": " << what << std::endl;
      reply_json(res, 500, {{"error", "internal error"}, {"error_id", id}});
    });

    server.set_error_handler([this](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      if (res.status == 413) {
        reply_json(res, 413, {{"error", "request exceeds " + std::to_string(opt.max_upload_bytes) + " bytes"}});
      } else if (res.status == 404) {
        reply_json(res, 404, {{"error", "not found"}});
      }
    });
  }
};

PredictionService::PredictionService(std::shared_ptr<const AffordanceModel> model, ServiceOptions opt)
    : impl_(std::make_unique<Impl>()) {
  if (!model) throw ConfigError("service needs a model");
  impl_->model = std::move(model);
  impl_->opt = std::move(opt);
  impl_->install();
}

PredictionService::~PredictionService() { stop(); }

int PredictionService::bind() {
  const int p = impl_->opt.port == 0 ? impl_->server.bind_to_any_port(impl_->opt.host)
                                     : (impl_->server.bind_to_port(impl_->opt.host, impl_->opt.port) ? impl_->opt.port : -1);
  if (p <= 0) throw IoError(impl_->opt.host + ":" + std::to_string(impl_->opt.port), "cannot bind");
  port_ = p;
  return p;
}

void PredictionService::serve() { impl_->server.listen_after_bind(); }

int PredictionService::start() {
  const int p = bind();
  impl_->thread = std::thread([this] { serve(); });
  impl_->server.wait_until_ready();
  return p;
}

void PredictionService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace affclip
