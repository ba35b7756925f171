// affclip command line: train, eval, predict, ablate, serve, synth, init, info.
#include "affclip/config.hpp"
#include "affclip/data.hpp"
#include "affclip/errors.hpp"
#include "affclip/eval.hpp"
#include "affclip/model.hpp"
#include "affclip/service.hpp"
#include "affclip/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace affclip;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2 };

void write_text(const fs::path& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

int cmd_train(const fs::path& config, const std::vector<std::string>& overrides, const fs::path& resume) {
  RunConfig cfg = RunConfig::load(config, overrides);
  std::shared_ptr<const Backbone> backbone = make_backbone(cfg.backbone);
  cfg.adopt_backbone(backbone->info());
  const auto source = make_source(cfg.data);
  std::optional<fs::path> from;
  if (!resume.empty()) from = resume;
  const TrainResult r = train(cfg, *backbone, *source, from);
  nlohmann::json out = {{"checkpoint", r.final_checkpoint.string()},
                        {"steps", r.last_step},
                        {"final_loss", r.losses.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.losses.back())},
                        {"seconds", r.seconds}};
  std::cout << out.dump() << "\n";
  return kOk;
}

EvalOptions eval_options(const LoadedCheckpoint& ckpt, const fs::path& manifest, const fs::path& render_dir) {
  EvalOptions opt;
  opt.config = ckpt.config.eval;
  opt.dataset_name = manifest.filename().string();
  if (!render_dir.empty()) opt.render_dir = render_dir;
  return opt;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest, const fs::path& out, const fs::path& render_dir,
             const fs::path& weights) {
  const LoadedCheckpoint ckpt = read_checkpoint(checkpoint);
  const AffordanceModel model = AffordanceModel::from_checkpoint(checkpoint, weights);
  const auto samples = load_affordance_eval(manifest);
  const MetricReport report = evaluate(model, samples, eval_options(ckpt, manifest, render_dir));
  write_text(out, report.dump());
  if (!out.empty() && out != "-")
    std::clog << "KLD " << report.kld << "  SIM " << report.sim << "  NSS " << report.nss << "  (" << report.n_samples
              << " samples, " << report.degenerate_count << " degenerate)\n";
  return kOk;
}

int cmd_predict(const fs::path& checkpoint, const fs::path& image_path, const std::string& prompt, const fs::path& out,
                const fs::path& overlay, const fs::path& weights) {
  const AffordanceModel model = AffordanceModel::from_checkpoint(checkpoint, weights);
  const Image image = read_image(image_path);
  const EvalMap logits = model.predict_native(image, prompt);
  const Heatmap16 h = quantize_heatmap(logits);
  if (!out.empty()) write_file(out, encode_png_gray16(h.levels));
  if (!overlay.empty()) {
    const EvalMap scores = h.levels.cast<double>() / 65535.0;
    write_file(overlay, encode_png_rgb8(render_overlay(image, scores)));
  }
  nlohmann::json summary = {{"prompt", prompt},       {"width", image.width},         {"height", image.height},
                            {"min_logit", h.min_logit}, {"max_logit", h.max_logit}, {"model_tag", model.model_tag()}};
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_ablate(std::vector<fs::path> checkpoints, const std::vector<std::string>& levels, const fs::path& runs_dir,
               bool train_missing, const fs::path& config, const std::vector<std::string>& overrides,
               const fs::path& manifest, const fs::path& out, const fs::path& render_dir, const fs::path& weights) {
  for (const auto& spec : levels) {
    const LevelSet set = LevelSet::parse(spec);
    const fs::path ckpt = ablation_checkpoint(runs_dir, set);
    if (train_missing && !fs::exists(ckpt)) {
      std::vector<std::string> o = overrides;
      o.push_back("decoder.levels=\"" + set.to_string() + "\"");
      o.push_back("train.checkpoint_dir=\"" + ckpt.parent_path().string() + "\"");
      RunConfig cfg = RunConfig::load(config, o);
      std::shared_ptr<const Backbone> backbone = make_backbone(cfg.backbone);
      cfg.adopt_backbone(backbone->info());
      std::clog << "training levels {" << set.to_string() << "} into " << ckpt.parent_path().string() << "\n";
      train(cfg, *backbone, *make_source(cfg.data));
    }
    checkpoints.push_back(ckpt);
  }
  if (checkpoints.empty()) throw ConfigError("ablate: give --levels or --checkpoints");
  EvalOptions opt;
  for (const auto& c : checkpoints)
    if (fs::exists(c)) {
      opt = eval_options(read_checkpoint(c), manifest, render_dir);
      break;
    }
  const auto samples = load_affordance_eval(manifest);
  const AblationResult r = run_ablation(checkpoints, samples, opt, weights);
  std::cout << r.table();
  if (!out.empty()) write_text(out, r.to_json().dump(2) + "\n");
  return r.entries.empty() ? kUsage : kOk;
}

int cmd_serve(const fs::path& checkpoint, const std::string& host, int port, std::size_t max_mb, std::size_t threads,
              const fs::path& weights) {
  auto model = std::make_shared<const AffordanceModel>(AffordanceModel::from_checkpoint(checkpoint, weights));
  ServiceOptions opt;
  opt.host = host;
  opt.port = port;
  opt.max_upload_bytes = max_mb << 20;
  opt.threads = threads;
  PredictionService service(model, opt);
  const int bound = service.bind();
  std::cout << "listening on http://" << host << ":" << bound << " (model " << model->model_tag() << ")" << std::endl;
  service.serve();
  return kOk;
}

int cmd_info(const fs::path& checkpoint, const fs::path& config) {
  RunConfig cfg;
  nlohmann::json out;
  if (!checkpoint.empty()) {
    const LoadedCheckpoint ckpt = read_checkpoint(checkpoint);
    cfg = ckpt.config;
    out = {{"model_tag", ckpt.model_tag},
           {"step", ckpt.meta.step},
           {"seed", ckpt.meta.seed},
           {"encoder_digest", ckpt.meta.encoder_digest},
           {"ema_loss", ckpt.meta.ema_loss},
           {"has_optimizer_state", ckpt.has_optimizer_state()}};
  } else {
    cfg = RunConfig::load(config);
  }
  const FpnDecoder<float> decoder(cfg.decoder);
  out["levels"] = cfg.decoder.levels.to_string();
  out["trainable_parameters"] = decoder.trainable_count();
  out["closed_form_parameters"] = cfg.decoder.closed_form_parameter_count();
  out["backbone"] = cfg.backbone.kind;
  std::cout << out.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-vocabulary affordance heatmaps from a frozen image-text encoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "affclip 1.0.0");

  fs::path config, resume, checkpoint, manifest, out, render_dir, image, overlay, weights, synth_dir;
  std::vector<std::string> overrides;
  std::vector<fs::path> checkpoints;
  std::string prompt, host = "127.0.0.1";
  int port = 8080;
  std::size_t max_mb = 16, threads = 4, count = 64;
  std::uint64_t seed = 0;
  Index canvas = 128;

  auto* train_cmd = app.add_subcommand("train", "Train the decoder on a frozen backbone");
  train_cmd->add_option("--config", config, "JSON config (defaults for anything missing)")->check(CLI::ExistingFile);
  train_cmd->add_option("--override,-o", overrides, "key=value, e.g. train.learning_rate=1e-3");
  train_cmd->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on an affordance manifest (KLD, SIM, NSS)");
  eval_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", out, "Report path (default stdout)");
  eval_cmd->add_option("--render-dir", render_dir, "Write one overlay per sample");
  eval_cmd->add_option("--weights", weights, "Override the backbone weights path");

  auto* predict_cmd = app.add_subcommand("predict", "Heatmap for one image and prompt");
  predict_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--image", image)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--prompt", prompt)->required();
  predict_cmd->add_option("--out", out, "16-bit grayscale PNG heatmap");
  predict_cmd->add_option("--overlay", overlay, "Colour overlay PNG");
  predict_cmd->add_option("--weights", weights, "Override the backbone weights path");

  std::vector<std::string> levels;
  fs::path runs_dir = "runs/ablation";
  bool train_missing = false;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare checkpoints trained with different feature levels");
  ablate_cmd->add_option("--levels", levels, "Level subsets, e.g. 1 1,2 1,2,3");
  ablate_cmd->add_option("--runs-dir", runs_dir, "Holds levels_<subset>/final.ckpt");
  ablate_cmd->add_flag("--train", train_missing, "Train subsets whose checkpoint is missing");
  ablate_cmd->add_option("--config", config, "Base training config for --train")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--override,-o", overrides, "Base training overrides for --train");
  ablate_cmd->add_option("--checkpoints", checkpoints, "Explicit checkpoints (in addition to --levels)");
  ablate_cmd->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
  ablate_cmd->add_option("--out", out, "JSON table");
  ablate_cmd->add_option("--render-dir", render_dir, "Side-by-side overlays");
  ablate_cmd->add_option("--weights", weights, "Override the backbone weights path");

  auto* serve_cmd = app.add_subcommand("serve", "HTTP prediction service");
  serve_cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--port", port, "0 picks a free port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--max-upload-mb", max_mb)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--threads", threads)->check(CLI::PositiveNumber);
  serve_cmd->add_option("--weights", weights, "Override the backbone weights path");

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic shapes dataset");
  synth_cmd->add_option("--out", synth_dir)->required();
  synth_cmd->add_option("--count", count)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--canvas", canvas)->check(CLI::Range(32, 4096));

  auto* init_cmd = app.add_subcommand("init", "Print or write the default configuration");
  init_cmd->add_option("--out", out);

  auto* info_cmd = app.add_subcommand("info", "Describe a checkpoint or configuration");
  info_cmd->add_option("--checkpoint", checkpoint)->check(CLI::ExistingFile);
  info_cmd->add_option("--config", config)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(config, overrides, resume);
    if (*eval_cmd) return cmd_eval(checkpoint, manifest, out, render_dir, weights);
    if (*predict_cmd) return cmd_predict(checkpoint, image, prompt, out, overlay, weights);
    if (*ablate_cmd) return cmd_ablate(checkpoints, levels, runs_dir, train_missing, config, overrides, manifest, out, render_dir, weights);
    if (*serve_cmd) return cmd_serve(checkpoint, host, port, max_mb, threads, weights);
    if (*synth_cmd) {
      write_synthetic_dataset(synth_dir, seed, count, canvas);
      std::cout << synth_dir.string() << "\n";
      return kOk;
    }
    if (*init_cmd) {
      write_text(out, RunConfig::defaults().dump(2) + "\n");
      return kOk;
    }
    if (*info_cmd) return cmd_info(checkpoint, config);
  } catch (const TrainingAborted& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const WeightsLoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DegenerateInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
