#include "affclip/config.hpp"

#include "affclip/errors.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

namespace affclip {

double TrainConfig::learning_rate_at(Index step, Index total_steps) const {
  if (schedule == LrSchedule::Constant || total_steps <= 1) return adam.learning_rate;
  const double t = static_cast<double>(std::min(step, total_steps) - 1) / static_cast<double>(total_steps - 1);
  return adam.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

nlohmann::json RunConfig::defaults() {
  return nlohmann::json::parse(R"({
  "backbone": {"kind": "stub", "weights": "", "manifest": "", "seed": 0,
               "c1": 512, "c2": 1024, "c3": 2048, "embed": 512,
               "vocab_size": 49152, "context_length": 77, "text_pooling": "eos"},
  "decoder": {"common_width": 64, "levels": "1,2,3", "upsample": "bilinear"},
  "head": {"scale": 1.0, "normalize_text": false, "normalize_pixels": false},
  "train": {"learning_rate": 0.0001, "beta1": 0.9, "beta2": 0.999, "adam_eps": 1e-8,
            "weight_decay": 0.0, "grad_clip": 0.0, "lr_schedule": "constant",
            "batch_size": 32, "epochs": 1, "max_steps": 0, "input_size": 416, "seed": 0,
            "checkpoint_dir": "runs/default", "checkpoint_every": 0, "log_every": 10,
            "loss_at_stride8": false, "mixed_precision": false, "prefetch": 4},
  "data": {"train_manifests": [], "synthetic": {"count": 0, "seed": 0, "canvas": 128}},
  "eval": {"sigmoid": true, "minmax": true, "epsilon": 1e-12, "batch_size": 8}
})");
}

void merge_strict(nlohmann::json& base, const nlohmann::json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

void apply_override(nlohmann::json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  nlohmann::json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override '" + key + "' names a section, not a value");
  if (node->is_string() && !value.is_string()) value = text;
  *node = value;
}

namespace {

template <typename T>
T get(const nlohmann::json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& patch) {
  nlohmann::json j = defaults();
  merge_strict(j, patch);
  RunConfig c;
  auto& b = c.backbone;
  b.kind = get<std::string>(j, "backbone", "kind");
  b.weights = get<std::string>(j, "backbone", "weights");
  b.manifest = get<std::string>(j, "backbone", "manifest");
  b.seed = get<std::uint64_t>(j, "backbone", "seed");
  b.c1 = get<Index>(j, "backbone", "c1");
  b.c2 = get<Index>(j, "backbone", "c2");
  b.c3 = get<Index>(j, "backbone", "c3");
  b.embed = get<Index>(j, "backbone", "embed");
  b.vocab_size = get<std::int64_t>(j, "backbone", "vocab_size");
  b.context_length = get<std::int64_t>(j, "backbone", "context_length");
  b.text_pooling = parse_text_pooling(get<std::string>(j, "backbone", "text_pooling"));

  c.decoder.common_width = get<Index>(j, "decoder", "common_width");
  c.decoder.levels = LevelSet::parse(get<std::string>(j, "decoder", "levels"));
  c.decoder.upsample = parse_interpolation(get<std::string>(j, "decoder", "upsample"));
  c.decoder.c1 = b.c1;
  c.decoder.c2 = b.c2;
  c.decoder.c3 = b.c3;
  c.decoder.global_width = b.embed;
  c.decoder.output_width = b.embed;

  c.head.scale = get<double>(j, "head", "scale");
  c.head.normalize_text = get<bool>(j, "head", "normalize_text");
  c.head.normalize_pixels = get<bool>(j, "head", "normalize_pixels");
  c.head.upsample = Interpolation::Bilinear;

  auto& t = c.train;
  t.adam.learning_rate = get<double>(j, "train", "learning_rate");
  t.adam.beta1 = get<double>(j, "train", "beta1");
  t.adam.beta2 = get<double>(j, "train", "beta2");
  t.adam.eps = get<double>(j, "train", "adam_eps");
  t.adam.weight_decay = get<double>(j, "train", "weight_decay");
  t.adam.grad_clip = get<double>(j, "train", "grad_clip");
  const auto schedule = get<std::string>(j, "train", "lr_schedule");
  if (schedule == "constant") {
    t.schedule = LrSchedule::Constant;
  } else if (schedule == "cosine") {
    t.schedule = LrSchedule::Cosine;
  } else {
    throw ConfigError("unknown lr_schedule '" + schedule + "'");
  }
  t.batch_size = get<Index>(j, "train", "batch_size");
  t.epochs = get<Index>(j, "train", "epochs");
  t.max_steps = get<Index>(j, "train", "max_steps");
  t.input_size = get<Index>(j, "train", "input_size");
  t.seed = get<std::uint64_t>(j, "train", "seed");
  t.checkpoint_dir = get<std::string>(j, "train", "checkpoint_dir");
  t.checkpoint_every = get<Index>(j, "train", "checkpoint_every");
  t.log_every = get<Index>(j, "train", "log_every");
  t.loss_at_stride8 = get<bool>(j, "train", "loss_at_stride8");
  t.mixed_precision = get<bool>(j, "train", "mixed_precision");
  t.prefetch = get<Index>(j, "train", "prefetch");
  if (t.batch_size < 2) throw ConfigError("train.batch_size must be at least 2 (batch statistics)");
  if (t.input_size <= 0 || t.input_size % 32 != 0) throw ConfigError("train.input_size must be a positive multiple of 32");
  if (t.adam.learning_rate < 0) throw ConfigError("train.learning_rate must be non-negative");
  if (t.mixed_precision) throw ConfigError("train.mixed_precision is not supported by this build (float32 only)");

  for (const auto& p : j.at("data").at("train_manifests")) c.data.train_manifests.emplace_back(p.get<std::string>());
  const auto& syn = j.at("data").at("synthetic");
  c.data.synthetic.count = syn.at("count").get<Index>();
  c.data.synthetic.seed = syn.at("seed").get<std::uint64_t>();
  c.data.synthetic.canvas = syn.at("canvas").get<Index>();

  c.eval.postprocess.sigmoid = get<bool>(j, "eval", "sigmoid");
  c.eval.postprocess.minmax = get<bool>(j, "eval", "minmax");
  c.eval.epsilon = get<double>(j, "eval", "epsilon");
  c.eval.batch_size = get<Index>(j, "eval", "batch_size");
  c.decoder.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError(path.string(), "cannot open config file");
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
  }
  nlohmann::json full = defaults();
  merge_strict(full, j);
  for (const auto& o : overrides) apply_override(full, o);
  return from_json(full);
}

void RunConfig::adopt_backbone(const BackboneInfo& info) {
  backbone.c1 = decoder.c1 = info.c1;
  backbone.c2 = decoder.c2 = info.c2;
  backbone.c3 = decoder.c3 = info.c3;
  backbone.embed = decoder.global_width = decoder.output_width = info.embed;
  backbone.vocab_size = info.vocab_size;
  backbone.context_length = info.context_length;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json manifests = nlohmann::json::array();
  for (const auto& p : data.train_manifests) manifests.push_back(p.string());
  return {
      {"backbone",
       {{"kind", backbone.kind},
        {"weights", backbone.weights.string()},
        {"manifest", backbone.manifest.string()},
        {"seed", backbone.seed},
        {"c1", backbone.c1},
        {"c2", backbone.c2},
        {"c3", backbone.c3},
        {"embed", backbone.embed},
        {"vocab_size", backbone.vocab_size},
        {"context_length", backbone.context_length},
        {"text_pooling", to_string(backbone.text_pooling)}}},
      {"decoder",
       {{"common_width", decoder.common_width},
        {"levels", decoder.levels.to_string()},
        {"upsample", std::string(to_string(decoder.upsample))}}},
      {"head", {{"scale", head.scale}, {"normalize_text", head.normalize_text}, {"normalize_pixels", head.normalize_pixels}}},
      {"train",
       {{"learning_rate", train.adam.learning_rate},
        {"beta1", train.adam.beta1},
        {"beta2", train.adam.beta2},
        {"adam_eps", train.adam.eps},
        {"weight_decay", train.adam.weight_decay},
        {"grad_clip", train.adam.grad_clip},
        {"lr_schedule", train.schedule == LrSchedule::Constant ? "constant" : "cosine"},
        {"batch_size", train.batch_size},
        {"epochs", train.epochs},
        {"max_steps", train.max_steps},
        {"input_size", train.input_size},
        {"seed", train.seed},
        {"checkpoint_dir", train.checkpoint_dir.string()},
        {"checkpoint_every", train.checkpoint_every},
        {"log_every", train.log_every},
        {"loss_at_stride8", train.loss_at_stride8},
        {"mixed_precision", train.mixed_precision},
        {"prefetch", train.prefetch}}},
      {"data",
       {{"train_manifests", manifests},
        {"synthetic", {{"count", data.synthetic.count}, {"seed", data.synthetic.seed}, {"canvas", data.synthetic.canvas}}}}},
      {"eval",
       {{"sigmoid", eval.postprocess.sigmoid},
        {"minmax", eval.postprocess.minmax},
        {"epsilon", eval.epsilon},
        {"batch_size", eval.batch_size}}},
  };
}

}  // namespace affclip
