#include "affclip/training.hpp"

#include "affclip/errors.hpp"
#include "affclip/head_loss.hpp"
#include "affclip/optim.hpp"
#include "affclip/rng.hpp"
#include "affclip/tokenizer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;

namespace affclip {

SyntheticSource::SyntheticSource(std::uint64_t seed, std::size_t count, Index canvas) {
  for (const auto& spec : synthetic_suite(seed, count, canvas)) samples_.push_back(generate_synthetic(spec));
}

ReferringItem SyntheticSource::get(std::size_t index, Index input_size) const {
  const SyntheticSample& s = samples_.at(index);
  ReferringItem item;
  char id[32];
  std::snprintf(id, sizeof id, "synthetic:%04zu", index);
  item.id = id;
  item.image = resize_image(s.image, input_size, input_size);
  item.expression = s.expression;
  item.mask = resize_mask(s.mask, input_size, input_size);
  return item;
}

std::unique_ptr<ReferringSource> make_source(const DataConfig& data) {
  if (!data.train_manifests.empty()) return std::make_unique<ManifestSource>(load_referring_manifests(data.train_manifests));
  if (data.synthetic.count > 0)
    return std::make_unique<SyntheticSource>(data.synthetic.seed, static_cast<std::size_t>(data.synthetic.count),
                                             data.synthetic.canvas);
  throw ConfigError("no training data: set data.train_manifests or data.synthetic.count");
}

FpnDecoder<float> initialize_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
  FpnDecoder<float> decoder(cfg);
  decoder.reset_parameters(seed);
  return decoder;
}

GradientFlowReport inspect_gradients(FpnDecoder<float>& decoder) {
  GradientFlowReport r;
  for (const auto& p : decoder.parameters()) {
    const double norm = p.grad.template cast<double>().norm();
    r.grad_norms.emplace_back(p.name, norm);
    if (!(norm > 0.0) || !std::isfinite(norm)) ++r.zero_tensors;
    r.zero_scalars += static_cast<Index>((p.grad.array() == 0.0f).count());
    r.total_scalars += p.grad.size();
  }
  return r;
}

Index steps_per_epoch(std::size_t dataset_size, Index batch_size) {
  return static_cast<Index>(dataset_size) / batch_size;
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t dataset_size, Index batch_size, Index step) {
  const Index per_epoch = steps_per_epoch(dataset_size, batch_size);
  if (per_epoch <= 0) throw ConfigError("dataset smaller than one batch");
  const Index g = step - 1;
  const Index epoch = g / per_epoch, within = g % per_epoch;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  const auto perm = rng.permutation(dataset_size);
  return {perm.begin() + within * batch_size, perm.begin() + (within + 1) * batch_size};
}

namespace {

struct Batch {
  Index step = 0;
  std::vector<ReferringItem> items;
};

std::string format_checkpoint_name(Index step) {
  char name[48];
  std::snprintf(name, sizeof name, "step_%06lld.ckpt", static_cast<long long>(step));
  return name;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const Backbone& backbone, const ReferringSource& data,
                  const std::optional<fs::path>& resume_from, const TrainHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = cfg.train;
  cfg.decoder.check_backbone(backbone.info());
  const Index per_epoch = steps_per_epoch(data.size(), tc.batch_size);
  if (per_epoch <= 0)
    throw ConfigError("dataset has " + std::to_string(data.size()) + " samples, fewer than one batch of " +
                      std::to_string(tc.batch_size));
  const Index total = tc.max_steps > 0 ? tc.max_steps : tc.epochs * per_epoch;

  FpnDecoder<float> decoder = initialize_decoder(cfg.decoder, tc.seed);
  Adam<float> adam(tc.adam, decoder.parameters());
  CheckpointMeta meta;
  meta.config = cfg.to_json();
  meta.seed = tc.seed;

  TrainResult result;
  result.encoder_digest_before = backbone.parameter_digest();
  meta.encoder_digest = result.encoder_digest_before;

  Index start = 1;
  if (resume_from) {
    const LoadedCheckpoint ckpt = read_checkpoint(*resume_from);
    if (ckpt.meta.seed != tc.seed) throw ConfigError("resume: checkpoint seed differs from the configured seed");
    if (ckpt.meta.encoder_digest != result.encoder_digest_before)
      throw ConfigError("resume: checkpoint was trained against different encoder weights");
    restore_decoder(ckpt, decoder);
    restore_optimizer(ckpt, adam);
    start = ckpt.meta.step + 1;
    meta.ema_loss = ckpt.meta.ema_loss;
  }

  fs::create_directories(tc.checkpoint_dir);
  {
    std::ofstream sidecar(tc.checkpoint_dir / "config.json", std::ios::trunc);
    sidecar << cfg.to_json().dump(2) << "\n";
  }
  std::ofstream loss_csv(tc.checkpoint_dir / "loss.csv", resume_from ? std::ios::app : std::ios::trunc);
  if (!loss_csv) throw IoError((tc.checkpoint_dir / "loss.csv").string(), "cannot write loss curve");
  if (!resume_from) loss_csv << "step,loss\n";

  const BpeTokenizer tokenizer(backbone.tokenizer_config());
  const Normalization norm = backbone.info().normalization;
  const Index size = tc.input_size;

  Index next_step = start;
  Prefetcher<Batch> prefetch(static_cast<std::size_t>(std::max<Index>(1, tc.prefetch)), [&]() -> std::optional<Batch> {
    if (next_step > total) return std::nullopt;
    Batch b;
    b.step = next_step++;
    for (auto i : batch_indices(tc.seed, data.size(), tc.batch_size, b.step)) b.items.push_back(data.get(i, size));
    return b;
  });

  typename FpnDecoder<float>::Cache cache;
  HeadCache<float> hcache;
  result.first_step = start;
  auto check_encoder = [&](const char* when) {
    const std::string now = backbone.parameter_digest();
    if (now != result.encoder_digest_before)
      throw Error(std::string("frozen encoder parameters changed ") + when + " (digest " + now + ")");
    return now;
  };

  while (auto batch = prefetch.next()) {
    const Index step = batch->step;
    std::vector<Image> images;
    std::vector<TokenSequence> tokens;
    std::vector<std::string> ids;
    MaskGT gt;
    gt.height = size;
    gt.width = size;
    gt.values.resize(static_cast<Index>(batch->items.size()), size * size);
    for (std::size_t k = 0; k < batch->items.size(); ++k) {
      const auto& item = batch->items[k];
      images.push_back(item.image);
      tokens.push_back(tokenizer.tokenize(item.expression));
      ids.push_back(item.id);
      for (Index y = 0; y < size; ++y)
        for (Index x = 0; x < size; ++x) gt.values(static_cast<Index>(k), y * size + x) = item.mask(y, x);
    }
    const VisualFeatures<float> visual = backbone.encode_image(make_image_batch(images, size, norm));
    const TextFeatures text = backbone.encode_text(tokens);

    decoder.zero_grad();
    const FeatureBatch<float> dense = decoder.forward_train(visual, cache);
    const ActivationMap<float> act = compute_activation(text.f_q, dense, size, size, cfg.head, &hcache);
    RowMatrix<float> grad_logits;
    double loss = 0.0;
    RowMatrix<float> grad_stride8;
    if (tc.loss_at_stride8) {
      loss = contrastive_loss(act.stride8_logits, resize_mask(gt, act.grid_h, act.grid_w), &grad_stride8);
    } else {
      loss = contrastive_loss(act.logits, gt, &grad_logits);
      grad_stride8 = upsample_backward(grad_logits, hcache, cfg.head.upsample);
    }
    if (!std::isfinite(loss)) {
      std::string list;
      for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
      throw TrainingAborted("non-finite loss at step " + std::to_string(step) + " (batch: " + list + ")", ids);
    }
    decoder.backward(cache, activation_backward(grad_stride8, hcache, cfg.head));

    if (step == 1) {
      result.gradient_flow = inspect_gradients(decoder);
      if (!result.gradient_flow->ok()) {
        std::string dead;
        for (const auto& [name, n] : result.gradient_flow->grad_norms)
          if (!(n > 0.0)) dead += " " + name;
        throw Error("gradient-flow check failed, no gradient reached:" + dead);
      }
    }
    adam.step(tc.learning_rate_at(step, total));

    result.losses.push_back(loss);
    result.last_step = step;
    meta.ema_loss = step == 1 ? loss : 0.98 * meta.ema_loss + 0.02 * loss;
    loss_csv << step << "," << nlohmann::json(loss).dump() << "\n";
    if (hooks.on_step) hooks.on_step(step, loss);
    if (tc.log_every > 0 && step % tc.log_every == 0)
      std::clog << "step " << step << "/" << total << " loss " << loss << " ema " << meta.ema_loss << "\n";

    if (tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 && step != total) {
      meta.step = step;
      check_encoder("during training");
      save_checkpoint(tc.checkpoint_dir / format_checkpoint_name(step), decoder, &adam, meta);
    }
  }

  meta.step = result.last_step > 0 ? result.last_step : start - 1;
  result.encoder_digest_after = check_encoder("after training");
  result.final_checkpoint = tc.checkpoint_dir / "final.ckpt";
  save_checkpoint(result.final_checkpoint, decoder, &adam, meta);
  loss_csv.flush();
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace affclip
