#pragma once

#include "affclip/config.hpp"
#include "affclip/fpn_decoder.hpp"
#include "affclip/optim.hpp"
#include "affclip/tensor_file.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace affclip {

inline constexpr const char* kCheckpointFormat = "affclip-decoder/1";

struct CheckpointMeta {
  nlohmann::json config = nlohmann::json::object();  // RunConfig echo
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string encoder_digest;
  double ema_loss = 0.0;
};

/// Decoder parameters ("decoder.*"), batch-norm buffers ("buffer.*") and,
/// when given, Adam moments ("adam.m.*", "adam.v.*") in one tensor file whose
/// metadata carries the format tag, config echo, step, seed and encoder digest.
void save_checkpoint(const std::filesystem::path& path, FpnDecoder<float>& decoder, Adam<float>* adam,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  std::filesystem::path path;
  RunConfig config;
  CheckpointMeta meta;
  TensorFile file;
  std::string model_tag;  // first 12 hex digits of the file's SHA-256

  bool has_optimizer_state() const;
};

/// Throws IoError when the file is missing and ConfigError on a foreign format.
LoadedCheckpoint read_checkpoint(const std::filesystem::path& path);

void restore_decoder(const LoadedCheckpoint& ckpt, FpnDecoder<float>& decoder);
void restore_optimizer(const LoadedCheckpoint& ckpt, Adam<float>& adam);

}  // namespace affclip
