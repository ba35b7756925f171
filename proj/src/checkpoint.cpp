#include "affclip/checkpoint.hpp"

#include "affclip/digest.hpp"
#include "affclip/errors.hpp"

namespace fs = std::filesystem;

namespace affclip {
namespace {

StoredTensor store(const Eigen::Ref<const RowMatrix<float>>& m) {
  StoredTensor t;
  t.shape = {m.rows(), m.cols()};
  t.values.resize(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMatrix<float>>(t.values.data(), m.rows(), m.cols()) = m;
  return t;
}

void load_into(const LoadedCheckpoint& ckpt, const std::string& name, Eigen::Ref<RowMatrix<float>> dst) {
  auto it = ckpt.file.tensors.find(name);
  if (it == ckpt.file.tensors.end()) throw ConfigError(ckpt.path.string() + ": checkpoint lacks tensor '" + name + "'");
  const auto& t = it->second;
  if (t.numel() != dst.size())
    throw ConfigError(ckpt.path.string() + ": tensor '" + name + "' has " + std::to_string(t.numel()) + " values, decoder expects " +
                      std::to_string(dst.size()));
  dst = Eigen::Map<const RowMatrix<float>>(t.values.data(), dst.rows(), dst.cols());
}

}  // namespace

void save_checkpoint(const fs::path& path, FpnDecoder<float>& decoder, Adam<float>* adam, const CheckpointMeta& meta) {
  TensorFile file;
  for (const auto& p : decoder.parameters()) file.tensors["decoder." + p.name] = store(p.value);
  for (const auto& b : decoder.buffers()) file.tensors["buffer." + b.name] = store(b.value);
  if (adam) {
    const auto& params = adam->parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      file.tensors["adam.m." + params[i].name] = store(adam->first_moments()[i]);
      file.tensors["adam.v." + params[i].name] = store(adam->second_moments()[i]);
    }
    file.metadata["adam_steps"] = std::to_string(adam->steps());
  }
  file.metadata["format"] = kCheckpointFormat;
  file.metadata["config"] = meta.config.dump();
  file.metadata["step"] = std::to_string(meta.step);
  file.metadata["seed"] = std::to_string(meta.seed);
  file.metadata["encoder_digest"] = meta.encoder_digest;
  file.metadata["ema_loss"] = nlohmann::json(meta.ema_loss).dump();
  const fs::path tmp = path.string() + ".tmp";
  file.write(tmp);
  fs::rename(tmp, path);
}

bool LoadedCheckpoint::has_optimizer_state() const { return file.metadata.count("adam_steps") != 0; }

LoadedCheckpoint read_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw IoError(path.string(), "checkpoint not found");
  LoadedCheckpoint c;
  c.path = path;
  c.file = TensorFile::read(path);
  auto meta = [&](const char* key) {
    auto it = c.file.metadata.find(key);
    if (it == c.file.metadata.end()) throw ConfigError(path.string() + ": checkpoint metadata lacks '" + key + "'");
    return it->second;
  };
  if (meta("format") != kCheckpointFormat)
    throw ConfigError(path.string() + ": unsupported checkpoint format '" + meta("format") + "'");
  try {
    c.meta.config = nlohmann::json::parse(meta("config"));
    c.meta.step = std::stoll(meta("step"));
    c.meta.seed = std::stoull(meta("seed"));
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": corrupt checkpoint metadata (" + e.what() + ")");
  }
  c.meta.encoder_digest = meta("encoder_digest");
  if (c.file.metadata.count("ema_loss")) c.meta.ema_loss = std::stod(c.file.metadata.at("ema_loss"));
  c.config = RunConfig::from_json(c.meta.config);
  c.model_tag = sha256_file(path).substr(0, 12);
  return c;
}

void restore_decoder(const LoadedCheckpoint& ckpt, FpnDecoder<float>& decoder) {
  for (auto& p : decoder.parameters()) load_into(ckpt, "decoder." + p.name, p.value);
  for (auto& b : decoder.buffers()) load_into(ckpt, "buffer." + b.name, b.value);
}

void restore_optimizer(const LoadedCheckpoint& ckpt, Adam<float>& adam) {
  if (!ckpt.has_optimizer_state()) throw ConfigError(ckpt.path.string() + ": checkpoint has no optimizer state");
  const auto& params = adam.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    load_into(ckpt, "adam.m." + params[i].name, adam.first_moments()[i]);
    load_into(ckpt, "adam.v." + params[i].name, adam.second_moments()[i]);
  }
  adam.set_steps(std::stoll(ckpt.file.metadata.at("adam_steps")));
}

}  // namespace affclip
