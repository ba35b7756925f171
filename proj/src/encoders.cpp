#include "affclip/encoders.hpp"

#include "affclip/digest.hpp"
#include "affclip/errors.hpp"
#include "affclip/layers.hpp"
#include "affclip/resample.hpp"
#include "affclip/rng.hpp"
#include "affclip/tensor_file.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <optional>

namespace affclip {

ImageBatch make_image_batch(const std::vector<Image>& images, Index size, const Normalization& norm) {
  if (images.empty()) throw InvalidInput("make_image_batch: no images");
  ImageBatch out;
  out.pixels = FeatureBatch<float>(static_cast<Index>(images.size()), size, size, 3);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Image r = resize_image(images[i], size, size);
    auto dst = out.pixels.sample(static_cast<Index>(i));
    for (Index c = 0; c < 3; ++c)
      dst.col(c) = (r.rgb.col(c).array() - norm.mean[static_cast<std::size_t>(c)]) / norm.std[static_cast<std::size_t>(c)];
  }
  return out;
}

TokenizerConfig Backbone::tokenizer_config() const {
  TokenizerConfig t;
  t.merges_path = default_merges_path();
  t.vocab_size = info().vocab_size;
  t.context_length = info().context_length;
  return t;
}

void Backbone::check_image(const ImageBatch& images) const {
  const auto& p = images.pixels;
  if (p.batch <= 0 || p.channels() != 3) throw InvalidInput("image batch must be non-empty with 3 channels, got " + p.shape_string());
  if (p.height % 32 != 0 || p.width % 32 != 0 || p.height == 0 || p.width == 0)
    throw InvalidInput("image size " + std::to_string(p.height) + "x" + std::to_string(p.width) +
                       " is not divisible by 32");
}

void Backbone::check_tokens(const std::vector<TokenSequence>& tokens) const {
  if (tokens.empty()) throw InvalidInput("encode_text: no token sequences");
  for (const auto& t : tokens) {
    if (t.context_length() != info().context_length)
      throw InvalidInput("token sequence length " + std::to_string(t.context_length()) + " != context " +
                         std::to_string(info().context_length));
    if (t.valid_len < 2 || t.valid_len > t.context_length()) throw InvalidInput("token sequence has invalid valid_len");
    for (auto id : t.ids)
      if (id < 0 || id >= info().vocab_size) throw InvalidInput("token id " + std::to_string(id) + " outside vocabulary");
  }
}

TextPooling parse_text_pooling(const std::string& s) {
  if (s == "eos") return TextPooling::EndOfSequence;
  if (s == "first") return TextPooling::FirstToken;
  throw ConfigError("unknown text pooling '" + s + "' (expected eos or first)");
}

std::string to_string(TextPooling p) { return p == TextPooling::EndOfSequence ? "eos" : "first"; }

// ---------------------------------------------------------------------------
// Stub

StubBackbone::StubBackbone(const BackboneConfig& config) : seed_(config.seed) {
  info_.kind = "stub";
  info_.c1 = config.c1;
  info_.c2 = config.c2;
  info_.c3 = config.c3;
  info_.embed = config.embed;
  info_.vocab_size = config.vocab_size;
  info_.context_length = config.context_length;
  if (info_.c1 <= 0 || info_.c2 <= 0 || info_.c3 <= 0 || info_.embed <= 0) throw ConfigError("stub widths must be positive");
  auto lift = [&](std::uint64_t stream, Index width) {
    Rng rng(mix_seed(seed_, stream));
    return rng.uniform_matrix<float>(3, width, 1.0);
  };
  lift1_ = lift(1, info_.c1);
  lift2_ = lift(2, info_.c2);
  lift3_ = lift(3, info_.c3);
  lift_s_ = lift(4, info_.embed);
}

VisualFeatures<float> StubBackbone::encode_image(const ImageBatch& images) const {
  check_image(images);
  const auto& px = images.pixels;
  VisualFeatures<float> out;
  FeatureBatch<float> pooled = average_pool(px, 8);
  out.f1 = FeatureBatch<float>::like(pooled, info_.c1);
  out.f1.data.noalias() = pooled.data * lift1_;
  pooled = average_pool(pooled, 2);
  out.f2 = FeatureBatch<float>::like(pooled, info_.c2);
  out.f2.data.noalias() = pooled.data * lift2_;
  pooled = average_pool(pooled, 2);
  out.f3 = FeatureBatch<float>::like(pooled, info_.c3);
  out.f3.data.noalias() = pooled.data * lift3_;
  RowMatrix<float> global(px.batch, 3);
  for (Index b = 0; b < px.batch; ++b) global.row(b) = pooled.sample(b).colwise().mean();
  out.f_s.noalias() = global * lift_s_;
  return out;
}

RowVector<float> StubBackbone::token_embedding(std::int32_t id) const {
  Rng rng(mix_seed(seed_ ^ 0x5EED7E47ULL, static_cast<std::uint64_t>(id)));
  const double bound = std::sqrt(3.0 / static_cast<double>(info_.embed));
  RowVector<float> e(info_.embed);
  for (Index c = 0; c < info_.embed; ++c) e(c) = static_cast<float>(rng.uniform(-bound, bound));
  return e;
}

TextFeatures StubBackbone::encode_text(const std::vector<TokenSequence>& tokens) const {
  check_tokens(tokens);
  TextFeatures out;
  const Index batch = static_cast<Index>(tokens.size());
  out.context = info_.context_length;
  out.f_t = RowMatrix<float>::Zero(batch * out.context, info_.embed);
  out.f_q = RowMatrix<float>::Zero(batch, info_.embed);
  for (Index b = 0; b < batch; ++b) {
    const auto& t = tokens[static_cast<std::size_t>(b)];
    for (Index p = 0; p < t.valid_len; ++p) {
      const RowVector<float> e = token_embedding(t.ids[static_cast<std::size_t>(p)]);
      out.f_t.row(b * out.context + p) = e;
      out.f_q.row(b) += e;
    }
    out.f_q.row(b) /= std::sqrt(static_cast<float>(t.valid_len));
  }
  return out;
}

std::string StubBackbone::parameter_digest() const {
  Sha256 h;
  h.update("stub:" + std::to_string(seed_) + ":" + std::to_string(info_.vocab_size));
  for (const auto* m : {&lift1_, &lift2_, &lift3_, &lift_s_})
    h.update_values(std::span<const float>(m->data(), static_cast<std::size_t>(m->size())));
  return h.hex_digest();
}

// ---------------------------------------------------------------------------
// CLIP ResNet

namespace {

struct Linear {
  RowMatrix<float> wt;  // in x out
  RowVector<float> bias;

  RowMatrix<float> operator()(const RowMatrix<float>& x) const {
    RowMatrix<float> y = x * wt;
    if (bias.size() > 0) y.rowwise() += bias;
    return y;
  }
};

struct LayerNorm {
  RowVector<float> gamma, beta;

  RowMatrix<float> operator()(const RowMatrix<float>& x) const {
    RowMatrix<float> y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      const float mean = x.row(r).mean();
      const float var = (x.row(r).array() - mean).square().mean();
      y.row(r) = ((x.row(r).array() - mean) / std::sqrt(var + 1e-5f)).matrix();
    }
    y.array().rowwise() *= gamma.array();
    y.array().rowwise() += beta.array();
    return y;
  }
};

// Convolution with its eval-mode batch-norm folded in.
struct ConvBn {
  RowMatrix<float> weight;
  RowVector<float> shift;
  ConvGeometry geometry;

  FeatureBatch<float> operator()(const FeatureBatch<float>& x, bool relu) const {
    FeatureBatch<float> y = conv2d(x, weight, geometry);
    y.data.rowwise() += shift;
    if (relu) y.data = y.data.cwiseMax(0.0f);
    return y;
  }
};

struct Bottleneck {
  ConvBn conv1, conv2, conv3;
  std::optional<ConvBn> downsample;
  Index stride = 1;

  FeatureBatch<float> operator()(const FeatureBatch<float>& x) const {
    FeatureBatch<float> out = conv2(conv1(x, true), true);
    if (stride > 1) out = average_pool(out, stride);
    out = conv3(out, false);
    if (downsample) {
      out.data += (*downsample)(stride > 1 ? average_pool(x, stride) : x, false).data;
    } else {
      out.data += x.data;
    }
    out.data = out.data.cwiseMax(0.0f);
    return out;
  }
};

struct ResidualAttentionBlock {
  LayerNorm ln1, ln2;
  Linear qkv, out_proj, fc, proj;
};

class Loader {
 public:
  Loader(const TensorFile& file, std::string path) : file_(file), path_(std::move(path)) {}

  const StoredTensor& get(const std::string& name) const {
    auto it = file_.tensors.find(name);
    if (it == file_.tensors.end()) throw WeightsLoadError(path_, "missing tensor '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return file_.contains(name); }

  RowMatrix<float> matrix(const std::string& name, Index rows, Index cols) const {
    const auto& t = get(name);
    if (t.numel() != rows * cols)
      throw WeightsLoadError(path_, "tensor '" + name + "' has " + std::to_string(t.numel()) + " values, expected " +
                                        std::to_string(rows) + "x" + std::to_string(cols));
    return Eigen::Map<const RowMatrix<float>>(t.values.data(), rows, cols);
  }

  RowVector<float> vector(const std::string& name, Index n) const { return matrix(name, 1, n); }

  Linear linear(const std::string& prefix, Index in, Index out, bool with_bias = true) const {
    Linear l;
    l.wt = matrix(prefix + ".weight", out, in).transpose();
    if (with_bias) l.bias = vector(prefix + ".bias", out);
    return l;
  }

  LayerNorm layer_norm(const std::string& prefix, Index n) const {
    return {vector(prefix + ".weight", n), vector(prefix + ".bias", n)};
  }

  ConvBn conv_bn(const std::string& conv, const std::string& bn, Index stride, Index* out_channels = nullptr) const {
    const auto& w = get(conv + ".weight");
    if (w.shape.size() != 4 || w.shape[2] != w.shape[3]) throw WeightsLoadError(path_, "'" + conv + "' is not a square 4-D kernel");
    const Index cout = w.shape[0], cin = w.shape[1], k = w.shape[2];
    ConvBn c;
    c.geometry = ConvGeometry{k, stride, k / 2, Padding::Zero};
    c.weight.resize(k * k * cin, cout);
    for (Index o = 0; o < cout; ++o)
      for (Index i = 0; i < cin; ++i)
        for (Index ky = 0; ky < k; ++ky)
          for (Index kx = 0; kx < k; ++kx)
            c.weight((ky * k + kx) * cin + i, o) = w.values[static_cast<std::size_t>(((o * cin + i) * k + ky) * k + kx)];
    const RowVector<float> gamma = vector(bn + ".weight", cout);
    const RowVector<float> beta = vector(bn + ".bias", cout);
    const RowVector<float> mean = vector(bn + ".running_mean", cout);
    const RowVector<float> var = vector(bn + ".running_var", cout);
    const RowVector<float> scale = gamma.array() / (var.array() + 1e-5f).sqrt();
    c.weight.array().rowwise() *= scale.array();
    c.shift = beta.array() - mean.array() * scale.array();
    if (out_channels) *out_channels = cout;
    return c;
  }

  std::string metadata(const std::string& key) const {
    auto it = file_.metadata.find(key);
    return it == file_.metadata.end() ? std::string() : it->second;
  }

  const std::string& path() const { return path_; }

 private:
  const TensorFile& file_;
  std::string path_;
};

Index count_blocks(const TensorFile& file, const std::string& prefix) {
  Index n = 0;
  while (file.contains(prefix + std::to_string(n) + ".conv1.weight") ||
         file.contains(prefix + std::to_string(n) + ".ln_1.weight"))
    ++n;
  return n;
}

// Softmax-weighted mix of v rows for one query row, per head.
RowMatrix<float> attention(const RowMatrix<float>& q, const RowMatrix<float>& k, const RowMatrix<float>& v, Index heads,
                           bool causal) {
  const Index width = q.cols(), d = width / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  RowMatrix<float> out(q.rows(), width);
  for (Index h = 0; h < heads; ++h) {
    RowMatrix<float> scores = (q.middleCols(h * d, d) * k.middleCols(h * d, d).transpose()) * scale;
    if (causal)
      for (Index i = 0; i < scores.rows(); ++i)
        for (Index j = i + 1; j < scores.cols(); ++j) scores(i, j) = -std::numeric_limits<float>::infinity();
    for (Index i = 0; i < scores.rows(); ++i) {
      const float m = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - m).exp().matrix();
      scores.row(i) /= scores.row(i).sum();
    }
    out.middleCols(h * d, d).noalias() = scores * v.middleCols(h * d, d);
  }
  return out;
}

}  // namespace

struct ClipResNetBackbone::Impl {
  BackboneInfo info;
  TextPooling pooling = TextPooling::EndOfSequence;
  bool quick_gelu = true;

  ConvBn stem1, stem2, stem3;
  std::vector<std::vector<Bottleneck>> layers;
  RowMatrix<float> attn_pos;  // (S*S + 1) x C4
  Index attn_grid = 0;
  Index vision_heads = 0;
  Linear q_proj, k_proj, v_proj, c_proj;

  RowMatrix<float> token_embedding;
  RowMatrix<float> text_pos;
  std::vector<ResidualAttentionBlock> blocks;
  Index text_heads = 0;
  LayerNorm ln_final;
  RowMatrix<float> text_projection;  // width x embed

  FeatureBatch<float> positional_grid(Index h, Index w) const {
    FeatureBatch<float> grid(1, attn_grid, attn_grid, attn_pos.cols());
    grid.data = attn_pos.bottomRows(attn_grid * attn_grid);
    return resize(grid, h, w, Interpolation::Bilinear);
  }

  RowMatrix<float> attention_pool(const FeatureBatch<float>& x) const {
    const FeatureBatch<float> pos = positional_grid(x.height, x.width);
    RowMatrix<float> out(x.batch, c_proj.wt.cols());
    const Index n = x.pixels();
    for (Index b = 0; b < x.batch; ++b) {
      RowMatrix<float> tokens(n + 1, x.channels());
      tokens.row(0) = x.sample(b).colwise().mean() + attn_pos.row(0);
      tokens.bottomRows(n) = x.sample(b) + pos.data;
      const RowMatrix<float> q = q_proj(tokens.topRows(1));
      const RowMatrix<float> mixed = attention(q, k_proj(tokens), v_proj(tokens), vision_heads, false);
      out.row(b) = c_proj(mixed);
    }
    return out;
  }

  RowMatrix<float> activation(RowMatrix<float> x) const {
    if (quick_gelu) {
      x.array() *= (1.0f / (1.0f + (-1.702f * x.array()).exp()));
    } else {
      x = x.unaryExpr([](float v) { return 0.5f * v * (1.0f + std::erf(v / std::sqrt(2.0f))); });
    }
    return x;
  }

  template <typename F>
  void for_each_parameter(F&& f) const {
    auto conv = [&](const ConvBn& c) {
      f(c.weight);
      f(c.shift);
    };
    conv(stem1);
    conv(stem2);
    conv(stem3);
    for (const auto& layer : layers)
      for (const auto& blk : layer) {
        conv(blk.conv1);
        conv(blk.conv2);
        conv(blk.conv3);
        if (blk.downsample) conv(*blk.downsample);
      }
    f(attn_pos);
    for (const auto* l : {&q_proj, &k_proj, &v_proj, &c_proj}) {
      f(l->wt);
      f(l->bias);
    }
    f(token_embedding);
    f(text_pos);
    for (const auto& blk : blocks) {
      for (const auto* ln : {&blk.ln1, &blk.ln2}) {
        f(ln->gamma);
        f(ln->beta);
      }
      for (const auto* l : {&blk.qkv, &blk.out_proj, &blk.fc, &blk.proj}) {
        f(l->wt);
        f(l->bias);
      }
    }
    f(ln_final.gamma);
    f(ln_final.beta);
    f(text_projection);
  }
};

ClipResNetBackbone::ClipResNetBackbone(const BackboneConfig& config) : impl_(std::make_unique<Impl>()) {
  const std::string path = config.weights.string();
  if (config.weights.empty()) throw WeightsLoadError("<unset>", "no weights file configured");
  if (!std::filesystem::exists(config.weights)) throw WeightsLoadError(path, "file does not exist");
  if (!config.manifest.empty()) {
    std::ifstream in(config.manifest);
    if (!in) throw WeightsLoadError(path, "cannot read manifest " + config.manifest.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw WeightsLoadError(path, std::string("malformed manifest: ") + e.what());
    }
    const std::string expected = j.value("sha256", "");
    const std::string actual = sha256_file(config.weights);
    if (expected != actual) throw WeightsLoadError(path, "sha256 " + actual + " does not match manifest " + expected);
  }
  TensorFile file;
  try {
    file = TensorFile::read(config.weights);
  } catch (const Error& e) {
    throw WeightsLoadError(path, e.what());
  }
  Loader load(file, path);
  Impl& m = *impl_;
  m.pooling = config.text_pooling;
  m.quick_gelu = load.metadata("quick_gelu") != "false";

  Index stem_width = 0;
  m.stem1 = load.conv_bn("visual.conv1", "visual.bn1", 2, &stem_width);
  m.stem2 = load.conv_bn("visual.conv2", "visual.bn2", 1);
  Index width = 0;
  m.stem3 = load.conv_bn("visual.conv3", "visual.bn3", 1, &width);
  std::vector<Index> widths;
  for (int li = 1; li <= 4; ++li) {
    const std::string prefix = "visual.layer" + std::to_string(li) + ".";
    const Index n = count_blocks(file, prefix);
    if (n == 0) throw WeightsLoadError(path, "no blocks found under " + prefix);
    std::vector<Bottleneck> layer;
    for (Index k = 0; k < n; ++k) {
      const std::string p = prefix + std::to_string(k) + ".";
      Bottleneck blk;
      blk.stride = (li > 1 && k == 0) ? 2 : 1;
      blk.conv1 = load.conv_bn(p + "conv1", p + "bn1", 1);
      blk.conv2 = load.conv_bn(p + "conv2", p + "bn2", 1);
      Index out = 0;
      blk.conv3 = load.conv_bn(p + "conv3", p + "bn3", 1, &out);
      if (load.has(p + "downsample.0.weight")) blk.downsample = load.conv_bn(p + "downsample.0", p + "downsample.1", 1);
      if (k == n - 1) widths.push_back(out);
      layer.push_back(std::move(blk));
    }
    m.layers.push_back(std::move(layer));
  }
  const Index c4 = widths[3];
  const auto& pos = load.get("visual.attnpool.positional_embedding");
  m.attn_grid = static_cast<Index>(std::lround(std::sqrt(static_cast<double>(pos.shape.at(0) - 1))));
  if (m.attn_grid * m.attn_grid + 1 != pos.shape[0]) throw WeightsLoadError(path, "attention-pool positions are not a square grid");
  m.attn_pos = load.matrix("visual.attnpool.positional_embedding", pos.shape[0], c4);
  const Index embed = load.get("visual.attnpool.c_proj.weight").shape.at(0);
  m.q_proj = load.linear("visual.attnpool.q_proj", c4, c4);
  m.k_proj = load.linear("visual.attnpool.k_proj", c4, c4);
  m.v_proj = load.linear("visual.attnpool.v_proj", c4, c4);
  m.c_proj = load.linear("visual.attnpool.c_proj", c4, embed);
  const std::string vh = load.metadata("vision_heads");
  m.vision_heads = vh.empty() ? std::max<Index>(1, width * 32 / 64) : std::stol(vh);
  if (c4 % m.vision_heads != 0) throw WeightsLoadError(path, "vision heads do not divide the feature width");

  const auto& tok = load.get("token_embedding.weight");
  const Index vocab = tok.shape.at(0), tw = tok.shape.at(1);
  m.token_embedding = load.matrix("token_embedding.weight", vocab, tw);
  const Index context = load.get("positional_embedding").shape.at(0);
  m.text_pos = load.matrix("positional_embedding", context, tw);
  const Index nblocks = count_blocks(file, "transformer.resblocks.");
  for (Index k = 0; k < nblocks; ++k) {
    const std::string p = "transformer.resblocks." + std::to_string(k) + ".";
    ResidualAttentionBlock blk;
    blk.ln1 = load.layer_norm(p + "ln_1", tw);
    blk.ln2 = load.layer_norm(p + "ln_2", tw);
    blk.qkv.wt = load.matrix(p + "attn.in_proj_weight", 3 * tw, tw).transpose();
    blk.qkv.bias = load.vector(p + "attn.in_proj_bias", 3 * tw);
    blk.out_proj = load.linear(p + "attn.out_proj", tw, tw);
    const Index hidden = load.get(p + "mlp.c_fc.weight").shape.at(0);
    blk.fc = load.linear(p + "mlp.c_fc", tw, hidden);
    blk.proj = load.linear(p + "mlp.c_proj", hidden, tw);
    m.blocks.push_back(std::move(blk));
  }
  const std::string th = load.metadata("text_heads");
  m.text_heads = th.empty() ? std::max<Index>(1, tw / 64) : std::stol(th);
  if (tw % m.text_heads != 0) throw WeightsLoadError(path, "text heads do not divide the text width");
  m.ln_final = load.layer_norm("ln_final", tw);
  const auto& proj = load.get("text_projection");
  if (proj.shape.size() != 2 || proj.shape[0] != tw || proj.shape[1] != embed)
    throw WeightsLoadError(path, "text projection does not map text width to the visual embedding width");
  m.text_projection = load.matrix("text_projection", tw, embed);

  m.info.kind = "clip-resnet";
  m.info.c1 = widths[1];
  m.info.c2 = widths[2];
  m.info.c3 = widths[3];
  m.info.embed = embed;
  m.info.vocab_size = vocab;
  m.info.context_length = context;
  m.info.normalization = {{0.48145466f, 0.4578275f, 0.40821073f}, {0.26862954f, 0.26130258f, 0.27577711f}};
}

ClipResNetBackbone::~ClipResNetBackbone() = default;

const BackboneInfo& ClipResNetBackbone::info() const { return impl_->info; }

VisualFeatures<float> ClipResNetBackbone::encode_image(const ImageBatch& images) const {
  check_image(images);
  const Impl& m = *impl_;
  FeatureBatch<float> x = m.stem3(m.stem2(m.stem1(images.pixels, true), true), true);
  x = average_pool(x, 2);
  VisualFeatures<float> out;
  for (std::size_t li = 0; li < m.layers.size(); ++li) {
    for (const auto& blk : m.layers[li]) x = blk(x);
    if (li == 1) out.f1 = x;
    if (li == 2) out.f2 = x;
  }
  out.f3 = x;
  out.f_s = m.attention_pool(x);
  return out;
}

TextFeatures ClipResNetBackbone::encode_text(const std::vector<TokenSequence>& tokens) const {
  check_tokens(tokens);
  const Impl& m = *impl_;
  const Index batch = static_cast<Index>(tokens.size());
  const Index context = m.info.context_length;
  TextFeatures out;
  out.context = context;
  out.f_t.resize(batch * context, m.info.embed);
  out.f_q.resize(batch, m.info.embed);
  for (Index b = 0; b < batch; ++b) {
    const auto& t = tokens[static_cast<std::size_t>(b)];
    RowMatrix<float> x(context, m.token_embedding.cols());
    for (Index p = 0; p < context; ++p) x.row(p) = m.token_embedding.row(t.ids[static_cast<std::size_t>(p)]);
    x += m.text_pos;
    const Index w = x.cols();
    for (const auto& blk : m.blocks) {
      const RowMatrix<float> qkv = blk.qkv(blk.ln1(x));
      x += blk.out_proj(attention(qkv.leftCols(w), qkv.middleCols(w, w), qkv.rightCols(w), m.text_heads, true));
      x += blk.proj(m.activation(blk.fc(blk.ln2(x))));
    }
    const RowMatrix<float> projected = m.ln_final(x) * m.text_projection;
    out.f_t.middleRows(b * context, context) = projected;
    out.f_q.row(b) = projected.row(m.pooling == TextPooling::EndOfSequence ? t.valid_len - 1 : 0);
  }
  return out;
}

std::string ClipResNetBackbone::parameter_digest() const {
  Sha256 h;
  h.update("clip-resnet");
  impl_->for_each_parameter([&](const auto& m) {
    h.update_values(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  });
  return h.hex_digest();
}

std::unique_ptr<Backbone> make_backbone(const BackboneConfig& config) {
  if (config.kind == "stub") return std::make_unique<StubBackbone>(config);
  if (config.kind == "clip-resnet") return std::make_unique<ClipResNetBackbone>(config);
  throw ConfigError("unknown backbone kind '" + config.kind + "' (expected stub or clip-resnet)");
}

}  // namespace affclip
