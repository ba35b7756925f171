#pragma once

#include "affclip/encoders.hpp"
#include "affclip/errors.hpp"
#include "affclip/layers.hpp"
#include "affclip/resample.hpp"
#include "affclip/rng.hpp"
#include "affclip/tensor.hpp"

#include <array>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace affclip {

/// Which pyramid levels (1 = stride 8, 2 = stride 16, 3 = stride 32) get a lateral connection.
struct LevelSet {
  std::array<bool, 3> active{true, true, true};

  bool has(int level) const { return active[static_cast<std::size_t>(level - 1)]; }
  bool empty() const { return !active[0] && !active[1] && !active[2]; }
  bool operator==(const LevelSet&) const = default;

  static LevelSet all() { return {}; }

  /// "1,2,3", "1,2", "1" (also accepts "F1,F2" and "{1,2}").
  static LevelSet parse(const std::string& text) {
    LevelSet s{{false, false, false}};
    for (char ch : text) {
      if (ch >= '1' && ch <= '3') {
        s.active[static_cast<std::size_t>(ch - '1')] = true;
      } else if (ch != ',' && ch != ' ' && ch != 'F' && ch != 'f' && ch != '{' && ch != '}') {
        throw ConfigError("bad level list '" + text + "'");
      }
    }
    if (s.empty()) throw ConfigError("level list '" + text + "' selects no level");
    return s;
  }

  std::string to_string() const {
    std::string out;
    for (int l = 1; l <= 3; ++l)
      if (has(l)) out += (out.empty() ? "" : ",") + std::to_string(l);
    return out;
  }
};

struct DecoderConfig {
  Index common_width = 64;   // C'
  Index output_width = 512;  // C, must equal the text embedding width
  LevelSet levels;
  Interpolation upsample = Interpolation::Bilinear;
  Index c1 = 512, c2 = 1024, c3 = 2048;
  Index global_width = 512;

  static DecoderConfig for_backbone(const BackboneInfo& info) {
    DecoderConfig cfg;
    cfg.c1 = info.c1;
    cfg.c2 = info.c2;
    cfg.c3 = info.c3;
    cfg.global_width = info.embed;
    cfg.output_width = info.embed;
    return cfg;
  }

  void validate() const {
    if (common_width <= 0 || output_width <= 0) throw ConfigError("decoder widths must be positive");
    if (c1 <= 0 || c2 <= 0 || c3 <= 0 || global_width <= 0) throw ConfigError("backbone widths must be positive");
    if (levels.empty()) throw ConfigError("decoder needs at least one active level");
  }

  void check_backbone(const BackboneInfo& info) const {
    if (info.c1 != c1 || info.c2 != c2 || info.c3 != c3 || info.embed != global_width)
      throw ConfigError("decoder expects widths " + std::to_string(c1) + "/" + std::to_string(c2) + "/" +
                        std::to_string(c3) + "/" + std::to_string(global_width) + " but backbone '" + info.kind +
                        "' provides " + std::to_string(info.c1) + "/" + std::to_string(info.c2) + "/" +
                        std::to_string(info.c3) + "/" + std::to_string(info.embed));
    if (info.embed != output_width)
      throw ConfigError("decoder output width " + std::to_string(output_width) + " differs from text width " +
                        std::to_string(info.embed));
  }

  /// Closed-form trainable scalar count: 3x3 projections and the 1x1 decode,
  /// each without bias, plus a scale and shift per batch-norm channel.
  Index closed_form_parameter_count() const {
    const Index cp = common_width;
    Index n = 9 * global_width * cp + 2 * cp;
    const std::array<Index, 3> widths{c1, c2, c3};
    for (int l = 1; l <= 3; ++l)
      if (levels.has(l)) n += 9 * widths[static_cast<std::size_t>(l - 1)] * cp + 2 * cp;
    return n + cp * output_width + 2 * output_width;
  }
};

/// Outputs of the projection stage: the global vector as a B x C' matrix and
/// the active levels at their native grids.
template <typename Scalar>
struct Projected {
  RowMatrix<Scalar> global;
  std::array<std::optional<FeatureBatch<Scalar>>, 3> levels;
  std::array<std::array<Index, 2>, 3> grid{};  // (h, w) per level, known even when inactive

  Index batch() const { return global.rows(); }
  Index width() const { return global.cols(); }
};

/// Coarse-to-fine fusion: broadcast the global vector over the stride-32 grid,
/// add level 3, upsample, add level 2, upsample, add level 1. Inactive levels
/// skip their addition but the upsampling still runs.
template <typename Scalar>
FeatureBatch<Scalar> fuse(const Projected<Scalar>& p, Interpolation mode) {
  const auto [h3, w3] = p.grid[2];
  FeatureBatch<Scalar> x(p.batch(), h3, w3, p.width());
  for (Index b = 0; b < p.batch(); ++b) x.sample(b).rowwise() = p.global.row(b);
  for (int level = 3; level >= 1; --level) {
    const auto [h, w] = p.grid[static_cast<std::size_t>(level - 1)];
    if (x.height != h || x.width != w) x = resize(x, h, w, mode);
    if (const auto& lateral = p.levels[static_cast<std::size_t>(level - 1)]) {
      if (!lateral->same_shape(x))
        throw InvalidInput("fuse: level " + std::to_string(level) + " is " + lateral->shape_string() + ", expected " +
                           x.shape_string());
      x.data += lateral->data;
    }
  }
  return x;
}

/// Adjoint of fuse(): distributes dL/dfused onto every projected input.
template <typename Scalar>
Projected<Scalar> fuse_backward(const FeatureBatch<Scalar>& grad, const Projected<Scalar>& like, Interpolation mode) {
  Projected<Scalar> g;
  g.grid = like.grid;
  FeatureBatch<Scalar> x = grad;
  for (int level = 1; level <= 3; ++level) {
    const auto [h, w] = like.grid[static_cast<std::size_t>(level - 1)];
    if (x.height != h || x.width != w) x = resize_adjoint(x, h, w, mode);
    if (like.levels[static_cast<std::size_t>(level - 1)]) g.levels[static_cast<std::size_t>(level - 1)] = x;
  }
  g.global.resize(x.batch, x.channels());
  for (Index b = 0; b < x.batch; ++b) g.global.row(b) = x.sample(b).colwise().sum();
  return g;
}

/// Trainable pyramid decoder producing a stride-8 grid of C-wide pixel embeddings.
template <typename Scalar>
class FpnDecoder {
 public:
  struct Cache {
    typename ConvBnRelu<Scalar>::Cache global;
    std::array<typename ConvBnRelu<Scalar>::Cache, 3> levels;
    typename ConvBnRelu<Scalar>::Cache decode;
    Projected<Scalar> projected;
  };

  explicit FpnDecoder(const DecoderConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const ConvGeometry proj{3, 1, 1, Padding::Replicate};
    const std::array<Index, 3> widths{cfg_.c1, cfg_.c2, cfg_.c3};
    global_ = ConvBnRelu<Scalar>("proj_global", cfg_.global_width, cfg_.common_width, proj);
    for (int l = 1; l <= 3; ++l)
      if (cfg_.levels.has(l))
        levels_[static_cast<std::size_t>(l - 1)] =
            ConvBnRelu<Scalar>("proj" + std::to_string(l), widths[static_cast<std::size_t>(l - 1)], cfg_.common_width, proj);
    decode_ = ConvBnRelu<Scalar>("decode", cfg_.common_width, cfg_.output_width, ConvGeometry{1, 1, 0, Padding::Zero});
  }

  const DecoderConfig& config() const { return cfg_; }

  /// Deterministic per-layer streams, so a layer's initial weights do not
  /// depend on which other levels are active.
  void reset_parameters(std::uint64_t seed) {
    for (auto* layer : all_layers()) {
      Rng rng(mix_seed(seed, stream_of(layer->name())));
      layer->reset_parameters(rng);
    }
  }

  Index trainable_count() const {
    Index n = 0;
    for (const auto* layer : all_layers()) n += layer->trainable_count();
    return n;
  }

  Projected<Scalar> project(const VisualFeatures<Scalar>& f) const {
    check_features(f);
    Projected<Scalar> p;
    p.global = global_.forward_eval(as_map(f.f_s)).data;
    fill_grid(p, f);
    const std::array<const FeatureBatch<Scalar>*, 3> maps{&f.f1, &f.f2, &f.f3};
    for (std::size_t i = 0; i < 3; ++i)
      if (levels_[i]) p.levels[i] = levels_[i]->forward_eval(*maps[i]);
    return p;
  }

  FeatureBatch<Scalar> decode(const FeatureBatch<Scalar>& fused) const { return decode_.forward_eval(fused); }

  FeatureBatch<Scalar> forward(const VisualFeatures<Scalar>& f) const { return decode(fuse(project(f), cfg_.upsample)); }

  /// Training-mode forward (batch statistics, running estimates updated).
  FeatureBatch<Scalar> forward_train(const VisualFeatures<Scalar>& f, Cache& cache) {
    check_features(f);
    if (f.batch() < 2) throw InvalidInput("training-mode batch normalization needs at least 2 samples per batch");
    Projected<Scalar>& p = cache.projected;
    p = Projected<Scalar>{};
    p.global = global_.forward_train(as_map(f.f_s), cache.global).data;
    fill_grid(p, f);
    const std::array<const FeatureBatch<Scalar>*, 3> maps{&f.f1, &f.f2, &f.f3};
    for (std::size_t i = 0; i < 3; ++i)
      if (levels_[i]) p.levels[i] = levels_[i]->forward_train(*maps[i], cache.levels[i]);
    return decode_.forward_train(fuse(p, cfg_.upsample), cache.decode);
  }

  /// Accumulates parameter gradients from dL/d(dense embedding).
  void backward(const Cache& cache, const FeatureBatch<Scalar>& grad_dense) {
    FeatureBatch<Scalar> grad_fused;
    decode_.backward(cache.decode, grad_dense, &grad_fused);
    Projected<Scalar> g = fuse_backward(grad_fused, cache.projected, cfg_.upsample);
    for (std::size_t i = 0; i < 3; ++i)
      if (levels_[i]) levels_[i]->backward(cache.levels[i], std::move(*g.levels[i]), nullptr);
    FeatureBatch<Scalar> grad_global(g.global.rows(), 1, 1, g.global.cols());
    grad_global.data = g.global;
    global_.backward(cache.global, std::move(grad_global), nullptr);
  }

  void zero_grad() {
    for (auto* layer : all_layers()) layer->zero_grad();
  }

  std::vector<ParameterRef<Scalar>> parameters() {
    std::vector<ParameterRef<Scalar>> out;
    for (auto* layer : all_layers()) layer->append_parameters(out);
    return out;
  }

  std::vector<BufferRef<Scalar>> buffers() {
    std::vector<BufferRef<Scalar>> out;
    for (auto* layer : all_layers()) layer->append_buffers(out);
    return out;
  }

  std::vector<ConvBnRelu<Scalar>*> all_layers() {
    std::vector<ConvBnRelu<Scalar>*> out{&global_};
    for (auto& l : levels_)
      if (l) out.push_back(&*l);
    out.push_back(&decode_);
    return out;
  }

  std::vector<const ConvBnRelu<Scalar>*> all_layers() const {
    std::vector<const ConvBnRelu<Scalar>*> out{&global_};
    for (const auto& l : levels_)
      if (l) out.push_back(&*l);
    out.push_back(&decode_);
    return out;
  }

 private:
  static std::uint64_t stream_of(const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : name) h = (h ^ c) * 1099511628211ULL;
    return h;
  }

  static FeatureBatch<Scalar> as_map(const RowMatrix<Scalar>& v) {
    FeatureBatch<Scalar> m(v.rows(), 1, 1, v.cols());
    m.data = v;
    return m;
  }

  static void fill_grid(Projected<Scalar>& p, const VisualFeatures<Scalar>& f) {
    p.grid = {{{f.f1.height, f.f1.width}, {f.f2.height, f.f2.width}, {f.f3.height, f.f3.width}}};
  }

  void check_features(const VisualFeatures<Scalar>& f) const {
    const Index b = f.batch();
    if (f.f_s.cols() != cfg_.global_width || f.f1.channels() != cfg_.c1 || f.f2.channels() != cfg_.c2 ||
        f.f3.channels() != cfg_.c3)
      throw InvalidInput("decoder: feature widths do not match the configuration");
    if (f.f1.batch != b || f.f2.batch != b || f.f3.batch != b) throw InvalidInput("decoder: inconsistent batch sizes");
    if (f.f1.height != 2 * f.f2.height || f.f2.height != 2 * f.f3.height || f.f1.width != 2 * f.f2.width ||
        f.f2.width != 2 * f.f3.width)
      throw InvalidInput("decoder: feature grids are not at strides 8/16/32");
  }

  DecoderConfig cfg_;
  ConvBnRelu<Scalar> global_;
  std::array<std::optional<ConvBnRelu<Scalar>>, 3> levels_;
  ConvBnRelu<Scalar> decode_;
};

}  // namespace affclip
