#include "affclip/data.hpp"

#include "affclip/digest.hpp"
#include "affclip/errors.hpp"
#include "affclip/resample.hpp"
#include "affclip/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>

namespace fs = std::filesystem;

namespace affclip {
namespace {

std::vector<std::pair<std::string, nlohmann::json>> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open manifest");
  std::vector<std::pair<std::string, nlohmann::json>> rows;
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string id = path.filename().string() + ":" + std::to_string(lineno);
    try {
      rows.emplace_back(id, nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataValidationError(id, std::string("malformed JSON: ") + e.what());
    }
  }
  return rows;
}

std::string field(const nlohmann::json& j, const std::string& id, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw DataValidationError(id, std::string("missing string field '") + key + "'");
  return j[key].get<std::string>();
}

fs::path resolve(const fs::path& base, const std::string& rel) {
  const fs::path p(rel);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

std::vector<ReferringSample> load_referring_manifest(const fs::path& path) {
  const fs::path base = path.parent_path();
  std::vector<ReferringSample> out;
  for (const auto& [id, j] : read_jsonl(path)) {
    ReferringSample s;
    s.id = id;
    s.image_path = resolve(base, field(j, id, "image"));
    s.expression = field(j, id, "text");
    s.mask_path = resolve(base, field(j, id, "mask"));
    s.split = j.value("split", "train");
    if (s.expression.empty()) throw DataValidationError(id, "empty referring expression");
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ReferringSample> load_referring_manifests(const std::vector<fs::path>& paths) {
  std::vector<ReferringSample> all;
  for (const auto& p : paths) {
    auto part = load_referring_manifest(p);
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

std::vector<AffordanceSample> load_affordance_eval(const fs::path& path) {
  const fs::path base = path.parent_path();
  std::vector<AffordanceSample> out;
  for (const auto& [id, j] : read_jsonl(path)) {
    AffordanceSample s;
    s.id = j.contains("id") && j["id"].is_string() ? j["id"].get<std::string>() : id;
    s.image_path = resolve(base, field(j, id, "image"));
    s.action = field(j, id, "action");
    s.heatmap_path = resolve(base, field(j, id, "heatmap"));
    s.object_category = j.value("object", "");
    out.push_back(std::move(s));
  }
  return out;
}

BinaryMask resize_mask(const BinaryMask& mask, Index h, Index w) {
  if (mask.rows() == h && mask.cols() == w) return mask;
  const auto ty = axis_taps(mask.rows(), h, Interpolation::Nearest);
  const auto tx = axis_taps(mask.cols(), w, Interpolation::Nearest);
  BinaryMask out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      out(y, x) = mask(ty[static_cast<std::size_t>(y)][0].source, tx[static_cast<std::size_t>(x)][0].source) != 0 ? 1 : 0;
  return out;
}

EvalMap resize_heatmap(const EvalMap& heatmap, Index h, Index w) {
  EvalMap r = resize_map(heatmap, h, w, Interpolation::Bilinear);
  return normalize_mass(r.max(0.0), "resized heatmap");
}

ReferringItem load_referring_item(const ReferringSample& s, Index size) {
  ReferringItem item;
  item.id = s.id;
  item.expression = s.expression;
  Image image;
  GrayRaster raster;
  try {
    image = read_image(s.image_path);
    raster = read_gray(s.mask_path);
  } catch (const InvalidInput& e) {
    throw DataValidationError(s.id, e.what());
  } catch (const IoError& e) {
    throw DataValidationError(s.id, e.what());
  }
  if (raster.values.rows() != image.height || raster.values.cols() != image.width)
    throw DataValidationError(s.id, "mask and image sizes differ");
  const double top = raster.max_level();
  if (((raster.values != 0.0) && (raster.values != top)).any())
    throw DataValidationError(s.id, "mask is not binary (values other than 0 and " + std::to_string(static_cast<long>(top)) + ")");
  BinaryMask mask = (raster.values != 0.0).cast<std::uint8_t>();
  item.image = resize_image(image, size, size);
  item.mask = resize_mask(mask, size, size);
  return item;
}

AffordanceItem load_affordance_item(const AffordanceSample& s) {
  AffordanceItem item;
  item.id = s.id;
  item.action = s.action;
  GrayRaster raster;
  try {
    item.image = read_image(s.image_path);
    raster = read_gray(s.heatmap_path);
  } catch (const InvalidInput& e) {
    throw DataValidationError(s.id, e.what());
  } catch (const IoError& e) {
    throw DataValidationError(s.id, e.what());
  }
  try {
    item.heatmap = normalize_mass(raster.values, "heatmap");
  } catch (const DegenerateInput& e) {
    throw DataValidationError(s.id, e.what());
  }
  return item;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle:
      return "circle";
    case ShapeKind::Square:
      return "square";
    case ShapeKind::Triangle:
      return "triangle";
  }
  return "?";
}

const std::vector<std::pair<std::string, std::array<float, 3>>>& synthetic_palette() {
  static const std::vector<std::pair<std::string, std::array<float, 3>>> palette{
      {"red", {0.90f, 0.12f, 0.10f}},   {"green", {0.15f, 0.75f, 0.20f}},  {"blue", {0.12f, 0.25f, 0.92f}},
      {"yellow", {0.95f, 0.88f, 0.10f}}, {"purple", {0.60f, 0.15f, 0.75f}},
  };
  return palette;
}

namespace {

const std::array<float, 3>& palette_color(const std::string& name) {
  for (const auto& [n, rgb] : synthetic_palette())
    if (n == name) return rgb;
  throw InvalidInput("unknown synthetic color '" + name + "'");
}

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

}  // namespace

bool inside(const ShapeSpec& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy;
  switch (s.kind) {
    case ShapeKind::Circle:
      return dx * dx + dy * dy <= s.radius * s.radius;
    case ShapeKind::Square:
      return std::abs(dx) <= s.radius && std::abs(dy) <= s.radius;
    case ShapeKind::Triangle: {
      const double ax = s.cx, ay = s.cy - s.radius;
      const double bx = s.cx + s.radius, by = s.cy + s.radius;
      const double cx = s.cx - s.radius, cy = s.cy + s.radius;
      const double e0 = edge(ax, ay, bx, by, x, y), e1 = edge(bx, by, cx, cy, x, y), e2 = edge(cx, cy, ax, ay, x, y);
      return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
    }
  }
  return false;
}

std::string SyntheticSceneSpec::expression() const {
  const auto& s = shapes.at(target);
  return "the " + s.color + " " + to_string(s.kind);
}

void SyntheticSceneSpec::validate() const {
  if (canvas <= 0) throw InvalidInput("synthetic canvas must be positive");
  if (shapes.empty() || target >= shapes.size()) throw InvalidInput("synthetic scene needs a valid target index");
  std::set<std::pair<std::string, int>> seen;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    palette_color(s.color);
    if (!seen.emplace(s.color, static_cast<int>(s.kind)).second)
      throw InvalidInput("synthetic scene repeats '" + s.color + " " + to_string(s.kind) + "'");
    if (s.radius <= 0 || s.cx - s.radius < 0 || s.cy - s.radius < 0 || s.cx + s.radius > static_cast<double>(canvas) ||
        s.cy + s.radius > static_cast<double>(canvas))
      throw InvalidInput("synthetic shape " + std::to_string(i) + " leaves the canvas");
    for (std::size_t j = 0; j < i; ++j) {
      const auto& o = shapes[j];
      // Bounding circles of the square/triangle have radius r*sqrt(2).
      const double reach = (s.radius + o.radius) * std::sqrt(2.0);
      if (std::hypot(s.cx - o.cx, s.cy - o.cy) < reach)
        throw InvalidInput("synthetic shapes " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
    }
  }
}

SyntheticSceneSpec SyntheticSceneSpec::random(std::uint64_t seed, Index canvas, int min_shapes, int max_shapes) {
  Rng rng(seed);
  SyntheticSceneSpec spec;
  spec.seed = seed;
  spec.canvas = canvas;
  const int want = min_shapes + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_shapes - min_shapes + 1)));
  const auto colors = rng.permutation(synthetic_palette().size());
  const double c = static_cast<double>(canvas);
  for (int attempt = 0; attempt < 1000 && static_cast<int>(spec.shapes.size()) < want; ++attempt) {
    ShapeSpec s;
    s.kind = static_cast<ShapeKind>(rng.below(3));
    s.color = synthetic_palette()[colors[spec.shapes.size()]].first;
    s.radius = std::round(c * rng.uniform(0.11, 0.17));
    const double margin = s.radius * std::sqrt(2.0) + 1.0;
    s.cx = std::round(rng.uniform(margin, c - margin));
    s.cy = std::round(rng.uniform(margin, c - margin));
    bool clear = true;
    for (const auto& o : spec.shapes)
      if (std::hypot(s.cx - o.cx, s.cy - o.cy) < (s.radius + o.radius) * std::sqrt(2.0) + 2.0) clear = false;
    if (clear) spec.shapes.push_back(s);
  }
  if (spec.shapes.empty()) throw InvalidInput("canvas too small for a synthetic scene");
  spec.target = static_cast<std::size_t>(rng.below(spec.shapes.size()));
  spec.validate();
  return spec;
}

SyntheticSample generate_synthetic(const SyntheticSceneSpec& spec) {
  spec.validate();
  const Index n = spec.canvas;
  SyntheticSample out;
  out.image = Image(n, n);
  out.mask = BinaryMask::Zero(n, n);
  Rng noise(mix_seed(spec.seed, 0xBAC6));
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x) {
      const float v = 0.5f + static_cast<float>(noise.uniform(-0.03, 0.03));
      for (Index c = 0; c < 3; ++c) out.image.at(y, x, c) = v;
    }
  for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
    const auto& s = spec.shapes[i];
    const auto& rgb = palette_color(s.color);
    for (Index y = 0; y < n; ++y)
      for (Index x = 0; x < n; ++x)
        if (inside(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5)) {
          for (Index c = 0; c < 3; ++c) out.image.at(y, x, c) = rgb[static_cast<std::size_t>(c)];
          if (i == spec.target) out.mask(y, x) = 1;
        }
  }
  out.expression = spec.expression();

  // Separable Gaussian blur of the target mask.
  const double sigma = static_cast<double>(n) / 24.0;
  const Index r = static_cast<Index>(std::ceil(3 * sigma));
  Eigen::VectorXd k(2 * r + 1);
  for (Index i = -r; i <= r; ++i) k(i + r) = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  k /= k.sum();
  const EvalMap m = out.mask.cast<double>();
  EvalMap tmp = EvalMap::Zero(n, n), blur = EvalMap::Zero(n, n);
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x)
      for (Index i = -r; i <= r; ++i) {
        const Index xx = x + i;
        if (xx >= 0 && xx < n) tmp(y, x) += k(i + r) * m(y, xx);
      }
  for (Index y = 0; y < n; ++y)
    for (Index x = 0; x < n; ++x)
      for (Index i = -r; i <= r; ++i) {
        const Index yy = y + i;
        if (yy >= 0 && yy < n) blur(y, x) += k(i + r) * tmp(yy, x);
      }
  out.heatmap = normalize_mass(blur, "synthetic heatmap");
  return out;
}

std::vector<SyntheticSceneSpec> synthetic_suite(std::uint64_t seed, std::size_t count, Index canvas) {
  std::vector<SyntheticSceneSpec> suite;
  suite.reserve(count);
  for (std::size_t i = 0; i < count; ++i) suite.push_back(SyntheticSceneSpec::random(mix_seed(seed, i), canvas));
  return suite;
}

namespace {

Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> quantize_heatmap8(const EvalMap& h) {
  return (h / h.maxCoeff() * 255.0).round().cast<std::uint8_t>();
}

Eigen::Array<std::uint16_t, Eigen::Dynamic, Eigen::Dynamic> quantize_heatmap16(const EvalMap& h) {
  return (h / h.maxCoeff() * 65535.0).round().cast<std::uint16_t>();
}

}  // namespace

std::string synthetic_checksum(const std::vector<SyntheticSceneSpec>& suite) {
  Sha256 h;
  for (const auto& spec : suite) {
    const SyntheticSample s = generate_synthetic(spec);
    const Bytes png = encode_png_rgb8(s.image);
    h.update(std::as_bytes(std::span<const std::uint8_t>(png.data(), png.size())));
    h.update_values(std::span<const std::uint8_t>(s.mask.data(), static_cast<std::size_t>(s.mask.size())));
    const auto q = quantize_heatmap8(s.heatmap);
    h.update_values(std::span<const std::uint8_t>(q.data(), static_cast<std::size_t>(q.size())));
    h.update(s.expression + "\n");
  }
  return h.hex_digest();
}

void write_synthetic_dataset(const fs::path& dir, std::uint64_t seed, std::size_t count, Index canvas) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  fs::create_directories(dir / "heatmaps");
  std::ofstream referring(dir / "referring.jsonl", std::ios::trunc);
  std::ofstream affordance(dir / "affordance.jsonl", std::ios::trunc);
  if (!referring || !affordance) throw IoError(dir.string(), "cannot write manifests");
  const auto suite = synthetic_suite(seed, count, canvas);
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const SyntheticSample s = generate_synthetic(suite[i]);
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i);
    write_file(dir / "images" / name, encode_png_rgb8(s.image));
    const Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask = s.mask * std::uint8_t{255};
    write_file(dir / "masks" / name, encode_png_gray8(mask));
    write_file(dir / "heatmaps" / name, encode_png_gray16(quantize_heatmap16(s.heatmap)));
    const std::string image = std::string("images/") + name;
    const auto& shape = suite[i].shapes[suite[i].target];
    referring << nlohmann::json{{"image", image}, {"text", s.expression}, {"mask", std::string("masks/") + name}, {"split", "train"}}.dump()
              << "\n";
    affordance << nlohmann::json{{"id", std::string(name, 4)},
                                 {"image", image},
                                 {"action", s.expression},
                                 {"heatmap", std::string("heatmaps/") + name},
                                 {"object", to_string(shape.kind)}}
                      .dump()
               << "\n";
  }
}

}  // namespace affclip
