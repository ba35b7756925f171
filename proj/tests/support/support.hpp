#pragma once

#include "oracles.hpp"

#include "affclip/config.hpp"
#include "affclip/fpn_decoder.hpp"
#include "affclip/metrics.hpp"
#include "affclip/rng.hpp"
#include "affclip/tensor.hpp"

#include <filesystem>
#include <string>

namespace testing {

inline std::filesystem::path source_dir() { return AFFCLIP_SOURCE_DIR; }
inline std::filesystem::path fixtures_dir() { return source_dir() / "tests" / "fixtures"; }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("affclip_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline oracle::Map to_oracle(const affclip::EvalMap& m) {
  oracle::Map o(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int y = 0; y < o.h; ++y)
    for (int x = 0; x < o.w; ++x) o(y, x) = m(y, x);
  return o;
}

template <typename Scalar>
oracle::Tensor to_oracle(const affclip::FeatureBatch<Scalar>& f) {
  oracle::Tensor t(static_cast<std::size_t>(f.batch),
                   std::vector<oracle::Map>(static_cast<std::size_t>(f.channels()),
                                            oracle::Map(static_cast<int>(f.height), static_cast<int>(f.width))));
  for (affclip::Index b = 0; b < f.batch; ++b)
    for (affclip::Index c = 0; c < f.channels(); ++c)
      for (affclip::Index y = 0; y < f.height; ++y)
        for (affclip::Index x = 0; x < f.width; ++x)
          t[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)](static_cast<int>(y), static_cast<int>(x)) =
              static_cast<double>(f.at(b, y, x, c));
  return t;
}

template <typename Scalar>
double max_abs_diff(const affclip::FeatureBatch<Scalar>& f, const oracle::Tensor& t) {
  double worst = 0.0;
  for (affclip::Index b = 0; b < f.batch; ++b)
    for (affclip::Index c = 0; c < f.channels(); ++c)
      for (affclip::Index y = 0; y < f.height; ++y)
        for (affclip::Index x = 0; x < f.width; ++x)
          worst = std::max(worst, std::abs(static_cast<double>(f.at(b, y, x, c)) -
                                           t[static_cast<std::size_t>(b)][static_cast<std::size_t>(c)](
                                               static_cast<int>(y), static_cast<int>(x))));
  return worst;
}

inline affclip::FeatureBatch<double> random_batch(affclip::Rng& rng, affclip::Index b, affclip::Index h, affclip::Index w,
                                                  affclip::Index c) {
  affclip::FeatureBatch<double> f(b, h, w, c);
  f.data = rng.uniform_matrix<double>(f.rows(), c, 1.0);
  return f;
}

/// Random projected pyramid for an input of `size` pixels (grids at strides 8, 16, 32).
inline affclip::Projected<double> random_projected(affclip::Rng& rng, affclip::Index batch, affclip::Index width,
                                                   affclip::Index size, const affclip::LevelSet& levels) {
  affclip::Projected<double> p;
  p.global = rng.uniform_matrix<double>(batch, width, 1.0);
  for (int l = 1; l <= 3; ++l) {
    const affclip::Index g = size >> (l + 2);
    p.grid[static_cast<std::size_t>(l - 1)] = {g, g};
    if (levels.has(l)) p.levels[static_cast<std::size_t>(l - 1)] = random_batch(rng, batch, g, g, width);
  }
  return p;
}

/// Oracle evaluation of fuse() on the same inputs.
inline oracle::Tensor oracle_fuse(const affclip::Projected<double>& p) {
  std::vector<std::vector<double>> global(static_cast<std::size_t>(p.batch()));
  for (affclip::Index b = 0; b < p.batch(); ++b)
    for (affclip::Index c = 0; c < p.width(); ++c) global[static_cast<std::size_t>(b)].push_back(p.global(b, c));
  std::vector<std::optional<oracle::Tensor>> levels(3);
  std::vector<std::pair<int, int>> grids;
  for (std::size_t i = 0; i < 3; ++i) {
    if (p.levels[i]) levels[i] = to_oracle(*p.levels[i]);
    grids.emplace_back(static_cast<int>(p.grid[i][0]), static_cast<int>(p.grid[i][1]));
  }
  return oracle::fuse(global, levels, grids);
}

inline affclip::EvalMap random_map(affclip::Rng& rng, affclip::Index h, affclip::Index w, double lo, double hi) {
  affclip::EvalMap m(h, w);
  for (affclip::Index y = 0; y < h; ++y)
    for (affclip::Index x = 0; x < w; ++x) m(y, x) = rng.uniform(lo, hi);
  return m;
}

/// Small stub run: 32-wide features, 64 px inputs, 16 synthetic scenes.
inline affclip::RunConfig tiny_run_config(const std::filesystem::path& dir, affclip::Index steps = 20) {
  nlohmann::json j = affclip::RunConfig::defaults();
  j["backbone"]["seed"] = 3;
  for (const char* k : {"c1", "c2", "c3", "embed"}) j["backbone"][k] = 32;
  j["decoder"]["common_width"] = 16;
  j["train"]["learning_rate"] = 0.002;
  j["train"]["batch_size"] = 4;
  j["train"]["max_steps"] = steps;
  j["train"]["input_size"] = 64;
  j["train"]["seed"] = 11;
  j["train"]["log_every"] = 0;
  j["train"]["checkpoint_dir"] = dir.string();
  j["data"]["synthetic"] = {{"count", 16}, {"seed", 5}, {"canvas", 64}};
  return affclip::RunConfig::from_json(j);
}

}  // namespace testing
