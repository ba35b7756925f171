#pragma once

#include "affclip/image_io.hpp"
#include "affclip/metrics.hpp"
#include "affclip/tensor.hpp"

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace affclip {

using BinaryMask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;  // H x W, {0, 1}

struct ReferringSample {
  std::string id;  // "<manifest file>:<line>"
  std::filesystem::path image_path;
  std::string expression;
  std::filesystem::path mask_path;
  std::string split;
};

struct AffordanceSample {
  std::string id;
  std::filesystem::path image_path;
  std::string action;
  std::filesystem::path heatmap_path;
  std::string object_category;
};

/// JSON-Lines manifests; relative paths resolve against the manifest's directory.
std::vector<ReferringSample> load_referring_manifest(const std::filesystem::path& path);
std::vector<ReferringSample> load_referring_manifests(const std::vector<std::filesystem::path>& paths);
std::vector<AffordanceSample> load_affordance_eval(const std::filesystem::path& path);

struct ReferringItem {
  std::string id;
  Image image;  // resized to size x size
  std::string expression;
  BinaryMask mask;  // resized (nearest) to size x size
};

struct AffordanceItem {
  std::string id;
  Image image;  // native resolution
  std::string action;
  EvalMap heatmap;  // native resolution, unit mass
};

/// Decodes and validates one sample. Masks must hold only 0 and the format's
/// maximum level, and must match the image size before resizing.
ReferringItem load_referring_item(const ReferringSample& s, Index size);
AffordanceItem load_affordance_item(const AffordanceSample& s);

/// Bilinear resize followed by renormalization to unit mass.
EvalMap resize_heatmap(const EvalMap& heatmap, Index h, Index w);
BinaryMask resize_mask(const BinaryMask& mask, Index h, Index w);

// ---------------------------------------------------------------------------
// Synthetic shapes

enum class ShapeKind { Circle, Square, Triangle };
std::string to_string(ShapeKind k);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::Circle;
  std::string color;  // palette name
  double cx = 0, cy = 0, radius = 0;  // centre and half extent in pixels
};

struct SyntheticSceneSpec {
  std::uint64_t seed = 0;
  Index canvas = 128;
  std::vector<ShapeSpec> shapes;
  std::size_t target = 0;

  /// "the <color> <shape>"
  std::string expression() const;
  /// Throws InvalidInput on duplicate color+shape, overlap, out-of-canvas
  /// shapes, unknown colors or a bad target index.
  void validate() const;

  /// Random scene with distinct colors and non-overlapping shapes.
  static SyntheticSceneSpec random(std::uint64_t seed, Index canvas, int min_shapes = 2, int max_shapes = 3);
};

const std::vector<std::pair<std::string, std::array<float, 3>>>& synthetic_palette();

struct SyntheticSample {
  Image image;
  std::string expression;
  BinaryMask mask;
  EvalMap heatmap;  // blurred target mask, unit mass
};

SyntheticSample generate_synthetic(const SyntheticSceneSpec& spec);
bool inside(const ShapeSpec& s, double x, double y);

/// Deterministic suite of `count` scenes (scene i uses seed mix_seed(seed, i)).
std::vector<SyntheticSceneSpec> synthetic_suite(std::uint64_t seed, std::size_t count, Index canvas);
/// SHA-256 over the 8-bit rendering, masks and expressions of a suite.
std::string synthetic_checksum(const std::vector<SyntheticSceneSpec>& suite);

/// Writes images/, masks/, heatmaps/, referring.jsonl and affordance.jsonl.
void write_synthetic_dataset(const std::filesystem::path& dir, std::uint64_t seed, std::size_t count, Index canvas);

// ---------------------------------------------------------------------------
// Prefetch

/// Runs `produce` on a background thread, keeping at most `capacity` results
/// queued. `produce` returns nullopt when exhausted; exceptions are rethrown
/// from next().
template <typename T>
class Prefetcher {
 public:
  Prefetcher(std::size_t capacity, std::function<std::optional<T>()> produce)
      : capacity_(std::max<std::size_t>(1, capacity)), produce_(std::move(produce)) {
    worker_ = std::thread([this] { run(); });
  }

  ~Prefetcher() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  std::optional<T> next() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !queue_.empty() || done_; });
    if (!queue_.empty()) {
      T item = std::move(queue_.front());
      queue_.pop_front();
      cv_.notify_all();
      return item;
    }
    if (error_) std::rethrow_exception(error_);
    return std::nullopt;
  }

 private:
  void run() {
    try {
      for (;;) {
        {
          std::unique_lock lock(mutex_);
          cv_.wait(lock, [&] { return queue_.size() < capacity_ || stop_; });
          if (stop_) break;
        }
        std::optional<T> item = produce_();
        std::lock_guard lock(mutex_);
        if (!item) break;
        queue_.push_back(std::move(*item));
        cv_.notify_all();
      }
    } catch (...) {
      std::lock_guard lock(mutex_);
      error_ = std::current_exception();
    }
    std::lock_guard lock(mutex_);
    done_ = true;
    cv_.notify_all();
  }

  std::size_t capacity_;
  std::function<std::optional<T>()> produce_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> queue_;
  bool stop_ = false;
  bool done_ = false;
  std::exception_ptr error_;
  std::thread worker_;
};

}  // namespace affclip
