#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace affclip {

/// Fixed-length token ids: [begin, subwords..., end, pad...].
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::int64_t valid_len = 0;

  std::int64_t context_length() const { return static_cast<std::int64_t>(ids.size()); }
};

struct TokenizerConfig {
  std::filesystem::path merges_path;
  // Total vocabulary including the two specials, which take the last two ids.
  // 49152 keeps every id below 49152; 49408 reproduces the published CLIP id space.
  std::int64_t vocab_size = 49152;
  std::int64_t context_length = 77;
};

/// Default location of the bundled merge table (compiled-in, overridable with
/// the AFFCLIP_DATA_DIR environment variable).
std::filesystem::path default_merges_path();

/// Lower-cased byte-level BPE in the CLIP style: whitespace is collapsed, text
/// is split into letter runs / single digits / punctuation runs, each piece is
/// mapped byte-wise onto printable code points, the last symbol is tagged with
/// "</w>", and merges are applied lowest rank first.
class BpeTokenizer {
 public:
  explicit BpeTokenizer(const TokenizerConfig& config);

  /// Throws InvalidInput for empty (or whitespace-only) text.
  TokenSequence tokenize(std::string_view text) const;

  /// Subword ids without specials or padding.
  std::vector<std::int32_t> encode(std::string_view text) const;
  std::string decode(const std::vector<std::int32_t>& ids) const;

  std::int32_t begin_id() const { return static_cast<std::int32_t>(config_.vocab_size - 2); }
  std::int32_t end_id() const { return static_cast<std::int32_t>(config_.vocab_size - 1); }
  static constexpr std::int32_t pad_id() { return 0; }
  std::int64_t vocab_size() const { return config_.vocab_size; }
  std::int64_t context_length() const { return config_.context_length; }
  std::int64_t merge_count() const { return static_cast<std::int64_t>(merge_ranks_.size()); }

 private:
  std::vector<std::string> bpe(const std::string& piece) const;

  TokenizerConfig config_;
  std::vector<std::string> byte_symbols_;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, std::int32_t> encoder_;
  std::unordered_map<std::string, std::int32_t> merge_ranks_;
};

}  // namespace affclip
