#include "affclip/tokenizer.hpp"

#include "affclip/errors.hpp"

#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <array>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#ifndef AFFCLIP_DEFAULT_DATA_DIR
#define AFFCLIP_DEFAULT_DATA_DIR "data"
#endif

namespace affclip {
namespace {

constexpr std::string_view kBeginToken = "<start_of_text>";
constexpr std::string_view kEndToken = "<end_of_text>";
constexpr std::int64_t kByteSymbols = 256;

std::string utf8(UChar32 c) {
  std::string out;
  icu::UnicodeString(c).toUTF8String(out);
  return out;
}

// Reversible byte -> printable code point table; printable Latin-1 bytes map
// to themselves, the rest are shifted above U+0100.
std::vector<std::string> byte_table() {
  std::vector<int> printable;
  for (int b = '!'; b <= '~'; ++b) printable.push_back(b);
  for (int b = 0xA1; b <= 0xAC; ++b) printable.push_back(b);
  for (int b = 0xAE; b <= 0xFF; ++b) printable.push_back(b);
  std::array<UChar32, 256> cp{};
  std::array<bool, 256> seen{};
  for (int b : printable) {
    cp[static_cast<std::size_t>(b)] = b;
    seen[static_cast<std::size_t>(b)] = true;
  }
  // Order of the symbol list matters: printable bytes first, then the rest.
  std::vector<std::string> ordered;
  for (int b : printable) ordered.push_back(utf8(b));
  int n = 0;
  for (int b = 0; b < 256; ++b) {
    if (seen[static_cast<std::size_t>(b)]) continue;
    cp[static_cast<std::size_t>(b)] = 256 + n++;
    ordered.push_back(utf8(cp[static_cast<std::size_t>(b)]));
  }
  std::vector<std::string> table(256);
  for (int b = 0; b < 256; ++b) table[static_cast<std::size_t>(b)] = utf8(cp[static_cast<std::size_t>(b)]);
  // Stash the vocabulary order in the tail so the caller can rebuild it.
  table.insert(table.end(), ordered.begin(), ordered.end());
  return table;
}

bool is_letter(UChar32 c) { return (U_GET_GC_MASK(c) & U_GC_L_MASK) != 0; }
bool is_number(UChar32 c) { return (U_GET_GC_MASK(c) & U_GC_N_MASK) != 0; }
bool is_space(UChar32 c) { return u_isUWhiteSpace(c) != 0; }

std::vector<UChar32> code_points(const icu::UnicodeString& s) {
  std::vector<UChar32> out;
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) out.push_back(s.char32At(i));
  return out;
}

// Collapse whitespace runs, trim, lower-case.
std::vector<UChar32> clean(std::string_view text) {
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  s.toLower(icu::Locale::getRoot());
  std::vector<UChar32> out;
  bool pending_space = false;
  for (UChar32 c : code_points(s)) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string to_utf8(const std::vector<UChar32>& cps, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) out += utf8(cps[i]);
  return out;
}

bool starts_with(const std::vector<UChar32>& cps, std::size_t at, std::string_view ascii) {
  if (at + ascii.size() > cps.size()) return false;
  for (std::size_t k = 0; k < ascii.size(); ++k)
    if (cps[at + k] != static_cast<UChar32>(static_cast<unsigned char>(ascii[k]))) return false;
  return true;
}

// Splits cleaned text the way the reference pattern does:
// specials | 's|'t|'re|'ve|'m|'ll|'d | letters+ | one number | other+
std::vector<std::string> pre_tokenize(const std::vector<UChar32>& cps) {
  static constexpr std::array<std::string_view, 7> kContractions = {"'s", "'t", "'re", "'ve",
                                                                    "'m", "'ll", "'d"};
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < cps.size()) {
    const UChar32 c = cps[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    bool matched = false;
    for (std::string_view special : {kBeginToken, kEndToken}) {
      if (starts_with(cps, i, special)) {
        pieces.emplace_back(special);
        i += special.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    for (std::string_view con : kContractions) {
      if (starts_with(cps, i, con)) {
        pieces.emplace_back(con);
        i += con.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;
    std::size_t j = i + 1;
    if (is_letter(c)) {
      while (j < cps.size() && is_letter(cps[j])) ++j;
    } else if (!is_number(c)) {
      while (j < cps.size() && !is_space(cps[j]) && !is_letter(cps[j]) && !is_number(cps[j])) ++j;
    }
    pieces.push_back(to_utf8(cps, i, j));
    i = j;
  }
  return pieces;
}

}  // namespace

std::filesystem::path default_merges_path() {
  if (const char* env = std::getenv("AFFCLIP_DATA_DIR"); env != nullptr && *env != '\0')
    return std::filesystem::path(env) / "bpe_merges.txt";
  return std::filesystem::path(AFFCLIP_DEFAULT_DATA_DIR) / "bpe_merges.txt";
}

BpeTokenizer::BpeTokenizer(const TokenizerConfig& config) : config_(config) {
  if (config_.merges_path.empty()) config_.merges_path = default_merges_path();
  if (config_.context_length < 2) throw ConfigError("tokenizer context length must be >= 2");
  const std::int64_t merges_wanted = config_.vocab_size - 2 * kByteSymbols - 2;
  if (merges_wanted < 0) throw ConfigError("tokenizer vocab_size too small: " + std::to_string(config_.vocab_size));

  std::ifstream in(config_.merges_path);
  if (!in) throw IoError(config_.merges_path.string(), "cannot open BPE merges file");

  auto table = byte_table();
  byte_symbols_.assign(table.begin(), table.begin() + kByteSymbols);
  vocab_.assign(table.begin() + kByteSymbols, table.end());
  for (std::int64_t b = 0; b < kByteSymbols; ++b) vocab_.push_back(vocab_[static_cast<std::size_t>(b)] + "</w>");

  std::string line;
  std::getline(in, line);  // "#version" header
  while (static_cast<std::int64_t>(merge_ranks_.size()) < merges_wanted && std::getline(in, line)) {
    std::istringstream ss(line);
    std::string a, b;
    if (!(ss >> a >> b)) continue;
    merge_ranks_.emplace(a + " " + b, static_cast<std::int32_t>(merge_ranks_.size()));
    vocab_.push_back(a + b);
  }
  if (static_cast<std::int64_t>(merge_ranks_.size()) < merges_wanted)
    throw IoError(config_.merges_path.string(),
                  "merges file has " + std::to_string(merge_ranks_.size()) + " merges, vocab_size " +
                      std::to_string(config_.vocab_size) + " needs " + std::to_string(merges_wanted));
  vocab_.emplace_back(kBeginToken);
  vocab_.emplace_back(kEndToken);
  encoder_.reserve(vocab_.size());
  for (std::size_t i = 0; i < vocab_.size(); ++i)
    encoder_.emplace(vocab_[i], static_cast<std::int32_t>(i));
}

std::vector<std::string> BpeTokenizer::bpe(const std::string& piece) const {
  std::vector<std::string> word;
  for (unsigned char byte : piece) word.push_back(byte_symbols_[byte]);
  if (word.empty()) return word;
  word.back() += "</w>";

  while (word.size() > 1) {
    std::int32_t best = std::numeric_limits<std::int32_t>::max();
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < word.size(); ++i) {
      auto it = merge_ranks_.find(word[i] + " " + word[i + 1]);
      if (it != merge_ranks_.end() && it->second < best) {
        best = it->second;
        best_at = i;
      }
    }
    if (best == std::numeric_limits<std::int32_t>::max()) break;
    const std::string first = word[best_at], second = word[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(word.size());
    for (std::size_t i = 0; i < word.size();) {
      if (i + 1 < word.size() && word[i] == first && word[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(word[i]);
        ++i;
      }
    }
    word = std::move(merged);
  }
  return word;
}

std::vector<std::int32_t> BpeTokenizer::encode(std::string_view text) const {
  std::vector<std::int32_t> ids;
  for (const std::string& piece : pre_tokenize(clean(text))) {
    if (piece == kBeginToken) {
      ids.push_back(begin_id());
      continue;
    }
    if (piece == kEndToken) {
      ids.push_back(end_id());
      continue;
    }
    for (const std::string& symbol : bpe(piece)) ids.push_back(encoder_.at(symbol));
  }
  return ids;
}

TokenSequence BpeTokenizer::tokenize(std::string_view text) const {
  std::vector<std::int32_t> body = encode(text);
  if (body.empty()) throw InvalidInput("cannot tokenize an empty prompt");
  const auto length = static_cast<std::size_t>(config_.context_length);
  TokenSequence seq;
  seq.ids.assign(length, pad_id());
  seq.ids[0] = begin_id();
  std::size_t n = 1;
  for (std::int32_t id : body) {
    if (n + 1 >= length) break;
    seq.ids[n++] = id;
  }
  seq.ids[n++] = end_id();
  seq.valid_len = static_cast<std::int64_t>(n);
  return seq;
}

std::string BpeTokenizer::decode(const std::vector<std::int32_t>& ids) const {
  std::unordered_map<std::string, char> byte_of;
  for (int b = 0; b < 256; ++b)
    byte_of.emplace(byte_symbols_[static_cast<std::size_t>(b)], static_cast<char>(b));
  std::string joined;
  for (std::int32_t id : ids) {
    if (id == begin_id() || id == end_id()) continue;
    if (id < 0 || id >= static_cast<std::int32_t>(vocab_.size())) throw InvalidInput("token id out of range");
    joined += vocab_[static_cast<std::size_t>(id)];
  }
  std::string bytes;
  for (UChar32 c : code_points(icu::UnicodeString::fromUTF8(joined))) {
    auto it = byte_of.find(utf8(c));
    if (it != byte_of.end()) bytes += it->second;
  }
  std::string out;
  for (std::size_t i = 0; i < bytes.size();) {
    if (bytes.compare(i, 4, "</w>") == 0) {
      out += ' ';
      i += 4;
    } else {
      out += bytes[i++];
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace affclip
