#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace gritcap {

using TokenId = std::int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kNumSpecials = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kUnkToken = "<unk>";

inline constexpr std::size_t kCaptionsPerImage = 5;

// Lowercases (Unicode-aware for Latin, Greek and Cyrillic scripts), splits every
// punctuation code point into its own unit and collapses whitespace runs.
// Throws ValidationError on malformed UTF-8.
std::string normalize(std::string_view text);

// normalize(text) split on single spaces.
std::vector<std::string> tokenize(std::string_view text);

bool is_special_surface(std::string_view token);

/// Bidirectional token <-> id map. Ids 0..3 are always <pad>, <bos>, <eos>,
/// <unk>; the remaining ids are contiguous.
class Vocabulary {
 public:
  // Vocabulary holding only the four specials.
  Vocabulary();

  // Builds from an ordered token list whose first four entries are the specials.
  // Throws ValidationError on duplicates, empty tokens or misplaced specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return token_of_.size(); }
  bool contains(std::string_view token) const;
  std::optional<TokenId> find(std::string_view token) const;
  // Unknown tokens map to kUnkId.
  TokenId id_of(std::string_view token) const;
  // Throws ValidationError("unknown id ...") when id >= size().
  const std::string& token_of(TokenId id) const;
  const std::vector<std::string>& tokens() const noexcept { return token_of_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.token_of_ == b.token_of_;
  }

 private:
  std::vector<std::string> token_of_;
  std::unordered_map<std::string, TokenId> id_of_;
};

struct CaptionRecord {
  std::int64_t image_id = 0;
  std::string file_name;
  std::vector<std::string> captions;

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

struct CorpusSplit {
  std::vector<CaptionRecord> train;
  std::vector<CaptionRecord> val;
  std::vector<CaptionRecord> test;
};

inline constexpr std::size_t kDefaultMinFreq = 5;
inline constexpr std::size_t kExcludeAll = std::numeric_limits<std::size_t>::max();

// Specials plus every token seen at least min_freq times, ordered by descending
// frequency then lexicographically. Throws ValidationError("empty corpus").
Vocabulary build_vocab(const std::vector<CaptionRecord>& corpus,
                       std::size_t min_freq = kDefaultMinFreq);

// [BOS] + ids + [EOS], truncated to max_len keeping EOS last. Tokens missing
// from the vocabulary, and text that spells a special token, become <unk>.
std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text,
                            std::size_t max_len, bool pad = false);

// Joins non-special surfaces, renders <unk> literally, skips <pad>/<bos> and
// stops at the first <eos>.
std::string decode(const Vocabulary& vocab, const std::vector<TokenId>& ids);

// Vocabulary file: one token per line, line index is the id.
Vocabulary read_vocab_file(const std::filesystem::path& path);
void write_vocab_file(const Vocabulary& vocab, const std::filesystem::path& path);
std::string serialize_vocab(const Vocabulary& vocab);

// COCO caption JSON. Records follow the order of the "images" array and keep
// annotation order within an image.
std::vector<CaptionRecord> parse_coco_json(std::string_view json_text);
std::vector<CaptionRecord> load_coco_json(const std::filesystem::path& path);

// Seeded Fisher-Yates partition: the first n_val shuffled records become val,
// the next n_test test, the rest train (each list re-sorted into input order).
CorpusSplit split_karpathy(const std::vector<CaptionRecord>& records,
                           std::size_t n_val, std::size_t n_test,
                           std::uint64_t seed);

// Explicit partition by image id, from a {"train","val","test"} JSON file.
// Must be disjoint and cover every record.
CorpusSplit split_from_ids(const std::vector<CaptionRecord>& records,
                           const std::vector<std::int64_t>& train_ids,
                           const std::vector<std::int64_t>& val_ids,
                           const std::vector<std::int64_t>& test_ids);
CorpusSplit load_split_file(const std::vector<CaptionRecord>& records,
                            const std::filesystem::path& path);

}  // namespace gritcap
