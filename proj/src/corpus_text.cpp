#include "gritcap/corpus_text.hpp"

#include <algorithm>
#include <utility>

#include <json.hpp>

#include "gritcap/error.hpp"
#include "gritcap/rng.hpp"
#include "io_util.hpp"
#include "unicode.hpp"

namespace gritcap {

using nlohmann::json;

std::string normalize(std::string_view text) {
  const std::vector<char32_t> cps = unicode::decode_utf8(text);
  std::string out;
  out.reserve(text.size() + 8);
  bool pending_space = false;
  auto separate = [&] {
    if (!out.empty()) pending_space = true;
  };
  for (char32_t cp : cps) {
    if (unicode::is_space(cp)) {
      separate();
      continue;
    }
    const bool punct = unicode::is_punctuation(cp);
    if (punct) separate();
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    unicode::append_utf8(out, unicode::to_lower(cp));
    if (punct) separate();
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::string norm = normalize(text);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    tokens.emplace_back(norm, start, end - start);
    start = end + 1;
  }
  return tokens;
}

bool is_special_surface(std::string_view token) {
  return token == kPadToken || token == kBosToken || token == kEosToken ||
         token == kUnkToken;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary()
    : token_of_{std::string(kPadToken), std::string(kBosToken),
                std::string(kEosToken), std::string(kUnkToken)} {
  for (std::size_t i = 0; i < token_of_.size(); ++i) {
    id_of_.emplace(token_of_[i], static_cast<TokenId>(i));
  }
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  static constexpr std::string_view kSpecials[kNumSpecials] = {kPadToken, kBosToken,
                                                              kEosToken, kUnkToken};
  if (tokens.size() < kNumSpecials) {
    throw ValidationError("vocabulary needs at least the 4 special tokens, got " +
                          std::to_string(tokens.size()));
  }
  for (std::size_t i = 0; i < kNumSpecials; ++i) {
    if (tokens[i] != kSpecials[i]) {
      throw ValidationError("vocabulary line " + std::to_string(i) + " must be \"" +
                            std::string(kSpecials[i]) + "\", got \"" + tokens[i] + "\"");
    }
  }
  Vocabulary v;
  v.token_of_ = std::move(tokens);
  v.id_of_.clear();
  v.id_of_.reserve(v.token_of_.size());
  for (std::size_t i = 0; i < v.token_of_.size(); ++i) {
    const std::string& tok = v.token_of_[i];
    if (tok.empty()) {
      throw ValidationError("empty token at id " + std::to_string(i));
    }
    if (tok.find_first_of(" \t\r\n") != std::string::npos) {
      throw ValidationError("token at id " + std::to_string(i) + " contains whitespace");
    }
    if (!v.id_of_.emplace(tok, static_cast<TokenId>(i)).second) {
      throw ValidationError("duplicate token \"" + tok + "\" at id " + std::to_string(i));
    }
  }
  return v;
}

bool Vocabulary::contains(std::string_view token) const {
  return find(token).has_value();
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = id_of_.find(std::string(token));
  if (it == id_of_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_of(std::string_view token) const {
  return find(token).value_or(kUnkId);
}

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= token_of_.size()) {
    throw ValidationError("unknown id " + std::to_string(id) + " (vocabulary size " +
                          std::to_string(token_of_.size()) + ")");
  }
  return token_of_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocab(const std::vector<CaptionRecord>& corpus, std::size_t min_freq) {
  if (corpus.empty()) throw ValidationError("empty corpus");
  if (min_freq == 0) throw ValidationError("min_freq must be >= 1");
  std::unordered_map<std::string, std::size_t> freq;
  for (const auto& record : corpus) {
    for (const auto& caption : record.captions) {
      for (auto& tok : tokenize(caption)) {
        if (is_special_surface(tok)) continue;
        ++freq[std::move(tok)];
      }
    }
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, count] : freq) {
    if (count >= min_freq) kept.emplace_back(tok, count);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens = Vocabulary().tokens();
  tokens.reserve(tokens.size() + kept.size());
  for (auto& [tok, count] : kept) tokens.push_back(std::move(tok));
  return Vocabulary::from_tokens(std::move(tokens));
}

std::vector<TokenId> encode(const Vocabulary& vocab, std::string_view text,
                            std::size_t max_len, bool pad) {
  if (max_len < 2) {
    throw ValidationError("encode: max_len must be >= 2, got " + std::to_string(max_len));
  }
  std::vector<TokenId> ids;
  ids.push_back(kBosId);
  for (const auto& tok : tokenize(text)) {
    ids.push_back(is_special_surface(tok) ? kUnkId : vocab.id_of(tok));
  }
  if (ids.size() + 1 > max_len) ids.resize(max_len - 1);
  ids.push_back(kEosId);
  if (pad) ids.resize(max_len, kPadId);
  return ids;
}

std::string decode(const Vocabulary& vocab, const std::vector<TokenId>& ids) {
  for (TokenId id : ids) vocab.token_of(id);  // validates every id up front
  std::string out;
  for (TokenId id : ids) {
    if (id == kEosId) break;
    if (id == kPadId || id == kBosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_of(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Vocabulary file

std::string serialize_vocab(const Vocabulary& vocab) {
  std::string out;
  for (const auto& tok : vocab.tokens()) {
    out += tok;
    out.push_back('\n');
  }
  return out;
}

Vocabulary read_vocab_file(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(std::move(line));
    start = end + 1;
  }
  try {
    return Vocabulary::from_tokens(std::move(tokens));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_vocab_file(const Vocabulary& vocab, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize_vocab(vocab));
}

// ---------------------------------------------------------------------------
// COCO captions

namespace {

json parse_json_or_throw(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": malformed JSON at byte " + std::to_string(e.byte) + ": " +
                         e.what(),
                     e.byte);
  }
}

const json& require_field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(where + ": missing field \"" + key + "\"");
  }
  return obj.at(key);
}

std::int64_t require_int(const json& obj, const char* key, const std::string& where) {
  const json& v = require_field(obj, key, where);
  if (!v.is_number_integer()) {
    throw ValidationError(where + ": field \"" + key + "\" must be an integer");
  }
  return v.get<std::int64_t>();
}

}  // namespace

std::vector<CaptionRecord> parse_coco_json(std::string_view json_text) {
  const json doc = parse_json_or_throw(json_text, "COCO captions");
  if (!doc.is_object()) throw ValidationError("COCO captions: top level must be an object");
  const json& images = require_field(doc, "images", "COCO captions");
  const json& annotations = require_field(doc, "annotations", "COCO captions");
  if (!images.is_array() || !annotations.is_array()) {
    throw ValidationError("COCO captions: \"images\" and \"annotations\" must be arrays");
  }

  std::vector<CaptionRecord> records;
  records.reserve(images.size());
  std::unordered_map<std::int64_t, std::size_t> index;
  index.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const std::string where = "images[" + std::to_string(i) + "]";
    CaptionRecord rec;
    rec.image_id = require_int(images[i], "id", where);
    if (auto it = images[i].find("file_name");
        it != images[i].end() && it->is_string()) {
      rec.file_name = it->get<std::string>();
    }
    if (!index.emplace(rec.image_id, records.size()).second) {
      throw ValidationError("duplicate image id " + std::to_string(rec.image_id));
    }
    records.push_back(std::move(rec));
  }

  for (std::size_t i = 0; i < annotations.size(); ++i) {
    const std::string where = "annotations[" + std::to_string(i) + "]";
    const std::int64_t image_id = require_int(annotations[i], "image_id", where);
    const json& caption = require_field(annotations[i], "caption", where);
    if (!caption.is_string()) {
      throw ValidationError(where + ": \"caption\" must be a string");
    }
    auto it = index.find(image_id);
    if (it == index.end()) {
      throw ValidationError(where + ": caption refers to unknown image id " +
                            std::to_string(image_id));
    }
    records[it->second].captions.push_back(caption.get<std::string>());
  }

  for (const auto& rec : records) {
    if (rec.captions.size() != kCaptionsPerImage) {
      throw ValidationError("image " + std::to_string(rec.image_id) + " has " +
                            std::to_string(rec.captions.size()) + " captions, expected " +
                            std::to_string(kCaptionsPerImage));
    }
  }
  return records;
}

std::vector<CaptionRecord> load_coco_json(const std::filesystem::path& path) {
  const std::string text = detail::read_file(path);
  try {
    return parse_coco_json(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.offset());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Splits

namespace {

// Assigns each record a bucket (0 train, 1 val, 2 test) and materializes the
// split in input order.
CorpusSplit materialize(const std::vector<CaptionRecord>& records,
                        const std::vector<int>& bucket) {
  CorpusSplit split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    switch (bucket[i]) {
      case 0: split.train.push_back(records[i]); break;
      case 1: split.val.push_back(records[i]); break;
      default: split.test.push_back(records[i]); break;
    }
  }
  return split;
}

}  // namespace

CorpusSplit split_karpathy(const std::vector<CaptionRecord>& records, std::size_t n_val,
                           std::size_t n_test, std::uint64_t seed) {
  if (n_val + n_test >= records.size()) {
    throw ValidationError("split needs more than n_val + n_test = " +
                          std::to_string(n_val + n_test) + " records, got " +
                          std::to_string(records.size()));
  }
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  deterministic_shuffle(order.begin(), order.end(), rng);
  std::vector<int> bucket(records.size(), 0);
  for (std::size_t k = 0; k < n_val; ++k) bucket[order[k]] = 1;
  for (std::size_t k = n_val; k < n_val + n_test; ++k) bucket[order[k]] = 2;
  return materialize(records, bucket);
}

CorpusSplit split_from_ids(const std::vector<CaptionRecord>& records,
                           const std::vector<std::int64_t>& train_ids,
                           const std::vector<std::int64_t>& val_ids,
                           const std::vector<std::int64_t>& test_ids) {
  std::unordered_map<std::int64_t, int> assigned;
  auto assign = [&](const std::vector<std::int64_t>& ids, int b, const char* name) {
    for (auto id : ids) {
      if (!assigned.emplace(id, b).second) {
        throw ValidationError(std::string("split: image id ") + std::to_string(id) +
                              " appears more than once (in \"" + name + "\")");
      }
    }
  };
  assign(train_ids, 0, "train");
  assign(val_ids, 1, "val");
  assign(test_ids, 2, "test");
  std::vector<int> bucket(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto it = assigned.find(records[i].image_id);
    if (it == assigned.end()) {
      throw ValidationError("split: image id " + std::to_string(records[i].image_id) +
                            " is not assigned to any partition");
    }
    bucket[i] = it->second;
  }
  if (assigned.size() != records.size()) {
    throw ValidationError("split: " + std::to_string(assigned.size() - records.size()) +
                          " ids do not belong to the corpus");
  }
  return materialize(records, bucket);
}

CorpusSplit load_split_file(const std::vector<CaptionRecord>& records,
                            const std::filesystem::path& path) {
  const json doc = parse_json_or_throw(detail::read_file(path), path.string());
  auto ids = [&](const char* key) {
    const json& arr = require_field(doc, key, path.string());
    if (!arr.is_array()) throw ValidationError(path.string() + ": \"" + key + "\" must be an array");
    std::vector<std::int64_t> out;
    for (const auto& v : arr) {
      if (!v.is_number_integer()) {
        throw ValidationError(path.string() + ": \"" + key + "\" must hold integers");
      }
      out.push_back(v.get<std::int64_t>());
    }
    return out;
  };
  return split_from_ids(records, ids("train"), ids("val"), ids("test"));
}

}  // namespace gritcap
