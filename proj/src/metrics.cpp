#include "gritcap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "gritcap/error.hpp"

namespace gritcap {

namespace {

using Ids = std::vector<std::int32_t>;

class Interner {
 public:
  std::int32_t intern(const std::string& token) {
    auto [it, inserted] = ids_.try_emplace(token, static_cast<std::int32_t>(ids_.size()));
    return it->second;
  }

  Ids intern_all(const Sentence& sentence) {
    Ids out;
    out.reserve(sentence.size());
    for (const auto& tok : sentence) out.push_back(intern(tok));
    return out;
  }

 private:
  std::unordered_map<std::string, std::int32_t> ids_;
};

struct Gram {
  std::array<std::int32_t, kMaxNgramOrder> ids{};

  friend bool operator==(const Gram&, const Gram&) = default;
  friend auto operator<=>(const Gram&, const Gram&) = default;
};

struct GramHash {
  std::size_t operator()(const Gram& g) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto id : g.ids) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(id));
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// Sorted (gram, count) list; small sentences make this cheaper than a map.
using FlatCounts = std::vector<std::pair<Gram, std::size_t>>;

FlatCounts count_grams(const Ids& s, int n) {
  FlatCounts out;
  if (s.size() < static_cast<std::size_t>(n)) return out;
  std::vector<Gram> grams;
  grams.reserve(s.size() - n + 1);
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    Gram g;
    g.ids.fill(-1);
    for (int k = 0; k < n; ++k) g.ids[k] = s[i + k];
    grams.push_back(g);
  }
  std::sort(grams.begin(), grams.end());
  for (const auto& g : grams) {
    if (!out.empty() && out.back().first == g) {
      ++out.back().second;
    } else {
      out.emplace_back(g, 1);
    }
  }
  return out;
}

std::size_t lookup(const FlatCounts& counts, const Gram& g) {
  auto it = std::lower_bound(counts.begin(), counts.end(), g,
                             [](const auto& e, const Gram& key) { return e.first < key; });
  return (it != counts.end() && it->first == g) ? it->second : 0;
}

void check_order(int n) {
  if (n < 1 || n > kMaxNgramOrder) {
    throw ValidationError("n-gram order must be in 1.." + std::to_string(kMaxNgramOrder) +
                          ", got " + std::to_string(n));
  }
}

}  // namespace

std::size_t NGramCounts::total() const {
  std::size_t t = 0;
  for (const auto& [gram, c] : counts) t += c;
  return t;
}

NGramCounts ngram_counts(const Sentence& tokens, int n) {
  check_order(n);
  NGramCounts out;
  out.n = n;
  const auto un = static_cast<std::size_t>(n);
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    ++out.counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + un)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// BLEU

BleuResult bleu_corpus(std::span<const EvalPair> pairs, const BleuConfig& config) {
  check_order(config.max_n);
  if (pairs.empty()) throw ValidationError("bleu_corpus: no pairs");
  BleuResult result;
  Interner interner;
  for (const auto& pair : pairs) {
    if (pair.references.empty()) throw ValidationError("bleu_corpus: pair without references");
    const Ids cand = interner.intern_all(pair.candidate);
    std::vector<Ids> refs;
    refs.reserve(pair.references.size());
    for (const auto& r : pair.references) refs.push_back(interner.intern_all(r));

    // Closest reference length, ties to the shorter one.
    std::size_t best_len = refs.front().size();
    for (const auto& r : refs) {
      const auto diff = [&](std::size_t len) {
        return len > cand.size() ? len - cand.size() : cand.size() - len;
      };
      if (diff(r.size()) < diff(best_len) ||
          (diff(r.size()) == diff(best_len) && r.size() < best_len)) {
        best_len = r.size();
      }
    }
    result.candidate_length += cand.size();
    result.reference_length += best_len;

    for (int n = 1; n <= config.max_n; ++n) {
      const FlatCounts cand_counts = count_grams(cand, n);
      std::vector<FlatCounts> ref_counts;
      ref_counts.reserve(refs.size());
      for (const auto& r : refs) ref_counts.push_back(count_grams(r, n));
      for (const auto& [gram, count] : cand_counts) {
        std::size_t max_ref = 0;
        for (const auto& rc : ref_counts) max_ref = std::max(max_ref, lookup(rc, gram));
        result.matches[n - 1] += std::min(count, max_ref);
        result.totals[n - 1] += count;
      }
    }
  }

  if (result.candidate_length == 0) return result;  // every candidate empty
  const double c = static_cast<double>(result.candidate_length);
  const double r = static_cast<double>(result.reference_length);
  result.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / c);

  double log_sum = 0.0;
  bool zero = false;
  for (int n = 1; n <= config.max_n; ++n) {
    const std::size_t total = result.totals[n - 1];
    const std::size_t match = result.matches[n - 1];
    result.precisions[n - 1] =
        total == 0 ? 0.0 : static_cast<double>(match) / static_cast<double>(total);
    if (match == 0) zero = true;
    if (!zero) {
      log_sum += std::log(result.precisions[n - 1]);
      result.scores[n - 1] = result.brevity_penalty * std::exp(log_sum / n);
    }
  }
  return result;
}

std::string_view interpret_bleu(double score) {
  if (!(score >= 0.0 && score <= 1.0)) {
    throw ValidationError("BLEU score must be in [0, 1], got " + std::to_string(score));
  }
  const double pct = score * 100.0;
  if (pct < 10.0) return "Practically useless";
  if (pct < 20.0) return "Difficult to understand the meaning";
  if (pct < 30.0) return "The meaning is clear, but there are serious grammatical errors";
  if (pct < 40.0) return "Can be understood as good translations";
  if (pct < 50.0) return "High-quality translations";
  if (pct < 60.0) return "Very high quality, adequate and fluent translations";
  return "In general, higher than human quality";
}

// ---------------------------------------------------------------------------
// Stemming

std::string identity_stem(std::string_view token) { return std::string(token); }

std::string portuguese_stem(std::string_view token) {
  // Longest suffixes first; a suffix is only stripped when at least three
  // bytes of stem remain.
  static const std::vector<std::string_view> kSuffixes = [] {
    std::vector<std::string_view> s = {
        "amente", "mente", "ações", "ação", "ções", "ção", "ismos", "ismo",
        "istas", "ista", "zinhos", "zinhas", "zinho", "zinha", "inhos", "inhas",
        "inho", "inha", "ando", "endo", "indo", "ados", "adas", "idos", "idas",
        "aram", "eram", "iram", "ado", "ada", "ido", "ida", "ões", "ães", "ais",
        "eis", "ar", "er", "ir", "os", "as", "es", "s", "o", "a", "e"};
    std::stable_sort(s.begin(), s.end(),
                     [](std::string_view a, std::string_view b) { return a.size() > b.size(); });
    return s;
  }();
  for (std::string_view suffix : kSuffixes) {
    if (token.size() >= suffix.size() + 3 && token.ends_with(suffix)) {
      return std::string(token.substr(0, token.size() - suffix.size()));
    }
  }
  return std::string(token);
}

// ---------------------------------------------------------------------------
// METEOR

namespace {

constexpr std::size_t kMaxStages = 8;
constexpr std::size_t kMemoBudget = 2'000'000;

struct AlignScore {
  std::array<std::int32_t, kMaxStages> per_stage{};
  std::int32_t chunks = 0;

  // True when `this` is a strictly better alignment objective than `other`.
  bool better_than(const AlignScore& other) const {
    for (std::size_t s = 0; s < kMaxStages; ++s) {
      if (per_stage[s] != other.per_stage[s]) return per_stage[s] > other.per_stage[s];
    }
    return chunks < other.chunks;
  }
};

struct Candidate {
  std::size_t ref_pos;
  std::size_t stage;
};

struct AlignKey {
  std::uint64_t mask;
  std::uint32_t pos;
  std::int32_t prev;
  friend bool operator==(const AlignKey&, const AlignKey&) = default;
};

struct AlignEntry {
  AlignScore score;
  std::int64_t choice;  // reference position, or -1 for unaligned
};

// Open-addressing map from search state to its solution. Reused across calls;
// a generation stamp marks live slots so reset() is O(1).
class MemoTable {
 public:
  void reset() {
    size_ = 0;
    if (slots_.empty()) slots_.resize(1024);
    if (++stamp_ == 0) {
      for (auto& slot : slots_) slot.stamp = 0;
      stamp_ = 1;
    }
  }

  std::size_t size() const noexcept { return size_; }

  const AlignEntry* find(const AlignKey& k) const {
    const std::size_t mask = slots_.size() - 1;
    for (std::size_t i = hash(k) & mask;; i = (i + 1) & mask) {
      const Slot& slot = slots_[i];
      if (slot.stamp != stamp_) return nullptr;
      if (slot.key == k) return &slot.entry;
    }
  }

  void insert(const AlignKey& k, const AlignEntry& e) {
    if (2 * (size_ + 1) > slots_.size()) grow();
    place(k, e);
    ++size_;
  }

 private:
  struct Slot {
    AlignKey key{};
    AlignEntry entry{};
    std::uint32_t stamp = 0;
  };

  static std::size_t hash(const AlignKey& k) noexcept {
    std::uint64_t h = k.mask * 0x9e3779b97f4a7c15ULL;
    h ^= (static_cast<std::uint64_t>(k.pos) << 32) ^ static_cast<std::uint32_t>(k.prev);
    h *= 0xbf58476d1ce4e5b9ULL;
    return static_cast<std::size_t>(h ^ (h >> 31));
  }

  void place(const AlignKey& k, const AlignEntry& e) {
    const std::size_t mask = slots_.size() - 1;
    std::size_t i = hash(k) & mask;
    while (slots_[i].stamp == stamp_) i = (i + 1) & mask;
    slots_[i] = Slot{k, e, stamp_};
  }

  void grow() {
    std::vector<Slot> old = std::move(slots_);
    const std::uint32_t live = stamp_;
    slots_.assign(old.size() * 2, Slot{});
    stamp_ = 1;
    for (const auto& slot : old) {
      if (slot.stamp == live) place(slot.key, slot.entry);
    }
  }

  std::vector<Slot> slots_;
  std::uint32_t stamp_ = 0;
  std::size_t size_ = 0;
};

class Aligner {
 public:
  Aligner(std::vector<std::vector<Candidate>> compat, std::size_t ref_len, MemoTable& memo)
      : compat_(std::move(compat)), ref_len_(ref_len), memo_(memo) {
    memo_.reset();
  }

  // Exact optimum via memoized search over (position, used mask, previous
  // reference position). Returns false when the state budget is exhausted.
  bool solve_exact(std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
    if (ref_len_ > 64) return false;
    try {
      solve(0, 0, -1);
    } catch (const BudgetExceeded&) {
      return false;
    }
    std::uint64_t mask = 0;
    std::int64_t prev = -1;
    for (std::size_t i = 0; i < compat_.size(); ++i) {
      const AlignEntry& e = *memo_.find(key(i, mask, prev));
      if (e.choice >= 0) {
        pairs.emplace_back(i, static_cast<std::size_t>(e.choice));
        mask |= std::uint64_t{1} << e.choice;
      }
      prev = e.choice;
    }
    return true;
  }

  // Stage-by-stage left-to-right alignment, preferring to extend the current
  // chunk. Used only when the exact search is too large.
  void solve_greedy(std::vector<std::pair<std::size_t, std::size_t>>& pairs) const {
    std::vector<std::int64_t> cand_to_ref(compat_.size(), -1);
    std::vector<bool> used(ref_len_, false);
    std::size_t max_stage = 0;
    for (const auto& list : compat_) {
      for (const auto& c : list) max_stage = std::max(max_stage, c.stage);
    }
    for (std::size_t stage = 0; stage <= max_stage; ++stage) {
      for (std::size_t i = 0; i < compat_.size(); ++i) {
        if (cand_to_ref[i] >= 0) continue;
        const std::int64_t want = (i > 0 && cand_to_ref[i - 1] >= 0) ? cand_to_ref[i - 1] + 1 : -1;
        std::int64_t pick = -1;
        for (const auto& c : compat_[i]) {
          if (c.stage != stage || used[c.ref_pos]) continue;
          if (static_cast<std::int64_t>(c.ref_pos) == want) {
            pick = want;
            break;
          }
          if (pick < 0) pick = static_cast<std::int64_t>(c.ref_pos);
        }
        if (pick >= 0) {
          cand_to_ref[i] = pick;
          used[static_cast<std::size_t>(pick)] = true;
        }
      }
    }
    for (std::size_t i = 0; i < cand_to_ref.size(); ++i) {
      if (cand_to_ref[i] >= 0) pairs.emplace_back(i, static_cast<std::size_t>(cand_to_ref[i]));
    }
  }

 private:
  struct BudgetExceeded {};

  static AlignKey key(std::size_t pos, std::uint64_t mask, std::int64_t prev) {
    return AlignKey{mask, static_cast<std::uint32_t>(pos), static_cast<std::int32_t>(prev)};
  }

  AlignScore solve(std::size_t pos, std::uint64_t mask, std::int64_t prev) {
    if (pos == compat_.size()) return {};
    const AlignKey k = key(pos, mask, prev);
    if (const AlignEntry* hit = memo_.find(k)) return hit->score;
    if (memo_.size() >= kMemoBudget) throw BudgetExceeded{};

    AlignEntry best{solve(pos + 1, mask, -1), -1};
    for (const auto& c : compat_[pos]) {
      const std::uint64_t bit = std::uint64_t{1} << c.ref_pos;
      if (mask & bit) continue;
      const auto j = static_cast<std::int64_t>(c.ref_pos);
      AlignScore s = solve(pos + 1, mask | bit, j);
      ++s.per_stage[c.stage];
      if (!(prev >= 0 && j == prev + 1)) ++s.chunks;
      if (s.better_than(best.score)) best = AlignEntry{s, j};
    }
    memo_.insert(k, best);
    return best.score;
  }

  std::vector<std::vector<Candidate>> compat_;
  std::size_t ref_len_;
  MemoTable& memo_;
};

std::size_t count_chunks(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::size_t chunks = 0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    if (k == 0 || pairs[k].first != pairs[k - 1].first + 1 ||
        pairs[k].second != pairs[k - 1].second + 1) {
      ++chunks;
    }
  }
  return chunks;
}

}  // namespace

MeteorAlignment meteor_align(const Sentence& candidate, const Sentence& reference,
                             const MeteorConfig& config) {
  if (config.stages.empty()) throw ValidationError("METEOR needs at least one matching stage");
  if (config.stages.size() > kMaxStages) {
    throw ValidationError("METEOR supports at most " + std::to_string(kMaxStages) + " stages");
  }
  MeteorAlignment out;
  if (candidate.empty() || reference.empty()) return out;

  const std::size_t n_stages = config.stages.size();
  std::vector<std::vector<std::string>> cand_keys(n_stages), ref_keys(n_stages);
  for (std::size_t s = 0; s < n_stages; ++s) {
    for (const auto& t : candidate) cand_keys[s].push_back(config.stages[s](t));
    for (const auto& t : reference) ref_keys[s].push_back(config.stages[s](t));
  }
  std::vector<std::vector<Candidate>> compat(candidate.size());
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      for (std::size_t s = 0; s < n_stages; ++s) {
        if (cand_keys[s][i] == ref_keys[s][j]) {
          compat[i].push_back({j, s});
          break;
        }
      }
    }
  }

  thread_local MemoTable memo;
  Aligner aligner(std::move(compat), reference.size(), memo);
  if (!aligner.solve_exact(out.pairs)) {
    out.pairs.clear();
    aligner.solve_greedy(out.pairs);
  }
  out.matches = out.pairs.size();
  out.chunks = count_chunks(out.pairs);
  return out;
}

double meteor_sentence(const Sentence& candidate, const Sentence& reference,
                       const MeteorConfig& config) {
  const MeteorAlignment a = meteor_align(candidate, reference, config);
  if (a.matches == 0) return 0.0;
  const double m = static_cast<double>(a.matches);
  const double precision = m / static_cast<double>(candidate.size());
  const double recall = m / static_cast<double>(reference.size());
  const double w = config.recall_weight;
  const double fmean = (1.0 + w) * precision * recall / (recall + w * precision);
  const double penalty =
      config.penalty_gamma * std::pow(static_cast<double>(a.chunks) / m, config.penalty_exponent);
  return fmean * (1.0 - penalty);
}

double meteor_pair(const EvalPair& pair, const MeteorConfig& config) {
  if (pair.references.empty()) throw ValidationError("meteor_pair: no references");
  double best = 0.0;
  for (const auto& ref : pair.references) {
    best = std::max(best, meteor_sentence(pair.candidate, ref, config));
  }
  return best;
}

// ---------------------------------------------------------------------------
// ROUGE-L

std::size_t lcs_length(const Sentence& a, const Sentence& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l_sentence(const Sentence& candidate, const Sentence& reference,
                        const RougeConfig& config) {
  const std::size_t lcs = lcs_length(candidate, reference);
  if (lcs == 0) return 0.0;
  const double l = static_cast<double>(lcs);
  const double recall = l / static_cast<double>(reference.size());
  const double precision = l / static_cast<double>(candidate.size());
  const double b2 = config.beta * config.beta;
  return (1.0 + b2) * recall * precision / (recall + b2 * precision);
}

double rouge_l_pair(const EvalPair& pair, const RougeConfig& config) {
  if (pair.references.empty()) throw ValidationError("rouge_l_pair: no references");
  double best = 0.0;
  for (const auto& ref : pair.references) {
    best = std::max(best, rouge_l_sentence(pair.candidate, ref, config));
  }
  return best;
}

// ---------------------------------------------------------------------------
// CIDEr

namespace {

using WeightedGrams = std::vector<std::pair<Gram, double>>;

double norm(const WeightedGrams& v) {
  double s = 0.0;
  for (const auto& [g, w] : v) s += w * w;
  return std::sqrt(s);
}

double cosine(const WeightedGrams& a, double norm_a, const WeightedGrams& b, double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  double dot = 0.0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  return dot / (norm_a * norm_b);
}

}  // namespace

std::vector<double> cider_pair_scores(std::span<const EvalPair> pairs, const CiderConfig& config) {
  check_order(config.max_n);
  if (pairs.empty()) throw ValidationError("cider: empty corpus");
  Interner interner;
  std::vector<Ids> cands;
  std::vector<std::vector<Ids>> refs;
  for (const auto& pair : pairs) {
    if (pair.references.empty()) throw ValidationError("cider: pair without references");
    cands.push_back(interner.intern_all(pair.candidate));
    std::vector<Ids> r;
    for (const auto& ref : pair.references) r.push_back(interner.intern_all(ref));
    refs.push_back(std::move(r));
  }

  const double n_images = static_cast<double>(pairs.size());
  std::vector<double> scores(pairs.size(), 0.0);
  for (int n = 1; n <= config.max_n; ++n) {
    // Phase one: document frequency over per-image reference sets.
    std::vector<FlatCounts> cand_counts(pairs.size());
    std::vector<std::vector<FlatCounts>> ref_counts(pairs.size());
    std::unordered_map<Gram, std::size_t, GramHash> df;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      cand_counts[p] = count_grams(cands[p], n);
      std::vector<Gram> seen;
      for (const auto& r : refs[p]) {
        ref_counts[p].push_back(count_grams(r, n));
        for (const auto& [g, c] : ref_counts[p].back()) seen.push_back(g);
      }
      std::sort(seen.begin(), seen.end());
      seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
      for (const auto& g : seen) ++df[g];
    }
    auto weigh = [&](const FlatCounts& counts) {
      WeightedGrams v;
      v.reserve(counts.size());
      for (const auto& [g, tf] : counts) {
        auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : static_cast<double>(std::max<std::size_t>(1, it->second));
        v.emplace_back(g, static_cast<double>(tf) * std::log(n_images / d));
      }
      return v;
    };
    // Phase two: per-pair consensus.
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const WeightedGrams cv = weigh(cand_counts[p]);
      const double cn = norm(cv);
      double sum = 0.0;
      for (const auto& rc : ref_counts[p]) {
        const WeightedGrams rv = weigh(rc);
        sum += cosine(cv, cn, rv, norm(rv));
      }
      scores[p] += sum / static_cast<double>(ref_counts[p].size());
    }
  }
  for (auto& s : scores) s = config.scale * s / static_cast<double>(config.max_n);
  return scores;
}

double cider_corpus(std::span<const EvalPair> pairs, const CiderConfig& config) {
  const std::vector<double> scores = cider_pair_scores(pairs, config);
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Report

MetricReport evaluate(std::span<const EvalPair> pairs, const MetricConfig& config) {
  if (pairs.empty()) throw ValidationError("evaluate: no pairs");
  MetricReport report;
  report.n_pairs = pairs.size();
  report.bleu = bleu_corpus(pairs, config.bleu).scores;
  double meteor = 0.0;
  double rouge = 0.0;
  for (const auto& pair : pairs) {
    meteor += meteor_pair(pair, config.meteor);
    rouge += rouge_l_pair(pair, config.rouge);
  }
  const double n = static_cast<double>(pairs.size());
  report.meteor = meteor / n;
  report.rouge_l = rouge / n;
  report.cider = cider_corpus(pairs, config.cider);
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v);
  return buf;
}

nlohmann::json parse_object(std::string_view text, const char* what) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string(what) + ": malformed JSON at byte " + std::to_string(e.byte),
                     e.byte);
  }
  if (!doc.is_object()) throw ValidationError(std::string(what) + ": expected a JSON object");
  return doc;
}

double number_field(const nlohmann::json& doc, const char* key, const char* what) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_number()) {
    throw ValidationError(std::string(what) + ": missing numeric field \"" + key + "\"");
  }
  return it->get<double>();
}

}  // namespace

std::string report_to_json(const MetricReport& report) {
  std::string out = "{\n";
  for (int k = 0; k < kMaxNgramOrder; ++k) {
    out += "  \"bleu_" + std::to_string(k + 1) + "\": " + fixed(report.bleu[k]) + ",\n";
  }
  out += "  \"meteor\": " + fixed(report.meteor) + ",\n";
  out += "  \"rouge_l\": " + fixed(report.rouge_l) + ",\n";
  out += "  \"cider\": " + fixed(report.cider) + ",\n";
  out += "  \"n_pairs\": " + std::to_string(report.n_pairs) + ",\n";
  out += "  \"bleu_4_interpretation\": \"" + std::string(interpret_bleu(report.bleu[3])) + "\"\n";
  out += "}\n";
  return out;
}

MetricReport report_from_json(std::string_view text) {
  const auto doc = parse_object(text, "metric report");
  MetricReport r;
  for (int k = 0; k < kMaxNgramOrder; ++k) {
    const std::string key = "bleu_" + std::to_string(k + 1);
    r.bleu[k] = number_field(doc, key.c_str(), "metric report");
  }
  r.meteor = number_field(doc, "meteor", "metric report");
  r.rouge_l = number_field(doc, "rouge_l", "metric report");
  r.cider = number_field(doc, "cider", "metric report");
  auto it = doc.find("n_pairs");
  if (it == doc.end() || !it->is_number_unsigned()) {
    throw ValidationError("metric report: missing integer field \"n_pairs\"");
  }
  r.n_pairs = it->get<std::size_t>();
  return r;
}

MetricSummary summarize(const MetricReport& report) {
  return MetricSummary{report.bleu[3], report.meteor, report.rouge_l, report.cider};
}

MetricSummary summary_from_json(std::string_view text) {
  const auto doc = parse_object(text, "metric summary");
  if (doc.contains("bleu_4")) return summarize(report_from_json(text));
  return MetricSummary{number_field(doc, "bleu", "metric summary"),
                       number_field(doc, "meteor", "metric summary"),
                       number_field(doc, "rouge", "metric summary"),
                       number_field(doc, "cider", "metric summary")};
}

std::string summary_to_json(const MetricSummary& s) {
  return "{\n  \"bleu\": " + fixed(s.bleu) + ",\n  \"meteor\": " + fixed(s.meteor) +
         ",\n  \"rouge\": " + fixed(s.rouge) + ",\n  \"cider\": " + fixed(s.cider) + "\n}\n";
}

std::string render_table(const std::vector<std::pair<std::string, MetricSummary>>& columns) {
  auto three = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::string out = "| Metrics |";
  std::string rule = "|---|";
  for (const auto& [label, s] : columns) {
    out += " " + label + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  const std::pair<const char*, double MetricSummary::*> rows[] = {
      {"BLEU", &MetricSummary::bleu},
      {"METEOR", &MetricSummary::meteor},
      {"ROUGE", &MetricSummary::rouge},
      {"CIDEr", &MetricSummary::cider},
  };
  for (const auto& [name, field] : rows) {
    out += std::string("| ") + name + " |";
    for (const auto& [label, s] : columns) out += " " + three(s.*field) + " |";
    out += "\n";
  }
  out += "| BLEU band |";
  for (const auto& [label, s] : columns) {
    const double b = std::clamp(s.bleu, 0.0, 1.0);
    out += " " + std::string(interpret_bleu(b)) + " |";
  }
  out += "\n";
  return out;
}

}  // namespace gritcap
