#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gritcap {

using Sentence = std::vector<std::string>;

/// One candidate caption scored against its human references.
struct EvalPair {
  Sentence candidate;
  std::vector<Sentence> references;
};

inline constexpr int kMaxNgramOrder = 4;

struct NGramCounts {
  int n = 1;
  std::map<std::vector<std::string>, std::size_t> counts;

  std::size_t total() const;
};

// Sliding-window counts of contiguous n-grams, 1 <= n <= 4.
NGramCounts ngram_counts(const Sentence& tokens, int n);

// ---------------------------------------------------------------------------
// BLEU

struct BleuConfig {
  int max_n = kMaxNgramOrder;
};

struct BleuResult {
  // scores[k-1] is BLEU@k for k = 1..max_n; unused orders stay 0.
  std::array<double, kMaxNgramOrder> scores{};
  std::array<double, kMaxNgramOrder> precisions{};
  std::array<std::size_t, kMaxNgramOrder> matches{};
  std::array<std::size_t, kMaxNgramOrder> totals{};
  double brevity_penalty = 0.0;
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;
};

/// Corpus-level BLEU with uniform weights and no smoothing.
///
/// Clipped n-gram matches and candidate n-gram totals are summed over the whole
/// corpus before the precision ratio is taken. The brevity penalty uses, per
/// pair, the reference length closest to the candidate length (ties go to the
/// shorter one). A zero precision at order n zeroes BLEU@k for every k >= n.
BleuResult bleu_corpus(std::span<const EvalPair> pairs, const BleuConfig& config = {});

// Quality band of a BLEU fraction (0.4 falls in the higher band); throws
// ValidationError outside [0, 1].
std::string_view interpret_bleu(double score);

// ---------------------------------------------------------------------------
// METEOR

// Maps a token to the key compared at one matching stage.
using MatchKey = std::function<std::string(std::string_view)>;

std::string identity_stem(std::string_view token);
// Light suffix-stripping stemmer for Portuguese (plurals, diminutives,
// common verb and adverb endings).
std::string portuguese_stem(std::string_view token);

struct MeteorConfig {
  // Ordered matching stages; a token pair matches at the first stage whose keys
  // agree. Default: exact surface, then Portuguese stem.
  std::vector<MatchKey> stages{identity_stem, portuguese_stem};
  double recall_weight = 9.0;
  double penalty_gamma = 0.5;
  double penalty_exponent = 3.0;
};

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
  // (candidate position, reference position), sorted by candidate position.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
};

/// Unigram alignment between two sentences: maximizes the number of stage-1
/// matches, then stage-1+2 matches, and so on; among those alignments it picks
/// one with the fewest chunks (maximal runs contiguous in both sentences).
MeteorAlignment meteor_align(const Sentence& candidate, const Sentence& reference,
                             const MeteorConfig& config = {});

// Score against one reference; 0 when nothing aligns.
double meteor_sentence(const Sentence& candidate, const Sentence& reference,
                       const MeteorConfig& config = {});
// Max over references.
double meteor_pair(const EvalPair& pair, const MeteorConfig& config = {});

// ---------------------------------------------------------------------------
// ROUGE-L

struct RougeConfig {
  double beta = 1.2;
};

std::size_t lcs_length(const Sentence& a, const Sentence& b);
double rouge_l_sentence(const Sentence& candidate, const Sentence& reference,
                        const RougeConfig& config = {});
double rouge_l_pair(const EvalPair& pair, const RougeConfig& config = {});

// ---------------------------------------------------------------------------
// CIDEr

struct CiderConfig {
  int max_n = kMaxNgramOrder;
  double scale = 10.0;
};

/// Consensus score: per order, TF-IDF n-gram vectors with document frequency
/// counted over each pair's reference set, mean cosine against the references,
/// averaged over pairs and orders, times `scale`. Throws on an empty corpus.
double cider_corpus(std::span<const EvalPair> pairs, const CiderConfig& config = {});

// Per-pair scores, before averaging over pairs.
std::vector<double> cider_pair_scores(std::span<const EvalPair> pairs,
                                      const CiderConfig& config = {});

// ---------------------------------------------------------------------------
// Aggregate report

struct MetricConfig {
  BleuConfig bleu;
  MeteorConfig meteor;
  RougeConfig rouge;
  CiderConfig cider;
};

struct MetricReport {
  std::array<double, kMaxNgramOrder> bleu{};  // BLEU@1..4
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  std::size_t n_pairs = 0;
};

MetricReport evaluate(std::span<const EvalPair> pairs, const MetricConfig& config = {});

// Flat JSON object with fixed 10-decimal numbers and a trailing newline; the
// text is a pure function of the report.
std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(std::string_view text);

/// The four headline rows of a results table. BLEU is BLEU@4 when derived from
/// a full report.
struct MetricSummary {
  double bleu = 0.0;
  double meteor = 0.0;
  double rouge = 0.0;
  double cider = 0.0;

  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

MetricSummary summarize(const MetricReport& report);
// Accepts either a full report or the short {"bleu","meteor","rouge","cider"} form.
MetricSummary summary_from_json(std::string_view text);
std::string summary_to_json(const MetricSummary& summary);

// Markdown table with one column per (label, summary) plus a BLEU band row.
std::string render_table(const std::vector<std::pair<std::string, MetricSummary>>& columns);

}  // namespace gritcap
