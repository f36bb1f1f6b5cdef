#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "gritcap/corpus_text.hpp"
#include "gritcap/error.hpp"
#include "gritcap/metrics.hpp"
#include "gritcap/rng.hpp"
#include "oracles/metric_oracles.hpp"

using namespace gritcap;

namespace {

Sentence words(std::initializer_list<const char*> list) { return Sentence(list.begin(), list.end()); }

std::vector<oracle::Stem> oracle_stages() {
  return {[](const std::string& s) { return identity_stem(s); },
          [](const std::string& s) { return portuguese_stem(s); }};
}

Sentence random_sentence(Rng& rng, std::size_t min_len, std::size_t max_len,
                         const std::vector<std::string>& alphabet) {
  const std::size_t len = min_len + uniform_index(rng, max_len - min_len + 1);
  Sentence s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[uniform_index(rng, alphabet.size())]);
  return s;
}

std::vector<EvalPair> random_corpus(std::uint64_t seed, std::size_t n_pairs) {
  const std::vector<std::string> alphabet = {"um", "carro", "carros", "rua", "na", "cão", "cães", "azul"};
  Rng rng(seed);
  std::vector<EvalPair> out;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    EvalPair p;
    p.candidate = random_sentence(rng, 1, 8, alphabet);
    const std::size_t n_refs = 1 + uniform_index(rng, 4);
    for (std::size_t r = 0; r < n_refs; ++r) p.references.push_back(random_sentence(rng, 1, 8, alphabet));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST(NGramCounts, Examples) {
  const auto uni = ngram_counts(words({"a", "b", "a"}), 1);
  EXPECT_EQ(uni.counts.size(), 2u);
  EXPECT_EQ(uni.counts.at(words({"a"})), 2u);
  EXPECT_EQ(uni.counts.at(words({"b"})), 1u);
  const auto bi = ngram_counts(words({"a", "b", "a"}), 2);
  EXPECT_EQ(bi.counts.size(), 2u);
  EXPECT_EQ(bi.counts.at(words({"a", "b"})), 1u);
  EXPECT_EQ(bi.counts.at(words({"b", "a"})), 1u);
  EXPECT_TRUE(ngram_counts(words({"a"}), 2).counts.empty());
}

TEST(NGramCounts, OrderOutOfRange) {
  EXPECT_THROW(ngram_counts(words({"a"}), 0), ValidationError);
  EXPECT_THROW(ngram_counts(words({"a"}), 5), ValidationError);
}

TEST(NGramCounts, TotalMatchesWindowCount) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const Sentence s = random_sentence(rng, 0, 12, {"x", "y", "z"});
    for (int n = 1; n <= 4; ++n) {
      const std::size_t expected = s.size() >= static_cast<std::size_t>(n) ? s.size() - n + 1 : 0;
      EXPECT_EQ(ngram_counts(s, n).total(), expected);
    }
  }
}

TEST(Bleu, PerfectMatchIsOne) {
  const std::vector<EvalPair> pairs = {
      {words({"um", "carro", "na", "rua", "azul"}), {words({"x"}), words({"um", "carro", "na", "rua", "azul"})}},
      {words({"dois", "cães", "correndo", "no", "parque"}), {words({"dois", "cães", "correndo", "no", "parque"})}},
  };
  const auto r = bleu_corpus(pairs);
  for (double s : r.scores) EXPECT_DOUBLE_EQ(s, 1.0);
}

TEST(Bleu, NoSharedUnigramIsZero) {
  const std::vector<EvalPair> pairs = {{words({"gato", "preto"}), {words({"um", "carro", "azul"})}}};
  const auto r = bleu_corpus(pairs);
  for (double s : r.scores) EXPECT_EQ(s, 0.0);
}

TEST(Bleu, AllCandidatesEmptyIsZero) {
  const std::vector<EvalPair> pairs = {{{}, {words({"um", "carro"})}}, {{}, {words({"rua"})}}};
  for (double s : bleu_corpus(pairs).scores) EXPECT_EQ(s, 0.0);
}

TEST(Bleu, EmptyCorpusThrows) {
  EXPECT_THROW(bleu_corpus(std::span<const EvalPair>{}), ValidationError);
}

TEST(Bleu, FigureCaptionMatchesOracle) {
  const std::vector<EvalPair> pairs = {
      {words({"um", "carro", "estacionado"}), {tokenize("um carro Estacionado em o lado")}}};
  const auto r = bleu_corpus(pairs);
  const auto o = oracle::bleu(pairs);
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(r.scores[k], o[k], 1e-12) << "BLEU@" << k + 1;
  // Every candidate n-gram up to order 3 occurs in the reference, so only the
  // brevity penalty exp(1 - 6/3) remains; a 3-token candidate has no 4-gram.
  EXPECT_NEAR(r.scores[0], std::exp(-1.0), 1e-12);
  EXPECT_NEAR(r.scores[2], std::exp(-1.0), 1e-12);
  EXPECT_EQ(r.scores[3], 0.0);
}

TEST(Bleu, ZeroPrecisionZeroesHigherOrders) {
  const std::vector<EvalPair> pairs = {{words({"a", "b", "c"}), {words({"c", "b", "a"})}}};
  const auto r = bleu_corpus(pairs);
  EXPECT_DOUBLE_EQ(r.scores[0], 1.0);
  EXPECT_EQ(r.scores[1], 0.0);
  EXPECT_EQ(r.scores[2], 0.0);
  EXPECT_EQ(r.scores[3], 0.0);
}

TEST(Bleu, ClosestReferenceLengthTiesGoShorter) {
  // Candidate length 4; references of length 3 and 5 are equally close.
  const std::vector<EvalPair> pairs = {
      {words({"a", "b", "c", "d"}), {words({"a", "b", "c", "d", "e"}), words({"a", "b", "c"})}}};
  const auto r = bleu_corpus(pairs);
  EXPECT_EQ(r.reference_length, 3u);
  EXPECT_DOUBLE_EQ(r.brevity_penalty, 1.0);
}

// The geometric mean over more orders is not monotone in general: p1 = 2/3
// while p2 = 1, so BLEU@2 exceeds BLEU@1.
TEST(Bleu, HigherOrderCanExceedLowerOrder) {
  const std::vector<EvalPair> pairs = {{words({"a", "b", "a"}), {words({"b", "a", "b"})}}};
  const auto r = bleu_corpus(pairs);
  EXPECT_NEAR(r.scores[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.scores[1], std::sqrt(2.0 / 3.0), 1e-12);
  EXPECT_GT(r.scores[1], r.scores[0]);
}

TEST(Bleu, MonotoneWhenPrecisionsDoNotIncrease) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto corpus = random_corpus(seed, 20);
    const auto r = bleu_corpus(corpus);
    bool non_increasing = true;
    for (int k = 1; k < 4; ++k) non_increasing = non_increasing && r.precisions[k] <= r.precisions[k - 1];
    if (!non_increasing) continue;
    for (int k = 1; k < 4; ++k) EXPECT_LE(r.scores[k], r.scores[k - 1] + 1e-15);
  }
}

TEST(InterpretBleu, TableRows) {
  EXPECT_EQ(interpret_bleu(0.758), "In general, higher than human quality");
  EXPECT_EQ(interpret_bleu(0.25), "The meaning is clear, but there are serious grammatical errors");
  EXPECT_EQ(interpret_bleu(0.05), "Practically useless");
  EXPECT_EQ(interpret_bleu(0.15), "Difficult to understand the meaning");
  EXPECT_EQ(interpret_bleu(0.35), "Can be understood as good translations");
  EXPECT_EQ(interpret_bleu(0.45), "High-quality translations");
  EXPECT_EQ(interpret_bleu(0.55), "Very high quality, adequate and fluent translations");
}

TEST(InterpretBleu, BoundariesBelongToHigherBand) {
  EXPECT_EQ(interpret_bleu(0.0), "Practically useless");
  EXPECT_EQ(interpret_bleu(0.40), "High-quality translations");
  EXPECT_EQ(interpret_bleu(0.60), "In general, higher than human quality");
  EXPECT_EQ(interpret_bleu(1.0), "In general, higher than human quality");
}

TEST(InterpretBleu, OutOfRangeThrows) {
  EXPECT_THROW(interpret_bleu(-0.01), ValidationError);
  EXPECT_THROW(interpret_bleu(1.01), ValidationError);
  EXPECT_THROW(interpret_bleu(std::nan("")), ValidationError);
}

TEST(InterpretBleu, TotalAndMonotoneInBand) {
  const std::vector<std::string_view> order = {
      "Practically useless",
      "Difficult to understand the meaning",
      "The meaning is clear, but there are serious grammatical errors",
      "Can be understood as good translations",
      "High-quality translations",
      "Very high quality, adequate and fluent translations",
      "In general, higher than human quality",
  };
  std::ptrdiff_t prev = 0;
  for (int i = 0; i <= 1000; ++i) {
    const auto band = interpret_bleu(i / 1000.0);
    const auto it = std::find(order.begin(), order.end(), band);
    ASSERT_NE(it, order.end());
    EXPECT_GE(it - order.begin(), prev);
    prev = it - order.begin();
  }
}

TEST(Meteor, IdenticalSixTokens) {
  const Sentence s = words({"um", "carro", "estacionado", "em", "o", "lado"});
  EXPECT_NEAR(meteor_sentence(s, s), 1.0 - 0.5 * std::pow(1.0 / 6.0, 3), 1e-12);
  EXPECT_NEAR(meteor_sentence(s, s), 0.99769, 1e-5);
}

TEST(Meteor, SwappedPairIsHalf) {
  EXPECT_NEAR(meteor_sentence(words({"b", "a"}), words({"a", "b"})), 0.5, 1e-12);
}

TEST(Meteor, NoOverlapOrEmptyIsZero) {
  EXPECT_EQ(meteor_sentence(words({"a", "b"}), words({"c", "d"})), 0.0);
  EXPECT_EQ(meteor_sentence({}, words({"c", "d"})), 0.0);
}

TEST(Meteor, StemStageMatchesInflections) {
  const auto a = meteor_align(words({"carros"}), words({"carro"}));
  EXPECT_EQ(a.matches, 1u);
  MeteorConfig exact_only;
  exact_only.stages = {identity_stem};
  EXPECT_EQ(meteor_align(words({"carros"}), words({"carro"}), exact_only).matches, 0u);
}

TEST(Meteor, ExactMatchesPreferredOverStemMatches) {
  // "carro" could pair with either reference token by stem, but only one of
  // them is an exact match.
  const auto a = meteor_align(words({"carro"}), words({"carros", "carro"}));
  ASSERT_EQ(a.pairs.size(), 1u);
  EXPECT_EQ(a.pairs[0].second, 1u);
}

TEST(Meteor, FewestChunksAmongMaximalAlignments) {
  // "a" can align to either position; choosing the first keeps one chunk.
  const auto a = meteor_align(words({"a", "b"}), words({"a", "b", "a"}));
  EXPECT_EQ(a.matches, 2u);
  EXPECT_EQ(a.chunks, 1u);
}

TEST(Meteor, PairTakesMaxOverReferences) {
  const EvalPair p{words({"a", "b"}), {words({"c"}), words({"a", "b"}), words({"b", "a"})}};
  EXPECT_NEAR(meteor_pair(p), meteor_sentence(p.candidate, p.references[1]), 1e-15);
}

TEST(Meteor, MatchesOracleOnRandomPairs) {
  const auto stages = oracle_stages();
  for (const auto& p : random_corpus(11, 300)) {
    EXPECT_NEAR(meteor_pair(p), oracle::meteor(p, stages), 1e-12);
  }
}

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l_sentence(words({"a", "b"}), words({"a", "b"})), 1.0);
  EXPECT_EQ(rouge_l_sentence(words({"a", "b"}), words({"c", "d"})), 0.0);
  EXPECT_EQ(lcs_length(words({"a", "b", "c", "d"}), words({"a", "c", "b", "d"})), 3u);
  EXPECT_NEAR(rouge_l_sentence(words({"a", "b", "c", "d"}), words({"a", "c", "b", "d"})), 0.75, 1e-12);
  EXPECT_EQ(rouge_l_sentence({}, words({"a"})), 0.0);
  EXPECT_EQ(rouge_l_sentence(words({"a"}), {}), 0.0);
}

TEST(RougeL, MatchesOracleOnRandomPairs) {
  for (const auto& p : random_corpus(12, 300)) EXPECT_NEAR(rouge_l_pair(p), oracle::rouge_l(p), 1e-12);
}

TEST(Cider, SingleImageIsZero) {
  const std::vector<EvalPair> pairs = {{words({"um", "carro"}), {words({"um", "carro"})}}};
  EXPECT_EQ(cider_corpus(pairs), 0.0);
}

TEST(Cider, NoSharedNgramIsZero) {
  const std::vector<EvalPair> pairs = {{words({"x", "y"}), {words({"um", "carro"})}},
                                       {words({"z"}), {words({"uma", "rua"})}}};
  EXPECT_EQ(cider_corpus(pairs), 0.0);
}

TEST(Cider, EmptyCorpusThrows) {
  EXPECT_THROW(cider_corpus(std::span<const EvalPair>{}), ValidationError);
}

TEST(Cider, TwoImageFixtureMatchesOracle) {
  const std::vector<EvalPair> pairs = {
      {tokenize("um carro azul na rua"),
       {tokenize("um carro azul estacionado na rua"), tokenize("carro azul parado na rua")}},
      {tokenize("um cachorro na grama"),
       {tokenize("um cachorro correndo na grama"), tokenize("cachorro marrom na grama verde")}},
  };
  const double c = cider_corpus(pairs);
  EXPECT_GT(c, 0.0);
  EXPECT_NEAR(c, oracle::cider(pairs), 1e-12);
  const auto per_pair = cider_pair_scores(pairs);
  ASSERT_EQ(per_pair.size(), 2u);
  EXPECT_NEAR((per_pair[0] + per_pair[1]) / 2.0, c, 1e-12);
}

TEST(Cider, MatchesOracleOnRandomCorpora) {
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const auto corpus = random_corpus(seed, 15);
    EXPECT_NEAR(cider_corpus(corpus), oracle::cider(corpus), 1e-9);
  }
}

TEST(Properties, RangesHold) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto report = evaluate(random_corpus(seed, 25));
    for (double b : report.bleu) {
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 1.0);
    }
    EXPECT_GE(report.meteor, 0.0);
    EXPECT_LE(report.meteor, 1.0);
    EXPECT_GE(report.rouge_l, 0.0);
    EXPECT_LE(report.rouge_l, 1.0);
    EXPECT_GE(report.cider, 0.0);
  }
}

// Floating-point summation order changes with the permutation, so equality is
// up to rounding.
TEST(Properties, PermutationInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto corpus = random_corpus(seed, 30);
    const auto before = evaluate(corpus);
    Rng rng(seed + 100);
    deterministic_shuffle(corpus.begin(), corpus.end(), rng);
    const auto after = evaluate(corpus);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(before.bleu[k], after.bleu[k], 1e-12);
    EXPECT_NEAR(before.meteor, after.meteor, 1e-12);
    EXPECT_NEAR(before.rouge_l, after.rouge_l, 1e-12);
    EXPECT_NEAR(before.cider, after.cider, 1e-12);
  }
}

TEST(Properties, DuplicationInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto corpus = random_corpus(seed, 20);
    auto doubled = corpus;
    doubled.insert(doubled.end(), corpus.begin(), corpus.end());
    const auto a = evaluate(corpus);
    const auto b = evaluate(doubled);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(a.bleu[k], b.bleu[k], 1e-12);
    EXPECT_NEAR(a.meteor, b.meteor, 1e-12);
    EXPECT_NEAR(a.rouge_l, b.rouge_l, 1e-12);
    EXPECT_EQ(b.n_pairs, 2 * a.n_pairs);
  }
}

TEST(Properties, IdenticalSingleReferenceIsMaximal) {
  Rng rng(5);
  std::vector<EvalPair> corpus;
  for (int i = 0; i < 10; ++i) {
    const Sentence s = random_sentence(rng, 4, 9, {"p", "q", "r", "s", "t", "u"});
    corpus.push_back({s, {s}});
  }
  const auto report = evaluate(corpus);
  EXPECT_DOUBLE_EQ(report.bleu[3], 1.0);
  EXPECT_DOUBLE_EQ(report.rouge_l, 1.0);
  for (const auto& p : corpus) {
    const double m = static_cast<double>(p.candidate.size());
    EXPECT_NEAR(meteor_pair(p), 1.0 - 0.5 / (m * m * m), 1e-12);
  }
  // Replacing any candidate with another sentence cannot raise its CIDEr.
  const auto base = cider_pair_scores(corpus);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto altered = corpus;
    altered[i].candidate = corpus[(i + 1) % corpus.size()].candidate;
    EXPECT_LE(cider_pair_scores(altered)[i], base[i] + 1e-12);
  }
}

TEST(Report, PerfectMatchReport) {
  const std::vector<EvalPair> pairs = {{words({"um", "carro", "azul", "na", "rua"}),
                                        {words({"um", "carro", "azul", "na", "rua"})}},
                                       {words({"um", "gato", "preto", "no", "sofá"}),
                                        {words({"um", "gato", "preto", "no", "sofá"})}}};
  const auto r = evaluate(pairs);
  EXPECT_DOUBLE_EQ(r.bleu[3], 1.0);
  EXPECT_DOUBLE_EQ(r.rouge_l, 1.0);
  EXPECT_EQ(r.n_pairs, 2u);
}

TEST(Report, JsonRoundTrip) {
  MetricReport r;
  r.bleu = {0.9, 0.85, 0.8, 0.758};
  r.meteor = 0.268;
  r.rouge_l = 0.557;
  r.cider = 1.100;
  r.n_pairs = 5000;
  const std::string text = report_to_json(r);
  for (const char* key : {"\"bleu_1\"", "\"bleu_2\"", "\"bleu_3\"", "\"bleu_4\"", "\"meteor\"", "\"rouge_l\"",
                          "\"cider\"", "\"n_pairs\""}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
  EXPECT_NE(text.find("0.7580000000"), std::string::npos);
  const auto back = report_from_json(text);
  EXPECT_EQ(back.bleu, r.bleu);
  EXPECT_EQ(back.meteor, r.meteor);
  EXPECT_EQ(back.rouge_l, r.rouge_l);
  EXPECT_EQ(back.cider, r.cider);
  EXPECT_EQ(back.n_pairs, r.n_pairs);
  EXPECT_EQ(report_to_json(back), text);
}

TEST(Report, SummaryFromShortForm) {
  const MetricSummary portuguese{0.758, 0.268, 0.557, 1.100};
  EXPECT_EQ(summary_from_json(R"({"bleu": 0.758, "meteor": 0.268, "rouge": 0.557, "cider": 1.100})"), portuguese);
  EXPECT_EQ(summary_from_json(summary_to_json(portuguese)), portuguese);
}

TEST(Report, SummaryUsesBleu4) {
  MetricReport r;
  r.bleu = {0.9, 0.8, 0.7, 0.6};
  r.meteor = 0.3;
  EXPECT_EQ(summarize(r).bleu, 0.6);
  EXPECT_EQ(summary_from_json(report_to_json(r)).bleu, 0.6);
}

TEST(Report, MalformedJsonThrows) {
  EXPECT_THROW(report_from_json("{\"bleu_1\": "), ParseError);
  EXPECT_THROW(report_from_json("{\"bleu_1\": 0.5}"), ValidationError);
  EXPECT_THROW(summary_from_json("[1, 2]"), ValidationError);
}

TEST(Report, TableWithEnglishBaseline) {
  const MetricSummary portuguese{0.758, 0.268, 0.557, 1.100};
  const MetricSummary english{0.842, 0.306, 0.607, 1.442};
  const std::string table = render_table({{"Portuguese", portuguese}, {"English", english}});
  EXPECT_NE(table.find("| Metrics | Portuguese | English |"), std::string::npos);
  EXPECT_NE(table.find("| BLEU | 0.758 | 0.842 |"), std::string::npos);
  EXPECT_NE(table.find("| METEOR | 0.268 | 0.306 |"), std::string::npos);
  EXPECT_NE(table.find("| ROUGE | 0.557 | 0.607 |"), std::string::npos);
  EXPECT_NE(table.find("| CIDEr | 1.100 | 1.442 |"), std::string::npos);
  EXPECT_NE(table.find("In general, higher than human quality"), std::string::npos);
}
