#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "gritcap/captioner.hpp"
#include "gritcap/checkpoint.hpp"
#include "gritcap/error.hpp"
#include "gritcap/rng.hpp"

using namespace gritcap;
namespace fs = std::filesystem;

namespace {

DecoderConfig small_config(std::size_t vocab = 11) {
  DecoderConfig c;
  c.d = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = vocab;
  c.max_len = 10;
  return c;
}

FeatureGeometry small_geometry(std::size_t d = 8) {
  FeatureGeometry g;
  g.d = d;
  g.n_regions = 5;
  g.image_height = 128;
  g.image_width = 192;
  return g;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.values().data(), b.values().data(), a.numel() * sizeof(double)) == 0;
}

// Adds uniform noise to every parameter so decoding is not dominated by the
// small initial logits.
void perturb(DecoderState& state, std::uint64_t seed, double amplitude) {
  Rng rng(seed);
  for (auto& p : state.parameters()) {
    for (auto& v : p.mutable_values()) v += uniform(rng, -amplitude, amplitude);
  }
}

TrainingExample example(std::int64_t image_id, std::vector<TokenId> ids, const FeatureGeometry& g) {
  return {synthesize_features(image_id, g, 7), std::move(ids)};
}

void zero(Tensor& t) {
  for (auto& v : t.mutable_values()) v = 0.0;
}

}  // namespace

TEST(Sinusoid, Examples) {
  const Tensor e0 = sinusoidal_embedding(0, 6);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(e0.values()[i], i % 2 == 0 ? 0.0 : 1.0);
  const Tensor e1 = sinusoidal_embedding(1, 4);
  EXPECT_NEAR(e1.values()[0], std::sin(1.0), 1e-15);
  EXPECT_NEAR(e1.values()[1], std::cos(1.0), 1e-15);
  EXPECT_NEAR(e1.values()[2], std::sin(0.01), 1e-15);
  EXPECT_NEAR(e1.values()[3], std::cos(0.01), 1e-15);
  for (std::size_t t = 0; t < 200; t += 7) {
    const Tensor e = sinusoidal_embedding(t, 32);
    for (double v : e.values()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_THROW(sinusoidal_embedding(0, 5), ValidationError);
}

TEST(InputEmbedding, ZeroTableGivesSinusoids) {
  DecoderState state(small_config(), 1);
  zero(state.embedding);
  const TokenId ids[] = {1, 4, 4};
  const Tensor x = input_embedding(ids, state);
  ASSERT_EQ(x.shape(), (Shape{3, 8}));
  for (std::size_t t = 0; t < 3; ++t) {
    const Tensor s = sinusoidal_embedding(t, 8);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(x.at(t, c), s.values()[c]);
  }
}

TEST(InputEmbedding, SameIdDiffersBySinusoid) {
  const DecoderState state(small_config(), 2);
  const TokenId ids[] = {5, 1, 5};
  const Tensor x = input_embedding(ids, state);
  const Tensor s0 = sinusoidal_embedding(0, 8);
  const Tensor s2 = sinusoidal_embedding(2, 8);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_NEAR(x.at(2, c) - x.at(0, c), s2.values()[c] - s0.values()[c], 1e-15);
  }
  const TokenId bad[] = {11};
  EXPECT_THROW(input_embedding(bad, state), ValidationError);
}

TEST(DecoderLayer, ShapeAndZeroProjectionsGiveIdentity) {
  DecoderState state(small_config(), 3);
  const auto features = synthesize_features(1, small_geometry(), 3);
  const TokenId ids[] = {1, 6, 7, 8};
  const Tensor x = input_embedding(ids, state);
  const Tensor mask = causal_mask(4);
  EXPECT_EQ(decoder_layer(x, features, state.layers[0], state.config(), mask).shape(), x.shape());

  LayerParams& p = state.layers[0];
  zero(p.self_attn.wo);
  zero(p.self_attn.bo);
  for (auto& c : p.cross_attn) {
    zero(c.wo);
    zero(c.bo);
  }
  zero(p.w2);
  zero(p.b2);
  const Tensor y = decoder_layer(x, features, p, state.config(), mask);
  EXPECT_TRUE(bit_equal(x, y));
}

TEST(DecoderLayer, MatchesHandTracedFeedForward) {
  // With every attention output projection zeroed the layer reduces to
  // x + W2·relu(W1·LN(x) + b1) + b2, which is computed here by hand.
  DecoderState state(small_config(), 4);
  perturb(state, 4, 0.3);
  const auto features = synthesize_features(2, small_geometry(), 4);
  LayerParams& p = state.layers[0];
  zero(p.self_attn.wo);
  zero(p.self_attn.bo);
  for (auto& c : p.cross_attn) {
    zero(c.wo);
    zero(c.bo);
  }
  const TokenId ids[] = {1, 5, 9};
  const Tensor x = input_embedding(ids, state);
  const Tensor y = decoder_layer(x, features, p, state.config(), causal_mask(3));
  const std::size_t d = 8, f = 16;
  for (std::size_t t = 0; t < 3; ++t) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += x.at(t, c);
    mu /= d;
    for (std::size_t c = 0; c < d; ++c) var += (x.at(t, c) - mu) * (x.at(t, c) - mu);
    var /= d;
    std::vector<double> n(d), h(f), out(d);
    for (std::size_t c = 0; c < d; ++c) {
      n[c] = (x.at(t, c) - mu) / std::sqrt(var + 1e-5) * p.ff_ln_gain.values()[c] + p.ff_ln_bias.values()[c];
    }
    for (std::size_t j = 0; j < f; ++j) {
      double s = p.b1.values()[j];
      for (std::size_t c = 0; c < d; ++c) s += n[c] * p.w1.at(c, j);
      h[j] = std::max(0.0, s);
    }
    for (std::size_t c = 0; c < d; ++c) {
      double s = p.b2.values()[c];
      for (std::size_t j = 0; j < f; ++j) s += h[j] * p.w2.at(j, c);
      EXPECT_NEAR(y.at(t, c), x.at(t, c) + s, 1e-12);
    }
  }
}

TEST(Forward, ShapeAndDistribution) {
  const DecoderState state(small_config(), 5);
  const auto features = synthesize_features(3, small_geometry(), 5);
  const TokenId ids[] = {1, 4, 5, 6, 2};
  const Tensor logits = forward(ids, features, state);
  ASSERT_EQ(logits.shape(), (Shape{5, 11}));
  const Tensor p = softmax(logits);
  for (std::size_t t = 0; t < 5; ++t) {
    double s = 0.0;
    for (std::size_t v = 0; v < 11; ++v) s += p.at(t, v);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, RejectsOverlongInputAndBadFeatures) {
  const DecoderState state(small_config(), 6);
  const auto features = synthesize_features(3, small_geometry(), 6);
  const std::vector<TokenId> long_ids(11, 4);
  EXPECT_THROW(forward(long_ids, features, state), ValidationError);
  const auto wide = synthesize_features(3, small_geometry(16), 6);
  const TokenId ids[] = {1};
  EXPECT_THROW(forward(ids, wide, state), ValidationError);
}

TEST(Forward, CausalIndependence) {
  DecoderState state(small_config(), 7);
  perturb(state, 7, 0.3);
  const auto features = synthesize_features(4, small_geometry(), 7);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<TokenId> ids(8);
    for (auto& id : ids) id = static_cast<TokenId>(uniform_index(rng, 11));
    const std::size_t t = uniform_index(rng, 8);
    auto altered = ids;
    for (std::size_t k = t + 1; k < 8; ++k) altered[k] = static_cast<TokenId>(uniform_index(rng, 11));
    const Tensor a = forward(ids, features, state);
    const Tensor b = forward(altered, features, state);
    for (std::size_t r = 0; r <= t; ++r) {
      for (std::size_t v = 0; v < 11; ++v) EXPECT_EQ(a.at(r, v), b.at(r, v));
    }
  }
}

TEST(Forward, BothFeatureKindsAreConsumed) {
  const DecoderState state(small_config(), 8);
  const auto features = synthesize_features(5, small_geometry(), 8);
  const TokenId ids[] = {1, 4, 5};
  const Tensor base = forward(ids, features, state);
  for (FeatureKind kind : {FeatureKind::region, FeatureKind::grid}) {
    FeatureBundle changed{features.image_id, features.region.detach(), features.grid.detach()};
    Tensor& t = kind == FeatureKind::region ? changed.region : changed.grid;
    zero(t);
    const Tensor other = forward(ids, changed, state);
    double diff = 0.0;
    for (std::size_t i = 0; i < base.numel(); ++i) diff = std::max(diff, std::abs(base.values()[i] - other.values()[i]));
    EXPECT_GT(diff, 0.0) << to_string(kind);
  }
}

TEST(Forward, EveryParameterGradientMatchesFiniteDifferences) {
  DecoderState state(small_config(), 9);
  perturb(state, 9, 0.2);
  const auto features = synthesize_features(6, small_geometry(), 9);
  const std::vector<TrainingExample> batch = {{features, {1, 4, 7, 5, 2, 0}}};
  for (auto& [name, p] : state.named_parameters()) {
    const auto r = finite_diff_check([&] { return batch_loss(batch, state); }, p);
    EXPECT_LT(r.max_rel_error, 1e-4) << name;
  }
}

TEST(Greedy, NoSpecialsAndTerminalEos) {
  Rng rng(10);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    DecoderState state(small_config(), seed);
    perturb(state, seed, 0.8);
    const auto features = synthesize_features(static_cast<std::int64_t>(seed), small_geometry(), seed);
    const auto ids = generate_greedy(features, state, 9);
    ASSERT_FALSE(ids.empty());
    EXPECT_EQ(ids[0], kBosId);
    EXPECT_LE(ids.size(), 10u);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      EXPECT_NE(ids[i], kPadId);
      EXPECT_NE(ids[i], kBosId);
      if (ids[i] == kEosId) EXPECT_EQ(i, ids.size() - 1);
    }
    EXPECT_EQ(generate_greedy(features, state, 9), ids);
  }
}

TEST(Greedy, TerminatesWithinLimit) {
  DecoderState state(small_config(), 11);
  // A large EOS penalty keeps the decoder from ever stopping on its own.
  for (auto& v : state.out_bias.mutable_values()) v = 0.0;
  state.out_bias.mutable_values()[kEosId] = -1e6;
  const auto features = synthesize_features(1, small_geometry(), 11);
  EXPECT_EQ(generate_greedy(features, state, 4).size(), 5u);
  EXPECT_EQ(generate_greedy(features, state, 100).size(), 11u);
}

TEST(Beam, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    DecoderState state(small_config(), seed);
    perturb(state, seed + 1000, 0.6);
    const auto features = synthesize_features(static_cast<std::int64_t>(seed), small_geometry(), seed);
    EXPECT_EQ(generate_beam(features, state, 1, 9).ids, generate_greedy(features, state, 9)) << seed;
  }
}

TEST(Beam, NormalizedScoreAtLeastGreedy) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    DecoderState state(small_config(), seed);
    perturb(state, seed + 2000, 0.6);
    const auto features = synthesize_features(static_cast<std::int64_t>(seed), small_geometry(), seed);
    const auto greedy = generate_greedy(features, state, 9);
    const double greedy_norm = sequence_log_prob(greedy, features, state) / static_cast<double>(greedy.size() - 1);
    const Hypothesis beam = generate_beam(features, state, 4, 9);
    EXPECT_NEAR(beam.log_prob, sequence_log_prob(beam.ids, features, state), 1e-9);
    EXPECT_GE(beam.normalized(), greedy_norm - 1e-12) << seed;
  }
}

TEST(Beam, ZeroWidthThrows) {
  const DecoderState state(small_config(), 12);
  const auto features = synthesize_features(1, small_geometry(), 12);
  EXPECT_THROW(generate_beam(features, state, 0, 5), ValidationError);
}

TEST(Training, InitialLossNearLogVocab) {
  const FeatureGeometry g = small_geometry(32);
  DecoderConfig config;
  const DecoderState state(config, 13);
  std::vector<TrainingExample> batch;
  Rng rng(13);
  for (int i = 0; i < 8; ++i) {
    std::vector<TokenId> ids{kBosId};
    for (int k = 0; k < 8; ++k) ids.push_back(static_cast<TokenId>(4 + uniform_index(rng, 60)));
    ids.push_back(kEosId);
    batch.push_back(example(i, ids, g));
  }
  const double loss = batch_loss(batch, state).item();
  EXPECT_NEAR(loss, std::log(64.0), 0.1 * std::log(64.0));
}

TEST(Training, LossDecreasesOnFixedBatch) {
  const FeatureGeometry g = small_geometry();
  DecoderState state(small_config(), 14);
  const std::vector<TrainingExample> batch = {example(1, {1, 4, 5, 6, 2}, g), example(2, {1, 7, 8, 2, 0}, g),
                                              example(3, {1, 9, 10, 4, 2}, g)};
  SgdOptimizer opt(0.3);
  const double first = train_step(batch, state, opt);
  double last = first;
  for (int i = 1; i < 50; ++i) last = train_step(batch, state, opt);
  EXPECT_LT(last, first);
}

TEST(Training, OverfitsOneSample) {
  const FeatureGeometry g = small_geometry(32);
  DecoderConfig config;
  config.vocab_size = 20;
  DecoderState state(config, 15);
  const std::vector<TokenId> caption = {1, 4, 9, 12, 5, 17, 2};
  const std::vector<TrainingExample> batch = {example(1, caption, g)};
  SgdOptimizer opt(0.3);
  for (int i = 0; i < 500; ++i) train_step(batch, state, opt);
  EXPECT_LT(batch_loss(batch, state).item(), 0.05);
  EXPECT_EQ(generate_greedy(batch[0].features, state, 10), caption);
}

TEST(Training, AdamAlsoReducesLoss) {
  const FeatureGeometry g = small_geometry();
  DecoderState state(small_config(), 16);
  const std::vector<TrainingExample> batch = {example(1, {1, 4, 5, 6, 2}, g)};
  AdamOptimizer opt(0.01);
  const double first = train_step(batch, state, opt);
  double last = first;
  for (int i = 1; i < 50; ++i) last = train_step(batch, state, opt);
  EXPECT_LT(last, 0.5 * first);
}

TEST(Training, DeterministicAcrossRuns) {
  const FeatureGeometry g = small_geometry();
  const std::vector<TrainingExample> batch = {example(1, {1, 4, 5, 6, 2}, g), example(2, {1, 7, 8, 2, 0}, g)};
  auto run = [&] {
    DecoderState state(small_config(), 17);
    SgdOptimizer opt(0.2, 0.9);
    std::vector<double> losses;
    for (int i = 0; i < 10; ++i) losses.push_back(train_step(batch, state, opt));
    return std::make_pair(losses, generate_greedy(batch[0].features, state, 8));
  };
  EXPECT_EQ(run(), run());
}

TEST(Features, SynthesisIsDeterministicAndKeyed) {
  FeatureGeometry g;
  g.d = 16;
  const auto a = synthesize_features(1, g, 42);
  const auto b = synthesize_features(1, g, 42);
  EXPECT_EQ(a.grid.shape(), (Shape{36, 16}));
  EXPECT_EQ(a.region.shape(), (Shape{10, 16}));
  EXPECT_TRUE(bit_equal(a.region, b.region));
  EXPECT_TRUE(bit_equal(a.grid, b.grid));
  const auto c = synthesize_features(2, g, 42);
  EXPECT_FALSE(bit_equal(a.region, c.region) && bit_equal(a.grid, c.grid));
  const auto d = synthesize_features(1, g, 43);
  EXPECT_FALSE(bit_equal(a.region, d.region));
}

TEST(Features, FileRoundTrip) {
  const auto f = synthesize_features(77, small_geometry(), 1);
  const fs::path path = fs::temp_directory_path() / "gritcap_test_features.feat";
  save_features(f, path);
  const auto back = load_features(path);
  EXPECT_EQ(back.image_id, 77);
  EXPECT_TRUE(bit_equal(back.region, f.region));
  EXPECT_TRUE(bit_equal(back.grid, f.grid));
  fs::remove(path);
}

TEST(Config, JsonRoundTripAndValidation) {
  DecoderConfig c = small_config();
  c.cross_order = {FeatureKind::grid, FeatureKind::region};
  EXPECT_EQ(DecoderConfig::from_json(c.to_json()), c);
  DecoderConfig odd = c;
  odd.d = 7;
  EXPECT_THROW(odd.validate(), ValidationError);
  DecoderConfig heads = c;
  heads.n_heads = 3;
  EXPECT_THROW(heads.validate(), ValidationError);
  EXPECT_THROW(DecoderConfig::from_json(R"({"d": 8, "bogus": 1})"), ValidationError);
  EXPECT_THROW(feature_kind_from_string("pixels"), ValidationError);
}

TEST(State, InitializationIsPureFunctionOfSeed) {
  const DecoderState a(small_config(), 18);
  const DecoderState b(small_config(), 18);
  const DecoderState c(small_config(), 19);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_TRUE(bit_equal(pa[i].second, pb[i].second));
    any_diff = any_diff || !bit_equal(pa[i].second, c.named_parameters()[i].second);
  }
  EXPECT_TRUE(any_diff);
  std::size_t total = 0;
  for (const auto& [name, t] : pa) total += t.numel();
  EXPECT_EQ(a.parameter_count(), total);
}

TEST(State, CloneIsIndependent) {
  const DecoderState a(small_config(), 20);
  DecoderState b = a.clone();
  b.embedding.mutable_values()[0] += 1.0;
  EXPECT_NE(a.embedding.values()[0], b.embedding.values()[0]);
}

TEST(Checkpoint, RoundTripAndExtra) {
  DecoderState state(small_config(), 21);
  perturb(state, 21, 0.1);
  const fs::path path = fs::temp_directory_path() / "gritcap_test_checkpoint.bin";
  save_checkpoint(state, path, R"({"note": 1})");
  std::string extra;
  const DecoderState back = load_checkpoint(path, &extra);
  EXPECT_EQ(back.config(), state.config());
  EXPECT_EQ(back.seed(), 21u);
  EXPECT_NE(extra.find("note"), std::string::npos);
  const auto a = state.named_parameters();
  const auto b = back.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i].second, b[i].second)) << a[i].first;
  fs::remove(path);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  const DecoderState state(small_config(), 22);
  const fs::path path = fs::temp_directory_path() / "gritcap_test_bad_checkpoint.bin";
  save_checkpoint(state, path);
  TensorFile file = load_tensor_file(path);
  for (auto& [name, t] : file.entries) {
    if (name == "embedding") t = Tensor::zeros({12, 8});
  }
  save_tensor_file(file, path);
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  fs::remove(path);
}
