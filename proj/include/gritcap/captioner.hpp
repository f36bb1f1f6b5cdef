#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gritcap/corpus_text.hpp"
#include "gritcap/tensor.hpp"

namespace gritcap {

enum class FeatureKind { region, grid };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view name);

/// Visual features of one image: detector-style region vectors and the
/// backbone grid, both of model width d.
struct FeatureBundle {
  std::int64_t image_id = 0;
  Tensor region;  // [N_r, d]
  Tensor grid;    // [M, d], M = (H/64)(W/64)

  const Tensor& get(FeatureKind kind) const { return kind == FeatureKind::region ? region : grid; }
  // Throws ValidationError unless both are non-empty [*, d] matrices.
  void validate(std::size_t d) const;
};

struct FeatureGeometry {
  std::size_t d = 32;
  std::size_t n_regions = 10;
  std::size_t image_height = 384;
  std::size_t image_width = 384;

  std::size_t grid_cells() const { return (image_height / 64) * (image_width / 64); }
};

// Deterministic stand-in for the visual backbone: N(0,1)-scale pseudo-random
// features keyed by (image_id, seed).
FeatureBundle synthesize_features(std::int64_t image_id, const FeatureGeometry& geometry,
                                  std::uint64_t seed);

// Feature file: tensor file with "region" and "grid" entries.
void save_features(const FeatureBundle& features, const std::filesystem::path& path);
FeatureBundle load_features(const std::filesystem::path& path);

struct DecoderConfig {
  std::size_t d = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 64;
  std::size_t max_len = 24;  // longest input sequence forward() accepts
  std::vector<FeatureKind> cross_order{FeatureKind::region, FeatureKind::grid};
  double ln_eps = 1e-5;

  // Throws ValidationError describing the first violated constraint.
  void validate() const;
  std::string to_json() const;
  static DecoderConfig from_json(std::string_view text);

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

// Component 2i = sin(t / 10000^(2i/d)), component 2i+1 = cos of the same
// angle. Returns shape [d]; d must be even.
Tensor sinusoidal_embedding(std::size_t t, std::size_t d);

struct AttentionParams {
  Tensor ln_gain, ln_bias;      // pre-norm of the query stream
  Tensor wq, wk, wv, wo;        // [d, d]
  Tensor bo;                    // [d]
};

struct LayerParams {
  AttentionParams self_attn;
  std::vector<AttentionParams> cross_attn;  // one per entry of cross_order
  Tensor ff_ln_gain, ff_ln_bias;
  Tensor w1, b1;  // [d, d_ff], [d_ff]
  Tensor w2, b2;  // [d_ff, d], [d]
};

/// Parameters of the caption generator. Initialization is a pure function of
/// (config, seed).
class DecoderState {
 public:
  DecoderState(DecoderConfig config, std::uint64_t seed);

  const DecoderConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }

  Tensor embedding;                 // [vocab_size, d]
  std::vector<LayerParams> layers;  // n_layers
  Tensor final_ln_gain, final_ln_bias;
  Tensor out_proj, out_bias;        // [d, vocab_size], [vocab_size]

  // Every trainable tensor with a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Deep copy (fresh storage).
  DecoderState clone() const;

 private:
  DecoderConfig config_;
  std::uint64_t seed_;
};

// Checkpoint: tensor file whose metadata holds {"config": ..., "seed": ...}
// plus an optional caller-defined JSON value under "extra".
// Loading validates every shape against the stored config.
void save_checkpoint(const DecoderState& state, const std::filesystem::path& path,
                     const std::string& extra_json = "");
DecoderState load_checkpoint(const std::filesystem::path& path, std::string* extra_json = nullptr);

// Row t is embedding[ids[t]] + sinusoidal_embedding(t, d).
Tensor input_embedding(std::span<const TokenId> ids, const DecoderState& state);

// Multi-head attention of `queries` ([T, d], already normalized) over
// `memory` ([S, d]); `mask` is additive [T, S] or undefined.
Tensor multi_head_attention(const Tensor& queries, const Tensor& memory,
                            const AttentionParams& params, std::size_t n_heads,
                            const Tensor& mask);

// Pre-norm block: x + SelfAttn(LN(x)), then x + CrossAttn_k(LN(x), features_k)
// for each k in cross_order, then x + FFN(LN(x)).
Tensor decoder_layer(const Tensor& x, const FeatureBundle& features, const LayerParams& params,
                     const DecoderConfig& config, const Tensor& mask);

// Logits [T, vocab_size]; row t scores the word at position t + 1.
Tensor forward(std::span<const TokenId> ids, const FeatureBundle& features,
               const DecoderState& state);

struct DecodeOptions {
  // Never emit <pad> or <bos>. Disable to search the full vocabulary.
  bool ban_pad_and_bos = true;
};

// Returns [BOS, w1, ..., wk] with k <= max_new_tokens; stops after EOS. Ties in
// the argmax go to the lowest id.
std::vector<TokenId> generate_greedy(const FeatureBundle& features, const DecoderState& state,
                                     std::size_t max_new_tokens, const DecodeOptions& options = {});

struct Hypothesis {
  std::vector<TokenId> ids;  // starts with BOS
  double log_prob = 0.0;
  // log_prob divided by the number of generated tokens.
  double normalized() const;
};

/// Length-normalized beam search. beam_size = 1 reproduces generate_greedy.
Hypothesis generate_beam(const FeatureBundle& features, const DecoderState& state,
                         std::size_t beam_size, std::size_t max_new_tokens,
                         const DecodeOptions& options = {});

// Sum of next-token log-probabilities of ids[1..] given the prefix.
double sequence_log_prob(std::span<const TokenId> ids, const FeatureBundle& features,
                         const DecoderState& state);

// ---------------------------------------------------------------------------
// Training

struct TrainingExample {
  FeatureBundle features;
  std::vector<TokenId> ids;  // BOS ... EOS, optionally PAD-padded
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies one update from the accumulated gradients.
  virtual void step(std::span<Tensor> params) = 0;
};

class SgdOptimizer final : public Optimizer {
 public:
  explicit SgdOptimizer(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}
  void step(std::span<Tensor> params) override;

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

class AdamOptimizer final : public Optimizer {
 public:
  explicit AdamOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<Tensor> params) override;

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Token-level mean next-word cross-entropy over the batch, PAD targets
// ignored. Recorded on the active graph when one is recording.
Tensor batch_loss(std::span<const TrainingExample> batch, const DecoderState& state);

// Teacher-forced step: loss, backward, optimizer update. Returns the
// pre-update loss.
double train_step(std::span<const TrainingExample> batch, DecoderState& state,
                  Optimizer& optimizer);

}  // namespace gritcap
