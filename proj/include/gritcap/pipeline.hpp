#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gritcap/captioner.hpp"
#include "gritcap/corpus_text.hpp"
#include "gritcap/metrics.hpp"

namespace gritcap {

struct TrainingConfig {
  std::size_t steps = 200;
  double lr = 0.1;
  std::string optimizer = "sgd";  // "sgd" or "adam"
  double momentum = 0.0;
  std::size_t batch_size = 0;     // 0 = whole set every step
  std::size_t captions_per_image = kCaptionsPerImage;
};

struct DecodingConfig {
  std::size_t beam_size = 0;      // 0 = greedy
  std::size_t max_new_tokens = 0; // 0 = model max_len
};

/// Settings shared by every subcommand. Loaded from a JSON file whose
/// top-level keys are "seed", "vocab", "model", "features", "training" and
/// "decoding"; missing keys keep their defaults.
struct PipelineConfig {
  std::uint64_t seed = 42;
  std::size_t min_freq = kDefaultMinFreq;
  DecoderConfig model;
  FeatureGeometry features;  // features.d always mirrors model.d
  TrainingConfig training;
  DecodingConfig decoding;

  void validate() const;
  std::string to_json() const;
  static PipelineConfig from_json(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);
};

/// Provenance record written next to every output as "<output>.manifest.json".
struct RunManifest {
  std::string command;
  std::string config_json;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  double duration_seconds = 0.0;

  std::string to_json() const;
};

// Temp-file-and-rename write; throws IoError.
void write_text_atomic(const std::filesystem::path& path, std::string_view contents);

std::filesystem::path manifest_path_for(const std::filesystem::path& output);
void write_manifest(const RunManifest& manifest, const std::filesystem::path& output);

// Records restricted to the training split when a split file is given.
std::vector<CaptionRecord> load_training_records(const std::filesystem::path& corpus,
                                                 const std::optional<std::filesystem::path>& split);

// ---------------------------------------------------------------------------
// Subcommands. Each validates its inputs fully before writing anything and
// writes outputs atomically.

struct BuildVocabResult {
  Vocabulary vocab;
  std::size_t n_records = 0;
};
BuildVocabResult cmd_build_vocab(const std::filesystem::path& corpus,
                                 const std::optional<std::filesystem::path>& split,
                                 std::size_t min_freq, const std::filesystem::path& out);

struct CorpusStats {
  std::size_t n_images = 0;
  std::size_t n_captions = 0;
  std::size_t n_tokens = 0;
  std::size_t n_train = 0, n_val = 0, n_test = 0;  // zero without a split
};
CorpusStats cmd_validate_corpus(const std::filesystem::path& corpus,
                                const std::optional<std::filesystem::path>& split);

// Feature source: per-image files "<dir>/<image_id>.feat" when a directory is
// given, synthetic features keyed by (image_id, seed) otherwise.
struct FeatureSource {
  std::optional<std::filesystem::path> directory;
  FeatureGeometry geometry;
  std::uint64_t seed = 42;

  FeatureBundle features_for(std::int64_t image_id) const;
};

struct TrainResult {
  std::vector<double> losses;  // pre-update loss of every step
  std::size_t n_examples = 0;
  std::size_t n_parameters = 0;
};
TrainResult cmd_train_toy(const std::filesystem::path& corpus,
                          const std::optional<std::filesystem::path>& split,
                          const std::filesystem::path& vocab_path,
                          const PipelineConfig& config,
                          const std::optional<std::filesystem::path>& features_dir,
                          const std::filesystem::path& out_checkpoint,
                          const std::filesystem::path& loss_log);

struct GeneratedCaption {
  std::int64_t image_id = 0;
  std::string caption;
};
std::string captions_to_json(const std::vector<GeneratedCaption>& captions);
std::vector<GeneratedCaption> captions_from_json(std::string_view text);

// Captions every image of `corpus` (or its test split when `split` is given).
// The feature source defaults to the one stored in the checkpoint.
std::vector<GeneratedCaption> cmd_generate(const std::filesystem::path& checkpoint,
                                           const std::filesystem::path& vocab_path,
                                           const std::filesystem::path& corpus,
                                           const std::optional<std::filesystem::path>& split,
                                           const std::optional<std::filesystem::path>& features_dir,
                                           const DecodingConfig& decoding,
                                           const std::filesystem::path& out);

// Pairs candidates with references by image id. Throws ValidationError listing
// every candidate id without references, and on duplicate candidate ids.
std::vector<EvalPair> pair_candidates(const std::vector<GeneratedCaption>& candidates,
                                      const std::vector<CaptionRecord>& references);

struct ScoreResult {
  MetricReport report;
  std::string report_json;
  std::string table;  // empty without a baseline
};
ScoreResult cmd_score(const std::filesystem::path& candidates,
                      const std::filesystem::path& references,
                      const std::optional<std::filesystem::path>& baseline,
                      const std::filesystem::path& out);

// Markdown table of a report, next to a baseline when given.
std::string cmd_report(const std::filesystem::path& report,
                       const std::optional<std::filesystem::path>& baseline,
                       const std::optional<std::filesystem::path>& out);

}  // namespace gritcap
