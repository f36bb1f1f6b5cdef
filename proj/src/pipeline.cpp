#include "gritcap/pipeline.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "gritcap/error.hpp"
#include "gritcap/rng.hpp"
#include "io_util.hpp"

namespace gritcap {

using nlohmann::json;

namespace {

json parse_json(std::string_view text, const std::string& what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": malformed JSON at byte " + std::to_string(e.byte), e.byte);
  }
}

void reject_unknown_keys(const json& obj, const std::string& where,
                         std::initializer_list<std::string_view> known) {
  for (const auto& [key, value] : obj.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ValidationError("config: unknown key \"" + key + "\" in " + where);
    }
  }
}

const json& require_object(const json& parent, const char* key) {
  const json& v = parent.at(key);
  if (!v.is_object()) throw ValidationError(std::string("config: \"") + key + "\" must be an object");
  return v;
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: \"") + key + "\" has the wrong type");
  }
  if constexpr (std::is_unsigned_v<T>) {
    if (!it->is_number_unsigned()) {
      throw ValidationError(std::string("config: \"") + key + "\" must be a non-negative integer");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  model.validate();
  if (min_freq == 0) throw ValidationError("config: vocab.min_freq must be >= 1");
  if (features.d != model.d) {
    throw ValidationError("config: feature width " + std::to_string(features.d) +
                          " differs from model width " + std::to_string(model.d));
  }
  if (features.n_regions == 0) throw ValidationError("config: features.n_regions must be >= 1");
  if (features.grid_cells() == 0) {
    throw ValidationError("config: features.image_height and image_width must be >= 64");
  }
  if (training.optimizer != "sgd" && training.optimizer != "adam") {
    throw ValidationError("config: training.optimizer must be \"sgd\" or \"adam\", got \"" +
                          training.optimizer + "\"");
  }
  if (!(training.lr > 0.0)) throw ValidationError("config: training.lr must be positive");
  if (training.momentum < 0.0 || training.momentum >= 1.0) {
    throw ValidationError("config: training.momentum must lie in [0, 1)");
  }
  if (training.captions_per_image == 0 || training.captions_per_image > kCaptionsPerImage) {
    throw ValidationError("config: training.captions_per_image must lie in [1, 5]");
  }
}

std::string PipelineConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["vocab"] = {{"min_freq", min_freq}};
  j["model"] = json::parse(model.to_json());
  j["features"] = {{"n_regions", features.n_regions},
                   {"image_height", features.image_height},
                   {"image_width", features.image_width}};
  j["training"] = {{"steps", training.steps},
                   {"lr", training.lr},
                   {"optimizer", training.optimizer},
                   {"momentum", training.momentum},
                   {"batch_size", training.batch_size},
                   {"captions_per_image", training.captions_per_image}};
  j["decoding"] = {{"beam_size", decoding.beam_size}, {"max_new_tokens", decoding.max_new_tokens}};
  return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(std::string_view text) {
  const json j = parse_json(text, "config");
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  reject_unknown_keys(j, "the top level",
                      {"seed", "vocab", "model", "features", "training", "decoding"});
  PipelineConfig c;
  read_field(j, "seed", c.seed);
  if (j.contains("vocab")) {
    const json& v = require_object(j, "vocab");
    reject_unknown_keys(v, "\"vocab\"", {"min_freq"});
    read_field(v, "min_freq", c.min_freq);
  }
  if (j.contains("model")) c.model = DecoderConfig::from_json(require_object(j, "model").dump());
  c.features.d = c.model.d;
  if (j.contains("features")) {
    const json& f = require_object(j, "features");
    reject_unknown_keys(f, "\"features\"", {"n_regions", "image_height", "image_width"});
    read_field(f, "n_regions", c.features.n_regions);
    read_field(f, "image_height", c.features.image_height);
    read_field(f, "image_width", c.features.image_width);
  }
  if (j.contains("training")) {
    const json& t = require_object(j, "training");
    reject_unknown_keys(t, "\"training\"",
                        {"steps", "lr", "optimizer", "momentum", "batch_size", "captions_per_image"});
    read_field(t, "steps", c.training.steps);
    read_field(t, "lr", c.training.lr);
    read_field(t, "optimizer", c.training.optimizer);
    read_field(t, "momentum", c.training.momentum);
    read_field(t, "batch_size", c.training.batch_size);
    read_field(t, "captions_per_image", c.training.captions_per_image);
  }
  if (j.contains("decoding")) {
    const json& d = require_object(j, "decoding");
    reject_unknown_keys(d, "\"decoding\"", {"beam_size", "max_new_tokens"});
    read_field(d, "beam_size", c.decoding.beam_size);
    read_field(d, "max_new_tokens", c.decoding.max_new_tokens);
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return from_json(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Manifest

std::string RunManifest::to_json() const {
  json j;
  j["command"] = command;
  j["config"] = config_json.empty() ? json(nullptr) : json::parse(config_json);
  j["seed"] = seed;
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  j["duration_seconds"] = duration_seconds;
  return j.dump(2) + "\n";
}

void write_text_atomic(const std::filesystem::path& path, std::string_view contents) {
  detail::write_file_atomic(path, contents);
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".manifest.json");
}

void write_manifest(const RunManifest& manifest, const std::filesystem::path& output) {
  detail::write_file_atomic(manifest_path_for(output), manifest.to_json());
}

std::vector<CaptionRecord> load_training_records(const std::filesystem::path& corpus,
                                                 const std::optional<std::filesystem::path>& split) {
  std::vector<CaptionRecord> records = load_coco_json(corpus);
  if (split) return load_split_file(records, *split).train;
  return records;
}

// ---------------------------------------------------------------------------
// build-vocab, validate-corpus

BuildVocabResult cmd_build_vocab(const std::filesystem::path& corpus,
                                 const std::optional<std::filesystem::path>& split,
                                 std::size_t min_freq, const std::filesystem::path& out) {
  if (min_freq == 0) throw ValidationError("min_freq must be >= 1");
  const auto records = load_training_records(corpus, split);
  BuildVocabResult result{build_vocab(records, min_freq), records.size()};
  write_vocab_file(result.vocab, out);
  return result;
}

CorpusStats cmd_validate_corpus(const std::filesystem::path& corpus,
                                const std::optional<std::filesystem::path>& split) {
  const auto records = load_coco_json(corpus);
  CorpusStats stats;
  stats.n_images = records.size();
  for (const auto& r : records) {
    stats.n_captions += r.captions.size();
    for (const auto& c : r.captions) stats.n_tokens += tokenize(c).size();
  }
  if (split) {
    const CorpusSplit parts = load_split_file(records, *split);
    stats.n_train = parts.train.size();
    stats.n_val = parts.val.size();
    stats.n_test = parts.test.size();
  }
  return stats;
}

// ---------------------------------------------------------------------------
// train-toy

FeatureBundle FeatureSource::features_for(std::int64_t image_id) const {
  if (!directory) return synthesize_features(image_id, geometry, seed);
  const auto path = *directory / (std::to_string(image_id) + ".feat");
  FeatureBundle bundle = load_features(path);
  if (bundle.image_id != image_id) {
    throw ValidationError(path.string() + " holds features of image " +
                          std::to_string(bundle.image_id) + ", expected " + std::to_string(image_id));
  }
  bundle.validate(geometry.d);
  return bundle;
}

namespace {

std::string loss_log_text(const std::vector<double>& losses) {
  std::string out = "step\tloss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%.17g\n", i + 1, losses[i]);
    out += buf;
  }
  return out;
}

std::unique_ptr<Optimizer> make_optimizer(const TrainingConfig& t) {
  if (t.optimizer == "adam") return std::make_unique<AdamOptimizer>(t.lr);
  return std::make_unique<SgdOptimizer>(t.lr, t.momentum);
}

}  // namespace

TrainResult cmd_train_toy(const std::filesystem::path& corpus,
                          const std::optional<std::filesystem::path>& split,
                          const std::filesystem::path& vocab_path,
                          const PipelineConfig& config,
                          const std::optional<std::filesystem::path>& features_dir,
                          const std::filesystem::path& out_checkpoint,
                          const std::filesystem::path& loss_log) {
  config.validate();
  const Vocabulary vocab = read_vocab_file(vocab_path);
  if (vocab.size() != config.model.vocab_size) {
    throw ValidationError("vocabulary has " + std::to_string(vocab.size()) +
                          " tokens but model.vocab_size is " + std::to_string(config.model.vocab_size));
  }
  const auto records = load_training_records(corpus, split);
  if (records.empty()) throw ValidationError("no training records");

  const FeatureSource source{features_dir, config.features, config.seed};
  std::vector<TrainingExample> examples;
  for (const auto& record : records) {
    const FeatureBundle features = source.features_for(record.image_id);
    const std::size_t n = std::min(config.training.captions_per_image, record.captions.size());
    for (std::size_t c = 0; c < n; ++c) {
      examples.push_back({features, encode(vocab, record.captions[c], config.model.max_len + 1)});
    }
  }

  DecoderState state(config.model, config.seed);
  auto optimizer = make_optimizer(config.training);
  const std::size_t batch =
      config.training.batch_size == 0 ? examples.size() : std::min(config.training.batch_size, examples.size());

  TrainResult result;
  result.n_examples = examples.size();
  result.n_parameters = state.parameter_count();
  result.losses.reserve(config.training.steps);

  Rng rng(mix_seed(config.seed, 0x62617463ULL));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = examples.size();
  std::vector<TrainingExample> minibatch;
  for (std::size_t step = 0; step < config.training.steps; ++step) {
    if (batch == examples.size()) {
      result.losses.push_back(train_step(examples, state, *optimizer));
      continue;
    }
    minibatch.clear();
    while (minibatch.size() < batch) {
      if (cursor == order.size()) {
        deterministic_shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      minibatch.push_back(examples[order[cursor++]]);
    }
    result.losses.push_back(train_step(minibatch, state, *optimizer));
  }

  const json extra = {{"features",
                       {{"n_regions", config.features.n_regions},
                        {"image_height", config.features.image_height},
                        {"image_width", config.features.image_width},
                        {"seed", config.seed}}}};
  save_checkpoint(state, out_checkpoint, extra.dump());
  detail::write_file_atomic(loss_log, loss_log_text(result.losses));
  return result;
}

// ---------------------------------------------------------------------------
// generate

std::string captions_to_json(const std::vector<GeneratedCaption>& captions) {
  json arr = json::array();
  for (const auto& c : captions) arr.push_back({{"image_id", c.image_id}, {"caption", c.caption}});
  return arr.dump(2) + "\n";
}

std::vector<GeneratedCaption> captions_from_json(std::string_view text) {
  const json j = parse_json(text, "captions");
  if (!j.is_array()) throw ValidationError("captions: expected a JSON array of {image_id, caption}");
  std::vector<GeneratedCaption> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& e = j[i];
    if (!e.is_object() || !e.contains("image_id") || !e["image_id"].is_number_integer() ||
        !e.contains("caption") || !e["caption"].is_string()) {
      throw ValidationError("captions: entry " + std::to_string(i) +
                            " needs an integer image_id and a string caption");
    }
    out.push_back({e["image_id"].get<std::int64_t>(), e["caption"].get<std::string>()});
  }
  return out;
}

std::vector<GeneratedCaption> cmd_generate(const std::filesystem::path& checkpoint,
                                           const std::filesystem::path& vocab_path,
                                           const std::filesystem::path& corpus,
                                           const std::optional<std::filesystem::path>& split,
                                           const std::optional<std::filesystem::path>& features_dir,
                                           const DecodingConfig& decoding,
                                           const std::filesystem::path& out) {
  std::string extra;
  const DecoderState state = load_checkpoint(checkpoint, &extra);
  const Vocabulary vocab = read_vocab_file(vocab_path);
  if (vocab.size() != state.config().vocab_size) {
    throw ValidationError("vocabulary " + vocab_path.string() + " has " + std::to_string(vocab.size()) +
                          " tokens but checkpoint " + checkpoint.string() + " expects vocab_size " +
                          std::to_string(state.config().vocab_size));
  }

  FeatureSource source;
  source.directory = features_dir;
  source.geometry.d = state.config().d;
  if (!features_dir) {
    const json meta = extra.empty() ? json() : json::parse(extra);
    if (!meta.is_object() || !meta.contains("features")) {
      throw ValidationError("checkpoint " + checkpoint.string() +
                            " stores no feature settings; pass a features directory");
    }
    const json& f = meta["features"];
    source.geometry.n_regions = f.at("n_regions").get<std::size_t>();
    source.geometry.image_height = f.at("image_height").get<std::size_t>();
    source.geometry.image_width = f.at("image_width").get<std::size_t>();
    source.seed = f.at("seed").get<std::uint64_t>();
  }

  std::vector<CaptionRecord> records = load_coco_json(corpus);
  if (split) records = load_split_file(records, *split).test;

  const std::size_t max_new =
      decoding.max_new_tokens == 0 ? state.config().max_len : decoding.max_new_tokens;
  std::vector<GeneratedCaption> captions;
  captions.reserve(records.size());
  for (const auto& record : records) {
    const FeatureBundle features = source.features_for(record.image_id);
    const std::vector<TokenId> ids =
        decoding.beam_size == 0 ? generate_greedy(features, state, max_new)
                                : generate_beam(features, state, decoding.beam_size, max_new).ids;
    captions.push_back({record.image_id, decode(vocab, ids)});
  }
  detail::write_file_atomic(out, captions_to_json(captions));
  return captions;
}

// ---------------------------------------------------------------------------
// score, report

std::vector<EvalPair> pair_candidates(const std::vector<GeneratedCaption>& candidates,
                                      const std::vector<CaptionRecord>& references) {
  std::map<std::int64_t, const CaptionRecord*> by_id;
  for (const auto& r : references) by_id.emplace(r.image_id, &r);
  std::set<std::int64_t> seen;
  std::vector<std::int64_t> missing;
  std::vector<EvalPair> pairs;
  for (const auto& c : candidates) {
    if (!seen.insert(c.image_id).second) {
      throw ValidationError("duplicate candidate for image " + std::to_string(c.image_id));
    }
    auto it = by_id.find(c.image_id);
    if (it == by_id.end()) {
      missing.push_back(c.image_id);
      continue;
    }
    EvalPair pair;
    pair.candidate = tokenize(c.caption);
    for (const auto& ref : it->second->captions) pair.references.push_back(tokenize(ref));
    pairs.push_back(std::move(pair));
  }
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < missing.size(); ++i) ids += (i ? ", " : "") + std::to_string(missing[i]);
    throw ValidationError("no references for candidate image ids: " + ids);
  }
  if (pairs.empty()) throw ValidationError("no candidates to score");
  return pairs;
}

namespace {

std::string table_for(const MetricSummary& computed, const std::optional<std::filesystem::path>& baseline) {
  std::vector<std::pair<std::string, MetricSummary>> columns{{"Computed", computed}};
  if (baseline) columns.emplace_back("Baseline", summary_from_json(detail::read_file(*baseline)));
  return render_table(columns);
}

}  // namespace

ScoreResult cmd_score(const std::filesystem::path& candidates,
                      const std::filesystem::path& references,
                      const std::optional<std::filesystem::path>& baseline,
                      const std::filesystem::path& out) {
  const auto cands = captions_from_json(detail::read_file(candidates));
  const auto refs = load_coco_json(references);
  const auto pairs = pair_candidates(cands, refs);
  ScoreResult result;
  result.report = evaluate(pairs);
  result.report_json = report_to_json(result.report);
  if (baseline) result.table = table_for(summarize(result.report), baseline);
  detail::write_file_atomic(out, result.report_json);
  if (baseline) detail::write_file_atomic(std::filesystem::path(out.string() + ".table.md"), result.table);
  return result;
}

std::string cmd_report(const std::filesystem::path& report,
                       const std::optional<std::filesystem::path>& baseline,
                       const std::optional<std::filesystem::path>& out) {
  const MetricSummary computed = summary_from_json(detail::read_file(report));
  const std::string table = table_for(computed, baseline);
  if (out) detail::write_file_atomic(*out, table);
  return table;
}

}  // namespace gritcap
