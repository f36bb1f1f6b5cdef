#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gritcap/error.hpp"
#include "gritcap/pipeline.hpp"

namespace {

using gritcap::PipelineConfig;
using gritcap::RunManifest;
namespace fs = std::filesystem;

enum ExitCode { kOk = 0, kValidation = 1, kIo = 2 };

struct SharedFlags {
  std::uint64_t seed = 42;
  std::string config;
  std::string out;
  bool quiet = false;
};

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gritcap: caption corpus tools, toy dual-feature captioner and caption metrics"};
  app.require_subcommand(1);
  app.fallthrough();

  SharedFlags shared;
  CLI::Option* seed_opt = app.add_option("--seed", shared.seed, "Random seed")->capture_default_str();
  app.add_option("--config", shared.config, "JSON config file; flags override it")
      ->check(CLI::ExistingFile);
  app.add_option("--out", shared.out, "Output path");
  app.add_flag("--quiet", shared.quiet, "Suppress progress output");

  std::string corpus, split, vocab, features_dir, checkpoint, candidates, references, baseline,
      report, loss_log, optimizer;
  std::size_t min_freq = 0, steps = 0, beam = 0, max_new_tokens = 0;
  double lr = 0.0;

  auto* build = app.add_subcommand("build-vocab", "Build a vocabulary file from a COCO caption file");
  build->add_option("--corpus", corpus, "COCO caption JSON")->required();
  build->add_option("--split", split, "Split file; only train ids are counted");
  CLI::Option* min_freq_opt = build->add_option("--min-freq", min_freq, "Minimum token frequency");

  auto* validate = app.add_subcommand("validate-corpus", "Check a COCO caption file and optional split");
  validate->add_option("--corpus", corpus, "COCO caption JSON")->required();
  validate->add_option("--split", split, "Split file");

  auto* train = app.add_subcommand("train-toy", "Train the captioner on a small corpus");
  train->add_option("--corpus", corpus, "COCO caption JSON")->required();
  train->add_option("--split", split, "Split file; trains on the train ids");
  train->add_option("--vocab", vocab, "Vocabulary file")->required();
  train->add_option("--features-dir", features_dir, "Directory of <image_id>.feat files");
  CLI::Option* steps_opt = train->add_option("--steps", steps, "Optimizer steps");
  CLI::Option* lr_opt = train->add_option("--lr", lr, "Learning rate");
  CLI::Option* optimizer_opt = train->add_option("--optimizer", optimizer, "sgd or adam");
  train->add_option("--log", loss_log, "Loss log path (default <out>.loss.tsv)");

  auto* generate = app.add_subcommand("generate", "Caption every image of a corpus");
  generate->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  generate->add_option("--vocab", vocab, "Vocabulary file")->required();
  generate->add_option("--corpus", corpus, "COCO caption JSON listing the images")->required();
  generate->add_option("--split", split, "Split file; captions the test ids");
  generate->add_option("--features-dir", features_dir, "Directory of <image_id>.feat files");
  CLI::Option* beam_opt = generate->add_option("--beam", beam, "Beam size; 0 decodes greedily");
  CLI::Option* max_new_opt = generate->add_option("--max-new-tokens", max_new_tokens, "Generation limit");

  auto* score = app.add_subcommand("score", "Score candidate captions against references");
  score->add_option("--candidates", candidates, "JSON list of {image_id, caption}")->required();
  score->add_option("--references", references, "COCO caption JSON")->required();
  score->add_option("--baseline", baseline, "Baseline report for a side-by-side table");

  auto* rep = app.add_subcommand("report", "Render a metric report as a markdown table");
  rep->add_option("--report", report, "Report JSON")->required();
  rep->add_option("--baseline", baseline, "Baseline report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  auto need_out = [&](const char* what) {
    if (shared.out.empty()) throw gritcap::ValidationError(std::string("--out is required for ") + what);
  };
  auto say = [&](const std::string& line) {
    if (!shared.quiet) std::cout << line << "\n";
  };

  const Timer timer;
  try {
    PipelineConfig config = shared.config.empty() ? PipelineConfig{} : PipelineConfig::load(shared.config);
    if (seed_opt->count() > 0 || shared.config.empty()) config.seed = shared.seed;
    if (*min_freq_opt) config.min_freq = min_freq;
    if (*steps_opt) config.training.steps = steps;
    if (*lr_opt) config.training.lr = lr;
    if (*optimizer_opt) config.training.optimizer = optimizer;
    if (*beam_opt) config.decoding.beam_size = beam;
    if (*max_new_opt) config.decoding.max_new_tokens = max_new_tokens;
    config.validate();

    RunManifest manifest;
    manifest.config_json = config.to_json();
    manifest.seed = config.seed;
    auto finish = [&](const fs::path& primary) {
      manifest.duration_seconds = timer.seconds();
      gritcap::write_manifest(manifest, primary);
    };

    if (*build) {
      need_out("build-vocab");
      manifest.command = "build-vocab";
      auto result = gritcap::cmd_build_vocab(corpus, opt_path(split), config.min_freq, shared.out);
      manifest.inputs = {corpus};
      if (!split.empty()) manifest.inputs.push_back(split);
      manifest.outputs = {shared.out};
      finish(shared.out);
      say("vocabulary size: " + std::to_string(result.vocab.size()) + " (" +
          std::to_string(result.n_records) + " images)");
    } else if (*validate) {
      manifest.command = "validate-corpus";
      const auto stats = gritcap::cmd_validate_corpus(corpus, opt_path(split));
      say("images: " + std::to_string(stats.n_images));
      say("captions: " + std::to_string(stats.n_captions));
      say("tokens: " + std::to_string(stats.n_tokens));
      if (!split.empty()) {
        say("train/val/test: " + std::to_string(stats.n_train) + "/" + std::to_string(stats.n_val) +
            "/" + std::to_string(stats.n_test));
      }
      say("corpus OK");
      if (!shared.out.empty()) {
        char buf[256];
        std::snprintf(buf, sizeof buf,
                      "{\n  \"images\": %zu,\n  \"captions\": %zu,\n  \"tokens\": %zu,\n"
                      "  \"train\": %zu,\n  \"val\": %zu,\n  \"test\": %zu\n}\n",
                      stats.n_images, stats.n_captions, stats.n_tokens, stats.n_train, stats.n_val,
                      stats.n_test);
        gritcap::write_text_atomic(shared.out, buf);
        manifest.inputs = {corpus};
        if (!split.empty()) manifest.inputs.push_back(split);
        manifest.outputs = {shared.out};
        finish(shared.out);
      }
    } else if (*train) {
      need_out("train-toy");
      manifest.command = "train-toy";
      const std::string log = loss_log.empty() ? shared.out + ".loss.tsv" : loss_log;
      const auto result = gritcap::cmd_train_toy(corpus, opt_path(split), vocab, config,
                                                 opt_path(features_dir), shared.out, log);
      manifest.inputs = {corpus, vocab};
      if (!split.empty()) manifest.inputs.push_back(split);
      if (!features_dir.empty()) manifest.inputs.push_back(features_dir);
      manifest.outputs = {shared.out, log};
      finish(shared.out);
      char buf[160];
      std::snprintf(buf, sizeof buf, "trained %zu parameters on %zu captions; loss %.6f -> %.6f",
                    result.n_parameters, result.n_examples,
                    result.losses.empty() ? 0.0 : result.losses.front(),
                    result.losses.empty() ? 0.0 : result.losses.back());
      say(buf);
    } else if (*generate) {
      need_out("generate");
      manifest.command = "generate";
      const auto captions = gritcap::cmd_generate(checkpoint, vocab, corpus, opt_path(split),
                                                  opt_path(features_dir), config.decoding, shared.out);
      manifest.inputs = {checkpoint, vocab, corpus};
      if (!split.empty()) manifest.inputs.push_back(split);
      if (!features_dir.empty()) manifest.inputs.push_back(features_dir);
      manifest.outputs = {shared.out};
      finish(shared.out);
      say("captioned " + std::to_string(captions.size()) + " images");
    } else if (*score) {
      need_out("score");
      manifest.command = "score";
      const auto result = gritcap::cmd_score(candidates, references, opt_path(baseline), shared.out);
      manifest.inputs = {candidates, references};
      manifest.outputs = {shared.out};
      if (!baseline.empty()) {
        manifest.inputs.push_back(baseline);
        manifest.outputs.push_back(shared.out + ".table.md");
      }
      finish(shared.out);
      if (!shared.quiet) std::cout << (result.table.empty() ? result.report_json : result.table);
    } else if (*rep) {
      manifest.command = "report";
      const std::string table = gritcap::cmd_report(report, opt_path(baseline), opt_path(shared.out));
      if (!shared.out.empty()) {
        manifest.inputs = {report};
        if (!baseline.empty()) manifest.inputs.push_back(baseline);
        manifest.outputs = {shared.out};
        finish(shared.out);
      }
      if (!shared.quiet || shared.out.empty()) std::cout << table;
    }
  } catch (const gritcap::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const gritcap::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kOk;
}
