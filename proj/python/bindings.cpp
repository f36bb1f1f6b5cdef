#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gritcap/captioner.hpp"
#include "gritcap/corpus_text.hpp"
#include "gritcap/error.hpp"
#include "gritcap/metrics.hpp"

namespace py = pybind11;
using namespace gritcap;

namespace {

using PyPair = std::pair<Sentence, std::vector<Sentence>>;

std::vector<EvalPair> to_pairs(const std::vector<PyPair>& pairs) {
  std::vector<EvalPair> out;
  out.reserve(pairs.size());
  for (const auto& [candidate, references] : pairs) out.push_back({candidate, references});
  return out;
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  for (int k = 0; k < kMaxNgramOrder; ++k) d[("bleu_" + std::to_string(k + 1)).c_str()] = r.bleu[k];
  d["meteor"] = r.meteor;
  d["rouge_l"] = r.rouge_l;
  d["cider"] = r.cider;
  d["n_pairs"] = r.n_pairs;
  return d;
}

std::vector<std::vector<double>> to_rows(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) rows[r][c] = t.at(r, c);
  }
  return rows;
}

FeatureGeometry geometry_for(const DecoderConfig& config, std::size_t n_regions, std::size_t height,
                             std::size_t width) {
  FeatureGeometry g;
  g.d = config.d;
  g.n_regions = n_regions;
  g.image_height = height;
  g.image_width = width;
  return g;
}

// Caption generator plus the synthetic feature settings used to drive it.
class Decoder {
 public:
  Decoder(const std::string& config_json, std::uint64_t seed)
      : state_(DecoderConfig::from_json(config_json), seed) {}
  explicit Decoder(DecoderState state) : state_(std::move(state)) {}

  static Decoder load(const std::filesystem::path& path) { return Decoder(load_checkpoint(path)); }
  void save(const std::filesystem::path& path) const { save_checkpoint(state_, path); }

  std::string config_json() const { return state_.config().to_json(); }
  std::uint64_t seed() const { return state_.seed(); }
  std::size_t parameter_count() const { return state_.parameter_count(); }
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    for (const auto& [name, t] : state_.named_parameters()) names.push_back(name);
    return names;
  }

  FeatureBundle features(std::int64_t image_id, std::uint64_t feature_seed, std::size_t n_regions,
                         std::size_t height, std::size_t width) const {
    return synthesize_features(image_id, geometry_for(state_.config(), n_regions, height, width), feature_seed);
  }

  std::vector<std::vector<double>> logits(const std::vector<TokenId>& ids, std::int64_t image_id,
                                          std::uint64_t feature_seed, std::size_t n_regions,
                                          std::size_t height, std::size_t width) const {
    return to_rows(forward(ids, features(image_id, feature_seed, n_regions, height, width), state_));
  }

  std::vector<TokenId> generate(std::int64_t image_id, std::size_t max_new_tokens, std::size_t beam_size,
                                std::uint64_t feature_seed, std::size_t n_regions, std::size_t height,
                                std::size_t width) const {
    const FeatureBundle f = features(image_id, feature_seed, n_regions, height, width);
    if (beam_size == 0) return generate_greedy(f, state_, max_new_tokens);
    return generate_beam(f, state_, beam_size, max_new_tokens).ids;
  }

  double train(const std::vector<std::pair<std::int64_t, std::vector<TokenId>>>& examples, std::size_t steps,
               double lr, std::uint64_t feature_seed, std::size_t n_regions, std::size_t height,
               std::size_t width) {
    std::vector<TrainingExample> batch;
    for (const auto& [image_id, ids] : examples) {
      batch.push_back({features(image_id, feature_seed, n_regions, height, width), ids});
    }
    SgdOptimizer optimizer(lr);
    double loss = 0.0;
    for (std::size_t i = 0; i < steps; ++i) loss = train_step(batch, state_, optimizer);
    return loss;
  }

  double loss(const std::vector<std::pair<std::int64_t, std::vector<TokenId>>>& examples,
              std::uint64_t feature_seed, std::size_t n_regions, std::size_t height, std::size_t width) const {
    std::vector<TrainingExample> batch;
    for (const auto& [image_id, ids] : examples) {
      batch.push_back({features(image_id, feature_seed, n_regions, height, width), ids});
    }
    return batch_loss(batch, state_).item();
  }

 private:
  DecoderState state_;
};

}  // namespace

PYBIND11_MODULE(_gritcap, m) {
  m.doc() = "Caption generation, vocabulary and caption metrics";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.attr("PAD_ID") = kPadId;
  m.attr("BOS_ID") = kBosId;
  m.attr("EOS_ID") = kEosId;
  m.attr("UNK_ID") = kUnkId;

  m.def("normalize", [](const std::string& s) { return normalize(s); });
  m.def("tokenize", [](const std::string& s) { return tokenize(s); });

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def_static("from_tokens", &Vocabulary::from_tokens, py::arg("tokens"))
      .def("__len__", &Vocabulary::size)
      .def("__contains__", &Vocabulary::contains)
      .def("id_of", &Vocabulary::id_of)
      .def("token_of", &Vocabulary::token_of)
      .def_property_readonly("tokens", &Vocabulary::tokens)
      .def("encode", [](const Vocabulary& v, const std::string& text, std::size_t max_len,
                        bool pad) { return encode(v, text, max_len, pad); },
           py::arg("text"), py::arg("max_len"), py::arg("pad") = false)
      .def("decode", [](const Vocabulary& v, const std::vector<TokenId>& ids) { return decode(v, ids); })
      .def("save", [](const Vocabulary& v, const std::filesystem::path& p) { write_vocab_file(v, p); })
      .def_static("load", &read_vocab_file)
      .def("__eq__", [](const Vocabulary& a, const Vocabulary& b) { return a == b; });

  py::class_<CaptionRecord>(m, "CaptionRecord")
      .def(py::init([](std::int64_t id, std::string file_name, std::vector<std::string> captions) {
             return CaptionRecord{id, std::move(file_name), std::move(captions)};
           }),
           py::arg("image_id"), py::arg("file_name"), py::arg("captions"))
      .def_readwrite("image_id", &CaptionRecord::image_id)
      .def_readwrite("file_name", &CaptionRecord::file_name)
      .def_readwrite("captions", &CaptionRecord::captions);

  m.def("parse_coco_json", [](const std::string& text) { return parse_coco_json(text); });
  m.def("load_coco_json", &load_coco_json);
  m.def("build_vocab", &build_vocab, py::arg("records"), py::arg("min_freq") = kDefaultMinFreq);

  m.def("bleu", [](const std::vector<PyPair>& pairs) {
    const auto p = to_pairs(pairs);
    const auto r = bleu_corpus(p);
    return std::vector<double>(r.scores.begin(), r.scores.end());
  }, py::arg("pairs"), "BLEU@1..4 of a corpus of (candidate, references) pairs");
  m.def("meteor", [](const Sentence& candidate, const std::vector<Sentence>& references) {
    return meteor_pair({candidate, references});
  }, py::arg("candidate"), py::arg("references"));
  m.def("rouge_l", [](const Sentence& candidate, const std::vector<Sentence>& references) {
    return rouge_l_pair({candidate, references});
  }, py::arg("candidate"), py::arg("references"));
  m.def("cider", [](const std::vector<PyPair>& pairs) { return cider_corpus(to_pairs(pairs)); },
        py::arg("pairs"));
  m.def("evaluate", [](const std::vector<PyPair>& pairs) { return report_dict(evaluate(to_pairs(pairs))); },
        py::arg("pairs"));
  m.def("interpret_bleu", [](double score) { return std::string(interpret_bleu(score)); });
  m.def("portuguese_stem", [](const std::string& s) { return portuguese_stem(s); });

  m.def("sinusoidal_embedding", [](std::size_t t, std::size_t d) {
    const Tensor e = sinusoidal_embedding(t, d);
    return std::vector<double>(e.values().begin(), e.values().end());
  });

  py::class_<FeatureBundle>(m, "FeatureBundle")
      .def_readonly("image_id", &FeatureBundle::image_id)
      .def_property_readonly("region", [](const FeatureBundle& f) { return to_rows(f.region); })
      .def_property_readonly("grid", [](const FeatureBundle& f) { return to_rows(f.grid); });

  m.def("synthesize_features", [](std::int64_t image_id, std::size_t d, std::size_t n_regions,
                                  std::size_t height, std::size_t width, std::uint64_t seed) {
    FeatureGeometry g;
    g.d = d;
    g.n_regions = n_regions;
    g.image_height = height;
    g.image_width = width;
    return synthesize_features(image_id, g, seed);
  }, py::arg("image_id"), py::arg("d") = 32, py::arg("n_regions") = 10, py::arg("height") = 384,
        py::arg("width") = 384, py::arg("seed") = 42);

  // Synthetic feature settings shared by every Decoder method.
  const auto fs_arg = py::arg("feature_seed") = 42;
  const auto nr_arg = py::arg("n_regions") = 10;
  const auto h_arg = py::arg("height") = 384;
  const auto w_arg = py::arg("width") = 384;

  py::class_<Decoder>(m, "Decoder")
      .def(py::init<const std::string&, std::uint64_t>(), py::arg("config_json") = "{}", py::arg("seed") = 42)
      .def_static("load", &Decoder::load)
      .def("save", &Decoder::save)
      .def_property_readonly("config_json", &Decoder::config_json)
      .def_property_readonly("seed", &Decoder::seed)
      .def_property_readonly("parameter_count", &Decoder::parameter_count)
      .def("parameter_names", &Decoder::parameter_names)
      .def("features", &Decoder::features, py::arg("image_id"), fs_arg, nr_arg, h_arg, w_arg)
      .def("logits", &Decoder::logits, py::arg("ids"), py::arg("image_id"), fs_arg, nr_arg, h_arg, w_arg)
      .def("generate", &Decoder::generate, py::arg("image_id"), py::arg("max_new_tokens") = 24,
           py::arg("beam_size") = 0, fs_arg, nr_arg, h_arg, w_arg)
      .def("train", &Decoder::train, py::arg("examples"), py::arg("steps"), py::arg("lr") = 0.3, fs_arg, nr_arg,
           h_arg, w_arg)
      .def("loss", &Decoder::loss, py::arg("examples"), fs_arg, nr_arg, h_arg, w_arg);
}
