#include "gritcap/captioner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "gritcap/checkpoint.hpp"
#include "gritcap/error.hpp"
#include "gritcap/rng.hpp"

namespace gritcap {

using nlohmann::json;

std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::region ? "region" : "grid";
}

FeatureKind feature_kind_from_string(std::string_view name) {
  if (name == "region") return FeatureKind::region;
  if (name == "grid") return FeatureKind::grid;
  throw ValidationError("unknown feature kind \"" + std::string(name) +
                        "\" (expected \"region\" or \"grid\")");
}

// ---------------------------------------------------------------------------
// Features

void FeatureBundle::validate(std::size_t d) const {
  for (FeatureKind kind : {FeatureKind::region, FeatureKind::grid}) {
    const Tensor& t = get(kind);
    const std::string name(to_string(kind));
    if (!t.defined()) throw ValidationError(name + " features missing for image " + std::to_string(image_id));
    if (t.rank() != 2 || t.dim(1) != d) {
      throw ValidationError(name + " features of image " + std::to_string(image_id) +
                            " have shape " + shape_to_string(t.shape()) + ", expected [*, " +
                            std::to_string(d) + "]");
    }
  }
}

FeatureBundle synthesize_features(std::int64_t image_id, const FeatureGeometry& geometry,
                                  std::uint64_t seed) {
  if (geometry.d == 0 || geometry.n_regions == 0 || geometry.grid_cells() == 0) {
    throw ValidationError("feature geometry needs d >= 1, n_regions >= 1 and an image of at least 64x64");
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(image_id)));
  // Unit-variance uniform entries.
  const double half_width = std::sqrt(3.0);
  auto fill = [&](std::size_t rows) {
    std::vector<double> v(rows * geometry.d);
    for (auto& x : v) x = uniform(rng, -half_width, half_width);
    return Tensor({rows, geometry.d}, std::move(v));
  };
  FeatureBundle bundle;
  bundle.image_id = image_id;
  bundle.region = fill(geometry.n_regions);
  bundle.grid = fill(geometry.grid_cells());
  return bundle;
}

void save_features(const FeatureBundle& features, const std::filesystem::path& path) {
  TensorFile file;
  file.metadata = json{{"image_id", features.image_id}}.dump();
  file.entries = {{"region", features.region}, {"grid", features.grid}};
  save_tensor_file(file, path);
}

FeatureBundle load_features(const std::filesystem::path& path) {
  TensorFile file = load_tensor_file(path);
  FeatureBundle bundle;
  try {
    const json meta = json::parse(file.metadata);
    bundle.image_id = meta.at("image_id").get<std::int64_t>();
  } catch (const json::exception&) {
    throw ValidationError(path.string() + ": feature metadata lacks an integer image_id");
  }
  bundle.region = file.at("region");
  bundle.grid = file.at("grid");
  if (bundle.region.rank() != 2 || bundle.grid.rank() != 2 ||
      bundle.region.dim(1) != bundle.grid.dim(1)) {
    throw ValidationError(path.string() + ": region " + shape_to_string(bundle.region.shape()) +
                          " and grid " + shape_to_string(bundle.grid.shape()) +
                          " must be matrices of equal width");
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Config

void DecoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("decoder config: " + msg); };
  if (d == 0 || d % 2 != 0) fail("d must be a positive even number, got " + std::to_string(d));
  if (n_heads == 0 || d % n_heads != 0) {
    fail("d = " + std::to_string(d) + " is not divisible by n_heads = " + std::to_string(n_heads));
  }
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (d_ff == 0) fail("d_ff must be >= 1");
  if (vocab_size < kNumSpecials) fail("vocab_size must be >= 4, got " + std::to_string(vocab_size));
  if (max_len == 0) fail("max_len must be >= 1");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

std::string DecoderConfig::to_json() const {
  json order = json::array();
  for (auto k : cross_order) order.push_back(std::string(to_string(k)));
  json j = {{"d", d},
            {"n_layers", n_layers},
            {"n_heads", n_heads},
            {"d_ff", d_ff},
            {"vocab_size", vocab_size},
            {"max_len", max_len},
            {"cross_order", order},
            {"ln_eps", ln_eps}};
  return j.dump(2);
}

DecoderConfig DecoderConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError("decoder config: malformed JSON at byte " + std::to_string(e.byte), e.byte);
  }
  if (!j.is_object()) throw ValidationError("decoder config: expected a JSON object");
  static const char* const kKeys[] = {"d", "n_layers", "n_heads", "d_ff", "vocab_size", "max_len",
                                      "cross_order", "ln_eps"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys)) {
      throw ValidationError("decoder config: unknown key \"" + key + "\"");
    }
  }
  DecoderConfig c;
  auto size_field = [&](const char* key, std::size_t& out) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_number_unsigned()) {
        throw ValidationError(std::string("decoder config: \"") + key + "\" must be a non-negative integer");
      }
      out = it->get<std::size_t>();
    }
  };
  size_field("d", c.d);
  size_field("n_layers", c.n_layers);
  size_field("n_heads", c.n_heads);
  size_field("d_ff", c.d_ff);
  size_field("vocab_size", c.vocab_size);
  size_field("max_len", c.max_len);
  if (auto it = j.find("cross_order"); it != j.end()) {
    if (!it->is_array()) throw ValidationError("decoder config: \"cross_order\" must be an array");
    c.cross_order.clear();
    for (const auto& k : *it) {
      if (!k.is_string()) throw ValidationError("decoder config: \"cross_order\" entries must be strings");
      c.cross_order.push_back(feature_kind_from_string(k.get<std::string>()));
    }
  }
  if (auto it = j.find("ln_eps"); it != j.end()) {
    if (!it->is_number()) throw ValidationError("decoder config: \"ln_eps\" must be a number");
    c.ln_eps = it->get<double>();
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

Tensor uniform_param(Rng& rng, Shape shape, double bound) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = uniform(rng, -bound, bound);
  return Tensor(std::move(shape), std::move(v), true);
}

AttentionParams init_attention(Rng& rng, std::size_t d) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams p;
  p.ln_gain = Tensor::full({d}, 1.0, true);
  p.ln_bias = Tensor::zeros({d}, true);
  p.wq = uniform_param(rng, {d, d}, bound);
  p.wk = uniform_param(rng, {d, d}, bound);
  p.wv = uniform_param(rng, {d, d}, bound);
  p.wo = uniform_param(rng, {d, d}, bound);
  p.bo = Tensor::zeros({d}, true);
  return p;
}

void append_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
                      const AttentionParams& p) {
  out.emplace_back(prefix + ".ln_gain", p.ln_gain);
  out.emplace_back(prefix + ".ln_bias", p.ln_bias);
  out.emplace_back(prefix + ".wq", p.wq);
  out.emplace_back(prefix + ".wk", p.wk);
  out.emplace_back(prefix + ".wv", p.wv);
  out.emplace_back(prefix + ".wo", p.wo);
  out.emplace_back(prefix + ".bo", p.bo);
}

Tensor copy_param(const Tensor& t) {
  Tensor c = t.detach();
  c.set_requires_grad(true);
  return c;
}

AttentionParams copy_attention(const AttentionParams& p) {
  return {copy_param(p.ln_gain), copy_param(p.ln_bias), copy_param(p.wq), copy_param(p.wk),
          copy_param(p.wv),      copy_param(p.wo),      copy_param(p.bo)};
}

}  // namespace

DecoderState::DecoderState(DecoderConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed) {
  config_.validate();
  const std::size_t d = config_.d;
  Rng rng(seed);
  embedding = uniform_param(rng, {config_.vocab_size, d}, 0.02);
  layers.reserve(config_.n_layers);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    LayerParams layer;
    layer.self_attn = init_attention(rng, d);
    for (std::size_t k = 0; k < config_.cross_order.size(); ++k) {
      layer.cross_attn.push_back(init_attention(rng, d));
    }
    layer.ff_ln_gain = Tensor::full({d}, 1.0, true);
    layer.ff_ln_bias = Tensor::zeros({d}, true);
    layer.w1 = uniform_param(rng, {d, config_.d_ff}, 1.0 / std::sqrt(static_cast<double>(d)));
    layer.b1 = Tensor::zeros({config_.d_ff}, true);
    layer.w2 = uniform_param(rng, {config_.d_ff, d}, 1.0 / std::sqrt(static_cast<double>(config_.d_ff)));
    layer.b2 = Tensor::zeros({d}, true);
    layers.push_back(std::move(layer));
  }
  final_ln_gain = Tensor::full({d}, 1.0, true);
  final_ln_bias = Tensor::zeros({d}, true);
  out_proj = uniform_param(rng, {d, config_.vocab_size}, 1.0 / std::sqrt(static_cast<double>(d)));
  out_bias = Tensor::zeros({config_.vocab_size}, true);
}

std::vector<std::pair<std::string, Tensor>> DecoderState::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("embedding", embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l);
    const LayerParams& layer = layers[l];
    append_attention(out, prefix + ".self_attn", layer.self_attn);
    for (std::size_t k = 0; k < layer.cross_attn.size(); ++k) {
      append_attention(out, prefix + ".cross_attn." + std::to_string(k), layer.cross_attn[k]);
    }
    out.emplace_back(prefix + ".ff.ln_gain", layer.ff_ln_gain);
    out.emplace_back(prefix + ".ff.ln_bias", layer.ff_ln_bias);
    out.emplace_back(prefix + ".ff.w1", layer.w1);
    out.emplace_back(prefix + ".ff.b1", layer.b1);
    out.emplace_back(prefix + ".ff.w2", layer.w2);
    out.emplace_back(prefix + ".ff.b2", layer.b2);
  }
  out.emplace_back("final_ln.gain", final_ln_gain);
  out.emplace_back("final_ln.bias", final_ln_bias);
  out.emplace_back("out_proj.weight", out_proj);
  out.emplace_back("out_proj.bias", out_bias);
  return out;
}

std::vector<Tensor> DecoderState::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t DecoderState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void DecoderState::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

DecoderState DecoderState::clone() const {
  DecoderState copy = *this;
  copy.embedding = copy_param(embedding);
  for (auto& layer : copy.layers) {
    layer.self_attn = copy_attention(layer.self_attn);
    for (auto& c : layer.cross_attn) c = copy_attention(c);
    layer.ff_ln_gain = copy_param(layer.ff_ln_gain);
    layer.ff_ln_bias = copy_param(layer.ff_ln_bias);
    layer.w1 = copy_param(layer.w1);
    layer.b1 = copy_param(layer.b1);
    layer.w2 = copy_param(layer.w2);
    layer.b2 = copy_param(layer.b2);
  }
  copy.final_ln_gain = copy_param(final_ln_gain);
  copy.final_ln_bias = copy_param(final_ln_bias);
  copy.out_proj = copy_param(out_proj);
  copy.out_bias = copy_param(out_bias);
  return copy;
}

void save_checkpoint(const DecoderState& state, const std::filesystem::path& path,
                     const std::string& extra_json) {
  TensorFile file;
  json meta = {{"format", "gritcap-decoder"},
               {"config", json::parse(state.config().to_json())},
               {"seed", state.seed()}};
  if (!extra_json.empty()) {
    try {
      meta["extra"] = json::parse(extra_json);
    } catch (const json::parse_error& e) {
      throw ParseError("checkpoint extra metadata is not JSON", e.byte);
    }
  }
  file.metadata = meta.dump();
  file.entries = state.named_parameters();
  save_tensor_file(file, path);
}

DecoderState load_checkpoint(const std::filesystem::path& path, std::string* extra_json) {
  const TensorFile file = load_tensor_file(path);
  json meta;
  try {
    meta = json::parse(file.metadata);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": checkpoint metadata is not JSON", e.byte);
  }
  if (!meta.is_object() || !meta.contains("config") || !meta.contains("seed")) {
    throw ValidationError(path.string() + ": checkpoint metadata needs \"config\" and \"seed\"");
  }
  DecoderState state(DecoderConfig::from_json(meta.at("config").dump()),
                     meta.at("seed").get<std::uint64_t>());
  auto params = state.named_parameters();
  if (file.entries.size() != params.size()) {
    throw ValidationError(path.string() + ": checkpoint holds " + std::to_string(file.entries.size()) +
                          " tensors, config expects " + std::to_string(params.size()));
  }
  for (auto& [name, param] : params) {
    const Tensor& stored = file.at(name);
    if (stored.shape() != param.shape()) {
      throw ValidationError(path.string() + ": \"" + name + "\" has shape " +
                            shape_to_string(stored.shape()) + ", config expects " +
                            shape_to_string(param.shape()));
    }
    std::copy(stored.values().begin(), stored.values().end(), param.mutable_values().begin());
  }
  if (extra_json) *extra_json = meta.contains("extra") ? meta["extra"].dump() : std::string();
  return state;
}

// ---------------------------------------------------------------------------
// Forward pass

Tensor sinusoidal_embedding(std::size_t t, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw ValidationError("sinusoidal_embedding: d must be a positive even number, got " + std::to_string(d));
  }
  std::vector<double> v(d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double angle = static_cast<double>(t) /
                         std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
    v[2 * i] = std::sin(angle);
    v[2 * i + 1] = std::cos(angle);
  }
  return Tensor({d}, std::move(v));
}

Tensor input_embedding(std::span<const TokenId> ids, const DecoderState& state) {
  const std::size_t d = state.config().d;
  if (ids.empty()) throw ValidationError("input_embedding: empty id sequence");
  Tensor tokens = gather_rows(state.embedding, ids);
  std::vector<double> pos(ids.size() * d);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const Tensor row = sinusoidal_embedding(t, d);
    std::copy(row.values().begin(), row.values().end(), pos.begin() + static_cast<std::ptrdiff_t>(t * d));
  }
  return add(tokens, Tensor({ids.size(), d}, std::move(pos)));
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& memory,
                            const AttentionParams& params, std::size_t n_heads,
                            const Tensor& mask) {
  const std::size_t d = queries.dim(1);
  if (memory.rank() != 2 || memory.dim(1) != d) {
    throw ValidationError("attention: queries " + shape_to_string(queries.shape()) +
                          " and memory " + shape_to_string(memory.shape()) + " differ in width");
  }
  const std::size_t dk = d / n_heads;
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor q = matmul(queries, params.wq);
  const Tensor k = matmul(memory, params.wk);
  const Tensor v = matmul(memory, params.wv);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const Tensor qh = slice_cols(q, h * dk, dk);
    const Tensor kh = slice_cols(k, h * dk, dk);
    const Tensor vh = slice_cols(v, h * dk, dk);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    if (mask.defined()) scores = add(scores, mask);
    heads.push_back(matmul(softmax(scores), vh));
  }
  const Tensor merged = n_heads == 1 ? heads.front() : concat_cols(heads);
  return add_bias(matmul(merged, params.wo), params.bo);
}

Tensor decoder_layer(const Tensor& x, const FeatureBundle& features, const LayerParams& params,
                     const DecoderConfig& config, const Tensor& mask) {
  if (x.rank() != 2 || x.dim(1) != config.d) {
    throw ValidationError("decoder_layer: input shape " + shape_to_string(x.shape()) +
                          " does not match model width " + std::to_string(config.d));
  }
  if (params.cross_attn.size() != config.cross_order.size()) {
    throw ValidationError("decoder_layer: parameters hold " + std::to_string(params.cross_attn.size()) +
                          " cross-attention blocks, config lists " +
                          std::to_string(config.cross_order.size()));
  }
  const double eps = config.ln_eps;
  const AttentionParams& sa = params.self_attn;
  Tensor h = layer_norm(x, sa.ln_gain, sa.ln_bias, eps);
  Tensor out = add(x, multi_head_attention(h, h, sa, config.n_heads, mask));
  for (std::size_t k = 0; k < config.cross_order.size(); ++k) {
    const AttentionParams& ca = params.cross_attn[k];
    h = layer_norm(out, ca.ln_gain, ca.ln_bias, eps);
    out = add(out, multi_head_attention(h, features.get(config.cross_order[k]), ca,
                                        config.n_heads, Tensor()));
  }
  h = layer_norm(out, params.ff_ln_gain, params.ff_ln_bias, eps);
  const Tensor hidden = relu(add_bias(matmul(h, params.w1), params.b1));
  return add(out, add_bias(matmul(hidden, params.w2), params.b2));
}

Tensor forward(std::span<const TokenId> ids, const FeatureBundle& features,
               const DecoderState& state) {
  const DecoderConfig& config = state.config();
  if (ids.empty()) throw ValidationError("forward: empty id sequence");
  if (ids.size() > config.max_len) {
    throw ValidationError("forward: sequence length " + std::to_string(ids.size()) +
                          " exceeds max_len " + std::to_string(config.max_len));
  }
  features.validate(config.d);
  Tensor x = input_embedding(ids, state);
  const Tensor mask = causal_mask(ids.size());
  for (const auto& layer : state.layers) x = decoder_layer(x, features, layer, config, mask);
  x = layer_norm(x, state.final_ln_gain, state.final_ln_bias, config.ln_eps);
  return add_bias(matmul(x, state.out_proj), state.out_bias);
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

bool allowed(TokenId id, const DecodeOptions& options) {
  return !(options.ban_pad_and_bos && (id == kPadId || id == kBosId));
}

// Log-probabilities of the next token after `ids`.
std::vector<double> next_log_probs(const std::vector<TokenId>& ids, const FeatureBundle& features,
                                   const DecoderState& state) {
  const Tensor logits = forward(ids, features, state);
  const std::size_t v = logits.dim(1);
  const Tensor last({1, v}, std::vector<double>(logits.values().end() - static_cast<std::ptrdiff_t>(v),
                                                logits.values().end()));
  const Tensor lp = log_softmax(last);
  return {lp.values().begin(), lp.values().end()};
}

}  // namespace

std::vector<TokenId> generate_greedy(const FeatureBundle& features, const DecoderState& state,
                                     std::size_t max_new_tokens, const DecodeOptions& options) {
  max_new_tokens = std::min(max_new_tokens, state.config().max_len);
  std::vector<TokenId> ids{kBosId};
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    const std::vector<double> lp = next_log_probs(ids, features, state);
    TokenId best = -1;
    for (std::size_t tok = 0; tok < lp.size(); ++tok) {
      const auto id = static_cast<TokenId>(tok);
      if (!allowed(id, options)) continue;
      if (best < 0 || lp[tok] > lp[static_cast<std::size_t>(best)]) best = id;
    }
    ids.push_back(best);
    if (best == kEosId) break;
  }
  return ids;
}

double Hypothesis::normalized() const {
  const std::size_t generated = ids.size() > 1 ? ids.size() - 1 : 1;
  return log_prob / static_cast<double>(generated);
}

Hypothesis generate_beam(const FeatureBundle& features, const DecoderState& state,
                         std::size_t beam_size, std::size_t max_new_tokens,
                         const DecodeOptions& options) {
  if (beam_size < 1) throw ValidationError("generate_beam: beam_size must be >= 1");
  max_new_tokens = std::min(max_new_tokens, state.config().max_len);

  struct Expansion {
    Hypothesis hyp;
    double step_log_prob;
  };
  std::vector<Hypothesis> active{Hypothesis{{kBosId}, 0.0}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < max_new_tokens && !active.empty(); ++step) {
    std::vector<Expansion> expansions;
    for (const auto& beam : active) {
      const std::vector<double> lp = next_log_probs(beam.ids, features, state);
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        const auto id = static_cast<TokenId>(tok);
        if (!allowed(id, options)) continue;
        Expansion e{beam, lp[tok]};
        e.hyp.ids.push_back(id);
        e.hyp.log_prob += lp[tok];
        expansions.push_back(std::move(e));
      }
    }
    // All expansions have the same length here, so raw log-probability orders
    // them exactly as the normalized score does. The step term breaks rounding
    // ties the way greedy argmax would.
    std::stable_sort(expansions.begin(), expansions.end(), [](const Expansion& a, const Expansion& b) {
      if (a.hyp.log_prob != b.hyp.log_prob) return a.hyp.log_prob > b.hyp.log_prob;
      return a.step_log_prob > b.step_log_prob;
    });
    if (expansions.size() > beam_size) expansions.resize(beam_size);
    active.clear();
    const bool last_step = step + 1 == max_new_tokens;
    for (auto& e : expansions) {
      if (e.hyp.ids.back() == kEosId || last_step) {
        finished.push_back(std::move(e.hyp));
      } else {
        active.push_back(std::move(e.hyp));
      }
    }
  }
  if (finished.empty()) return Hypothesis{{kBosId}, 0.0};
  const Hypothesis* best = &finished.front();
  for (const auto& h : finished) {
    if (h.normalized() > best->normalized()) best = &h;
  }
  return *best;
}

double sequence_log_prob(std::span<const TokenId> ids, const FeatureBundle& features,
                         const DecoderState& state) {
  if (ids.size() < 2) return 0.0;
  const Tensor lp = log_softmax(forward(ids.first(ids.size() - 1), features, state));
  const std::size_t v = lp.dim(1);
  double total = 0.0;
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    const auto next = ids[t + 1];
    if (next < 0 || static_cast<std::size_t>(next) >= v) {
      throw ValidationError("sequence_log_prob: id " + std::to_string(next) + " out of range");
    }
    total += lp.values()[t * v + static_cast<std::size_t>(next)];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Training

void SgdOptimizer::step(std::span<Tensor> params) {
  if (velocity_.size() != params.size()) velocity_.assign(params.size(), {});
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].has_grad()) continue;
    auto values = params[p].mutable_values();
    auto grad = params[p].mutable_grad();
    if (momentum_ == 0.0) {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr_ * grad[i];
      continue;
    }
    auto& vel = velocity_[p];
    if (vel.size() != values.size()) vel.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      vel[i] = momentum_ * vel[i] + grad[i];
      values[i] -= lr_ * vel[i];
    }
  }
}

void AdamOptimizer::step(std::span<Tensor> params) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].has_grad()) continue;
    auto values = params[p].mutable_values();
    auto grad = params[p].mutable_grad();
    auto& m = m_[p];
    auto& v = v_[p];
    if (m.size() != values.size()) {
      m.assign(values.size(), 0.0);
      v.assign(values.size(), 0.0);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      values[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

Tensor batch_loss(std::span<const TrainingExample> batch, const DecoderState& state) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  std::size_t total_targets = 0;
  for (const auto& ex : batch) {
    if (ex.ids.size() < 2) throw ValidationError("batch_loss: caption needs at least BOS and EOS");
    for (std::size_t t = 1; t < ex.ids.size(); ++t) total_targets += ex.ids[t] != kPadId;
  }
  if (total_targets == 0) throw ValidationError("batch_loss: every target is padding");

  Tensor loss;
  for (const auto& ex : batch) {
    const std::span<const TokenId> ids(ex.ids);
    const auto inputs = ids.first(ids.size() - 1);
    const auto targets = ids.subspan(1);
    std::size_t n = 0;
    for (auto t : targets) n += t != kPadId;
    if (n == 0) continue;
    const Tensor ce = cross_entropy(forward(inputs, ex.features, state), targets, kPadId);
    const Tensor weighted = scale(ce, static_cast<double>(n) / static_cast<double>(total_targets));
    loss = loss.defined() ? add(loss, weighted) : weighted;
  }
  return loss;
}

double train_step(std::span<const TrainingExample> batch, DecoderState& state,
                  Optimizer& optimizer) {
  state.zero_grad();
  Graph graph;
  Tensor loss;
  {
    auto recording = graph.record();
    loss = batch_loss(batch, state);
  }
  graph.backward(loss);
  std::vector<Tensor> params = state.parameters();
  optimizer.step(params);
  return loss.item();
}

}  // namespace gritcap
