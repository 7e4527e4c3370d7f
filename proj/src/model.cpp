#include "sttk/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sttk/errors.hpp"
#include "sttk/text.hpp"

namespace sttk {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::conformer: return "conformer";
    case Variant::conformer_rpe: return "conformer_rpe";
    case Variant::sate: return "sate";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "baseline") return Variant::baseline;
  if (name == "conformer") return Variant::conformer;
  if (name == "conformer_rpe") return Variant::conformer_rpe;
  if (name == "sate") return Variant::sate;
  throw ConfigError("unknown model variant '" + name +
                    "' (expected baseline, conformer, conformer_rpe or sate)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (hidden == 0 || heads == 0 || ffn == 0) fail("hidden, heads and ffn must be positive");
  if (hidden % heads != 0) {
    fail("hidden " + std::to_string(hidden) + " is not divisible by heads " + std::to_string(heads));
  }
  if (dec_layers == 0) fail("dec_layers must be positive");
  if (variant == Variant::sate) {
    if (acoustic_layers == 0 || textual_layers == 0) fail("sate needs acoustic and textual layers");
    if (acoustic_layers + textual_layers != enc_layers) {
      fail("acoustic_layers + textual_layers (" + std::to_string(acoustic_layers + textual_layers) +
           ") must equal enc_layers (" + std::to_string(enc_layers) + ")");
    }
  } else if (enc_layers == 0) {
    fail("enc_layers must be positive");
  }
  for (double p : {dropout, attn_dropout, act_dropout}) {
    if (!(p >= 0.0 && p < 1.0)) fail("dropout probabilities must lie in [0, 1)");
  }
  if (uses_rpe() && (rpe_enc_max == 0 || rpe_dec_max == 0)) fail("relative position radii must be >= 1");
  if (uses_conformer() && conv_kernel % 2 == 0) fail("conv_kernel must be odd");
  if (vocab_size < 6) fail("vocab_size must be at least 6");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"enc_layers", c.enc_layers},
                     {"dec_layers", c.dec_layers},
                     {"acoustic_layers", c.acoustic_layers},
                     {"textual_layers", c.textual_layers},
                     {"hidden", c.hidden},
                     {"heads", c.heads},
                     {"ffn", c.ffn},
                     {"dropout", c.dropout},
                     {"attn_dropout", c.attn_dropout},
                     {"act_dropout", c.act_dropout},
                     {"prenorm", c.prenorm},
                     {"dlcl", c.dlcl},
                     {"rpe_enc_max", c.rpe_enc_max},
                     {"rpe_dec_max", c.rpe_dec_max},
                     {"conv_kernel", c.conv_kernel},
                     {"vocab_size", c.vocab_size},
                     {"decoder_abs_pos", c.decoder_abs_pos},
                     {"adaptor_embed_mix", c.adaptor_embed_mix}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
  get("enc_layers", c.enc_layers);
  get("dec_layers", c.dec_layers);
  get("acoustic_layers", c.acoustic_layers);
  get("textual_layers", c.textual_layers);
  get("hidden", c.hidden);
  get("heads", c.heads);
  get("ffn", c.ffn);
  get("dropout", c.dropout);
  get("attn_dropout", c.attn_dropout);
  get("act_dropout", c.act_dropout);
  get("prenorm", c.prenorm);
  get("dlcl", c.dlcl);
  get("rpe_enc_max", c.rpe_enc_max);
  get("rpe_dec_max", c.rpe_dec_max);
  get("conv_kernel", c.conv_kernel);
  get("vocab_size", c.vocab_size);
  get("decoder_abs_pos", c.decoder_abs_pos);
  get("adaptor_embed_mix", c.adaptor_embed_mix);
}

ModelConfig ladder_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.enc_layers = 12;
  c.dec_layers = 6;
  c.hidden = 256;
  c.heads = 4;
  c.ffn = 2048;
  c.acoustic_layers = 8;
  c.textual_layers = 4;
  return c;
}

ModelConfig full_system_config() {
  ModelConfig c;
  c.variant = Variant::sate;
  c.enc_layers = 18;
  c.acoustic_layers = 12;
  c.textual_layers = 6;
  c.dec_layers = 6;
  c.hidden = 512;
  c.heads = 8;
  c.ffn = 2048;
  return c;
}

Tensor ForwardContext::drop(const Tensor& x, double p) const {
  if (!training || p <= 0.0) return x;
  if (!rng) throw ContractError("training forward pass needs an RngStream");
  return dropout(x, p, *rng, true);
}

// ---- parameters -------------------------------------------------------------

Tensor ParameterSet::create(const std::string& name, Shape shape, std::vector<double> values) {
  for (const auto& [n, t] : entries_) {
    if (n == name) throw ContractError("duplicate parameter name " + name);
  }
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterSet::xavier(const std::string& name, Shape shape, size_t fan_in, size_t fan_out,
                            RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> values(numel(shape));
  for (double& v : values) v = (2.0 * rng.uniform() - 1.0) * limit;
  return create(name, std::move(shape), std::move(values));
}

Tensor ParameterSet::constant(const std::string& name, Shape shape, double value) {
  const size_t n = numel(shape);
  return create(name, std::move(shape), std::vector<double>(n, value));
}

Tensor ParameterSet::normal(const std::string& name, Shape shape, double stddev, RngStream& rng) {
  std::vector<double> values(numel(shape));
  for (double& v : values) v = rng.normal(0.0, stddev);
  return create(name, std::move(shape), std::move(values));
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [n, t] : entries_) out.push_back(t);
  return out;
}

Tensor ParameterSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

void ParameterSet::zero_grad() {
  for (auto& [n, t] : entries_) t.zero_grad();
}

size_t ParameterSet::count() const {
  size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

// ---- building blocks --------------------------------------------------------

Linear::Linear(ParameterSet& ps, const std::string& name, size_t in, size_t out, RngStream& rng)
    : weight(ps.xavier(name + ".weight", {in, out}, in, out, rng)),
      bias(ps.constant(name + ".bias", {out}, 0.0)) {}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, size_t dim)
    : gain(ps.constant(name + ".gain", {dim}, 1.0)),
      bias(ps.constant(name + ".bias", {dim}, 0.0)) {}

FeedForward::FeedForward(ParameterSet& ps, const std::string& name, size_t hidden, size_t ffn,
                         Activation act, double act_dropout, RngStream& rng)
    : in(ps, name + ".fc1", hidden, ffn, rng),
      out(ps, name + ".fc2", ffn, hidden, rng),
      act(act),
      act_dropout(act_dropout) {}

Tensor FeedForward::operator()(const Tensor& x, const ForwardContext& ctx) const {
  Tensor h = in(x);
  h = act == Activation::relu ? relu(h) : swish(h);
  return out(ctx.drop(h, act_dropout));
}

size_t relative_index(long i, long j, size_t max_rel) {
  const long r = static_cast<long>(max_rel);
  return static_cast<size_t>(std::clamp(j - i, -r, r) + r);
}

Tensor relative_attention(const Tensor& q, const Tensor& k, const Tensor& v, size_t max_rel,
                          const Tensor& rel_k, const Tensor& rel_v, bool causal,
                          double attn_dropout, const ForwardContext& ctx) {
  const size_t tq = q.dim(0), tk = k.dim(0), d = q.dim(1);
  const bool use_rel = max_rel > 0 && rel_k.defined() && rel_v.defined();

  Tensor scores = matmul(q, transpose(k));
  std::vector<long> index;
  long lo = 0;
  size_t window = 0;
  if (use_rel) {
    // Only offsets reachable for this (tq, tk) are materialized.
    const long r = static_cast<long>(max_rel);
    lo = std::max(-r, -static_cast<long>(tq - 1));
    const long hi = std::min(r, static_cast<long>(tk - 1));
    window = static_cast<size_t>(hi - lo + 1);
    index.resize(tq * tk);
    for (size_t i = 0; i < tq; ++i) {
      for (size_t j = 0; j < tk; ++j) {
        const long rel = static_cast<long>(relative_index(static_cast<long>(i),
                                                          static_cast<long>(j), max_rel)) - r;
        index[i * tk + j] = static_cast<long>(i * window) + (rel - lo);
      }
    }
    const Tensor rk = slice_rows(rel_k, static_cast<size_t>(lo + r), window);
    const Tensor qa = matmul(q, transpose(rk));
    scores = add(scores, gather(qa, index, {tq, tk}));
  }
  scores = scale(scores, 1.0 / std::sqrt(static_cast<double>(d)));
  if (causal) {
    std::vector<double> mask(tq * tk, 0.0);
    for (size_t i = 0; i < tq; ++i)
      for (size_t j = i + 1; j < tk; ++j) mask[i * tk + j] = -std::numeric_limits<double>::infinity();
    scores = add_constant(scores, mask);
  }
  Tensor weights = ctx.drop(softmax(scores, 1), attn_dropout);
  Tensor out = matmul(weights, v);
  if (use_rel) {
    const long r = static_cast<long>(max_rel);
    const Tensor per_offset = scatter_add(weights, index, {tq, window});
    const Tensor rv = slice_rows(rel_v, static_cast<size_t>(lo + r), window);
    out = add(out, matmul(per_offset, rv));
  }
  return out;
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& ps, const std::string& name, size_t hidden,
                                       size_t heads, size_t max_rel, double attn_dropout,
                                       RngStream& rng)
    : q(ps, name + ".q", hidden, hidden, rng),
      k(ps, name + ".k", hidden, hidden, rng),
      v(ps, name + ".v", hidden, hidden, rng),
      o(ps, name + ".o", hidden, hidden, rng),
      heads(heads),
      max_rel(max_rel),
      attn_dropout(attn_dropout) {
  if (max_rel > 0) {
    const size_t head_dim = hidden / heads;
    rel_k = ps.xavier(name + ".rel_k", {2 * max_rel + 1, head_dim}, 2 * max_rel + 1, head_dim, rng);
    rel_v = ps.xavier(name + ".rel_v", {2 * max_rel + 1, head_dim}, 2 * max_rel + 1, head_dim, rng);
  }
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory, bool causal,
                                      const ForwardContext& ctx) const {
  const Tensor qs = q(query), ks = k(memory), vs = v(memory);
  const size_t head_dim = qs.dim(1) / heads;
  if (heads == 1) {
    return o(relative_attention(qs, ks, vs, max_rel, rel_k, rel_v, causal, attn_dropout, ctx));
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (size_t h = 0; h < heads; ++h) {
    outs.push_back(relative_attention(slice_cols(qs, h * head_dim, head_dim),
                                      slice_cols(ks, h * head_dim, head_dim),
                                      slice_cols(vs, h * head_dim, head_dim), max_rel, rel_k,
                                      rel_v, causal, attn_dropout, ctx));
  }
  return o(concat_cols(outs));
}

std::vector<double> sinusoidal_table(size_t length, size_t dim) {
  std::vector<double> table(length * dim);
  for (size_t pos = 0; pos < length; ++pos) {
    for (size_t i = 0; i < dim; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(dim);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
      table[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return table;
}

Tensor add_absolute_positions(const Tensor& x) {
  const auto table = sinusoidal_table(x.dim(0), x.dim(1));
  return add_constant(x, table);
}

// ---- encoder blocks ---------------------------------------------------------

TransformerEncoderLayer::TransformerEncoderLayer(ParameterSet& ps, const std::string& name,
                                                 const ModelConfig& cfg, size_t max_rel,
                                                 RngStream& rng)
    : attn_norm(ps, name + ".attn_norm", cfg.hidden),
      ffn_norm(ps, name + ".ffn_norm", cfg.hidden),
      attn(ps, name + ".attn", cfg.hidden, cfg.heads, max_rel, cfg.attn_dropout, rng),
      ffn(ps, name + ".ffn", cfg.hidden, cfg.ffn, Activation::relu, cfg.act_dropout, rng),
      dropout(cfg.dropout),
      prenorm(cfg.prenorm) {}

Tensor TransformerEncoderLayer::forward(const Tensor& x, const ForwardContext& ctx) const {
  if (prenorm) {
    const Tensor n1 = attn_norm(x);
    const Tensor h = add(x, ctx.drop(attn(n1, n1, false, ctx), dropout));
    return add(h, ctx.drop(ffn(ffn_norm(h), ctx), dropout));
  }
  const Tensor h = attn_norm(add(x, ctx.drop(attn(x, x, false, ctx), dropout)));
  return ffn_norm(add(h, ctx.drop(ffn(h, ctx), dropout)));
}

ConvModule::ConvModule(ParameterSet& ps, const std::string& name, size_t hidden, size_t kernel,
                       RngStream& rng)
    : pointwise_in(ps, name + ".pointwise_in", hidden, 2 * hidden, rng),
      pointwise_out(ps, name + ".pointwise_out", hidden, hidden, rng),
      depthwise_weight(ps.xavier(name + ".depthwise.weight", {kernel, hidden}, kernel, kernel, rng)),
      depthwise_bias(ps.constant(name + ".depthwise.bias", {hidden}, 0.0)),
      norm(ps, name + ".norm", hidden),
      kernel(kernel) {}

Tensor ConvModule::operator()(const Tensor& x, const ForwardContext& ctx, double dropout) const {
  Tensor h = glu(pointwise_in(x));
  h = conv1d(h, depthwise_weight, depthwise_bias, {kernel, 1, (kernel - 1) / 2, true});
  h = swish(norm(h));
  return ctx.drop(pointwise_out(h), dropout);
}

ConformerBlock::ConformerBlock(ParameterSet& ps, const std::string& name, const ModelConfig& cfg,
                               size_t max_rel, RngStream& rng)
    : ffn1_norm(ps, name + ".ffn1_norm", cfg.hidden),
      attn_norm(ps, name + ".attn_norm", cfg.hidden),
      conv_norm(ps, name + ".conv_norm", cfg.hidden),
      ffn2_norm(ps, name + ".ffn2_norm", cfg.hidden),
      final_norm(ps, name + ".final_norm", cfg.hidden),
      ffn1(ps, name + ".ffn1", cfg.hidden, cfg.ffn, Activation::swish, cfg.act_dropout, rng),
      ffn2(ps, name + ".ffn2", cfg.hidden, cfg.ffn, Activation::swish, cfg.act_dropout, rng),
      attn(ps, name + ".attn", cfg.hidden, cfg.heads, max_rel, cfg.attn_dropout, rng),
      conv(ps, name + ".conv", cfg.hidden, cfg.conv_kernel, rng),
      dropout(cfg.dropout) {}

Tensor ConformerBlock::forward(const Tensor& x, const ForwardContext& ctx) const {
  const Tensor s = add(x, scale(ctx.drop(ffn1(ffn1_norm(x), ctx), dropout), 0.5));
  const Tensor ns = attn_norm(s);
  const Tensor c = add(s, ctx.drop(attn(ns, ns, false, ctx), dropout));
  const Tensor u = add(c, conv(conv_norm(c), ctx, dropout));
  const Tensor y = add(u, scale(ctx.drop(ffn2(ffn2_norm(u), ctx), dropout), 0.5));
  return bypass_final_norm ? y : final_norm(y);
}

Tensor dlcl_combine(std::span<const Tensor> outputs, const Tensor& weights, size_t row,
                    std::span<const LayerNorm> norms) {
  if (row >= outputs.size() || norms.size() < outputs.size() || weights.rank() != 2 ||
      row >= weights.dim(0) || outputs.size() > weights.dim(1)) {
    throw DimensionError("dlcl_combine: row " + std::to_string(row) + " needs " +
                         std::to_string(row + 1) + " outputs, norms and weight columns");
  }
  const size_t cols = weights.dim(1);
  Tensor acc = scale_by_element(norms[0](outputs[0]), weights, row * cols);
  for (size_t k = 1; k <= row; ++k) {
    acc = add(acc, scale_by_element(norms[k](outputs[k]), weights, row * cols + k));
  }
  return acc;
}

EncoderStack::EncoderStack(ParameterSet& ps, const std::string& name, const ModelConfig& cfg,
                           std::vector<std::unique_ptr<EncoderBlock>> blocks_in, RngStream&)
    : blocks(std::move(blocks_in)), dlcl(cfg.dlcl), apply_final_norm(!cfg.dlcl && cfg.prenorm) {
  const size_t n = blocks.size();
  if (dlcl) {
    std::vector<double> w((n + 1) * (n + 1), 0.0);
    for (size_t r = 0; r <= n; ++r)
      for (size_t k = 0; k <= r; ++k) w[r * (n + 1) + k] = 1.0 / static_cast<double>(r + 1);
    dlcl_weights = ps.create(name + ".dlcl.weights", {n + 1, n + 1}, std::move(w));
    for (size_t k = 0; k <= n; ++k) {
      dlcl_norms.emplace_back(ps, name + ".dlcl.norm" + std::to_string(k), cfg.hidden);
    }
  } else if (apply_final_norm) {
    final_norm = LayerNorm(ps, name + ".final_norm", cfg.hidden);
  }
}

Tensor EncoderStack::forward(const Tensor& x, const ForwardContext& ctx) const {
  if (!dlcl) {
    Tensor h = x;
    for (const auto& b : blocks) h = b->forward(h, ctx);
    return apply_final_norm ? final_norm(h) : h;
  }
  std::vector<Tensor> outputs{x};
  outputs.reserve(blocks.size() + 1);
  for (size_t l = 0; l < blocks.size(); ++l) {
    outputs.push_back(blocks[l]->forward(dlcl_combine(outputs, dlcl_weights, l, dlcl_norms), ctx));
  }
  return dlcl_combine(outputs, dlcl_weights, blocks.size(), dlcl_norms);
}

// ---- front end --------------------------------------------------------------

ConvDownsampler::ConvDownsampler(ParameterSet& ps, const std::string& name, size_t hidden,
                                 RngStream& rng)
    : w1(ps.xavier(name + ".conv1.weight", {3, kMelChannels, hidden}, 3 * kMelChannels,
                   3 * hidden, rng)),
      b1(ps.constant(name + ".conv1.bias", {hidden}, 0.0)),
      w2(ps.xavier(name + ".conv2.weight", {3, hidden, hidden}, 3 * hidden, 3 * hidden, rng)),
      b2(ps.constant(name + ".conv2.bias", {hidden}, 0.0)) {}

Tensor ConvDownsampler::operator()(const Tensor& features) const {
  const Conv1dSpec spec{3, 2, 1, false};
  return relu(conv1d(relu(conv1d(features, w1, b1, spec)), w2, b2, spec));
}

size_t downsampled_length(size_t frames) {
  const Conv1dSpec spec{3, 2, 1, false};
  return conv1d_output_length(conv1d_output_length(frames, spec), spec);
}

Tensor feature_tensor(const FeatureMatrix& f) {
  if (f.frames == 0) throw InputTooShortError("feature matrix has no frames");
  return Tensor::from({f.frames, FeatureMatrix::channels}, f.values);
}

// ---- full model -------------------------------------------------------------

SpeechTranslationModel::SpeechTranslationModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  RngStream rng(seed);
  ParameterSet& ps = params_;
  const size_t enc_rel = cfg_.uses_rpe() ? cfg_.rpe_enc_max : 0;
  const size_t dec_rel = cfg_.uses_rpe() ? cfg_.rpe_dec_max : 0;

  downsampler = ConvDownsampler(ps, "downsample", cfg_.hidden, rng);

  auto build_blocks = [&](const std::string& prefix, size_t count, bool conformer) {
    std::vector<std::unique_ptr<EncoderBlock>> blocks;
    for (size_t l = 0; l < count; ++l) {
      const std::string name = prefix + ".layer" + std::to_string(l);
      if (conformer) {
        blocks.push_back(std::make_unique<ConformerBlock>(ps, name, cfg_, enc_rel, rng));
      } else {
        blocks.push_back(std::make_unique<TransformerEncoderLayer>(ps, name, cfg_, enc_rel, rng));
      }
    }
    return blocks;
  };

  if (cfg_.variant == Variant::sate) {
    encoder = std::make_unique<EncoderStack>(
        ps, "acoustic", cfg_, build_blocks("acoustic", cfg_.acoustic_layers, true), rng);
  } else {
    encoder = std::make_unique<EncoderStack>(
        ps, "encoder", cfg_, build_blocks("encoder", cfg_.enc_layers, cfg_.uses_conformer()), rng);
  }
  ctc_head = Linear(ps, "ctc_head", cfg_.hidden, cfg_.vocab_size, rng);
  if (cfg_.variant == Variant::sate) {
    adaptor_proj = Linear(ps, "adaptor.proj", cfg_.hidden, cfg_.hidden, rng);
    adaptor_norm = LayerNorm(ps, "adaptor.norm", cfg_.hidden);
    textual = std::make_unique<EncoderStack>(
        ps, "textual", cfg_, build_blocks("textual", cfg_.textual_layers, false), rng);
  }

  embed = ps.normal("decoder.embed", {cfg_.vocab_size, cfg_.hidden},
                    1.0 / std::sqrt(static_cast<double>(cfg_.hidden)), rng);
  for (size_t l = 0; l < cfg_.dec_layers; ++l) {
    const std::string name = "decoder.layer" + std::to_string(l);
    DecoderLayer layer;
    layer.self_norm = LayerNorm(ps, name + ".self_norm", cfg_.hidden);
    layer.cross_norm = LayerNorm(ps, name + ".cross_norm", cfg_.hidden);
    layer.ffn_norm = LayerNorm(ps, name + ".ffn_norm", cfg_.hidden);
    layer.self_attn = MultiHeadAttention(ps, name + ".self_attn", cfg_.hidden, cfg_.heads, dec_rel,
                                         cfg_.attn_dropout, rng);
    layer.cross_attn = MultiHeadAttention(ps, name + ".cross_attn", cfg_.hidden, cfg_.heads, 0,
                                          cfg_.attn_dropout, rng);
    layer.ffn = FeedForward(ps, name + ".ffn", cfg_.hidden, cfg_.ffn, Activation::relu,
                            cfg_.act_dropout, rng);
    decoder_layers.push_back(std::move(layer));
  }
  if (cfg_.prenorm) decoder_final_norm = LayerNorm(ps, "decoder.final_norm", cfg_.hidden);
  output_proj = Linear(ps, "decoder.output", cfg_.hidden, cfg_.vocab_size, rng);
}

EncoderOutput SpeechTranslationModel::encode(const FeatureMatrix& f, const ForwardContext& ctx) const {
  Tensor h = downsampler(feature_tensor(f));
  h = ctx.drop(add_absolute_positions(h), cfg_.dropout);
  const Tensor acoustic = encoder->forward(h, ctx);

  EncoderOutput out;
  out.ctc_logits = ctc_head(acoustic);
  out.out_length = acoustic.dim(0);
  if (cfg_.variant != Variant::sate) {
    out.memory = acoustic;
    return out;
  }
  Tensor t = relu(adaptor_norm(adaptor_proj(acoustic)));
  if (cfg_.adaptor_embed_mix) t = add(t, matmul(softmax(out.ctc_logits, 1), embed));
  t = ctx.drop(add_absolute_positions(t), cfg_.dropout);
  out.memory = textual->forward(t, ctx);
  return out;
}

Tensor SpeechTranslationModel::decoder_logits(const Tensor& memory, std::span<const int> prefix,
                                              const ForwardContext& ctx) const {
  if (prefix.empty()) throw ContractError("decoder: empty prefix");
  Tensor h = scale(embedding(embed, prefix), std::sqrt(static_cast<double>(cfg_.hidden)));
  if (cfg_.decoder_abs_pos) h = add_absolute_positions(h);
  h = ctx.drop(h, cfg_.dropout);
  for (const auto& layer : decoder_layers) {
    if (cfg_.prenorm) {
      const Tensor n1 = layer.self_norm(h);
      h = add(h, ctx.drop(layer.self_attn(n1, n1, true, ctx), cfg_.dropout));
      h = add(h, ctx.drop(layer.cross_attn(layer.cross_norm(h), memory, false, ctx), cfg_.dropout));
      h = add(h, ctx.drop(layer.ffn(layer.ffn_norm(h), ctx), cfg_.dropout));
    } else {
      h = layer.self_norm(add(h, ctx.drop(layer.self_attn(h, h, true, ctx), cfg_.dropout)));
      h = layer.cross_norm(add(h, ctx.drop(layer.cross_attn(h, memory, false, ctx), cfg_.dropout)));
      h = layer.ffn_norm(add(h, ctx.drop(layer.ffn(h, ctx), cfg_.dropout)));
    }
  }
  if (cfg_.prenorm) h = decoder_final_norm(h);
  return output_proj(h);
}

std::vector<double> SpeechTranslationModel::decoder_step(const Tensor& memory,
                                                         std::span<const int> prefix) const {
  if (prefix.empty()) throw ContractError("decoder_step: empty prefix");
  if (prefix.front() != kBosId) throw ContractError("decoder_step: prefix must begin with bos");
  NoGradGuard no_grad;
  const Tensor logits = decoder_logits(memory, prefix);
  const size_t v = logits.dim(1);
  const auto data = logits.data();
  return {data.end() - static_cast<long>(v), data.end()};
}

}  // namespace sttk
