#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "sttk/audio.hpp"
#include "sttk/rng.hpp"
#include "sttk/tensor.hpp"

namespace sttk {

enum class Variant { baseline, conformer, conformer_rpe, sate };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::baseline;
  size_t enc_layers = 12;
  size_t dec_layers = 6;
  // SATE split of the encoder; must sum to enc_layers for the sate variant.
  size_t acoustic_layers = 8;
  size_t textual_layers = 4;
  size_t hidden = 256;
  size_t heads = 4;
  size_t ffn = 2048;
  double dropout = 0.1;
  double attn_dropout = 0.1;
  double act_dropout = 0.1;
  bool prenorm = true;
  bool dlcl = true;
  size_t rpe_enc_max = 100;
  size_t rpe_dec_max = 20;
  size_t conv_kernel = 7;
  size_t vocab_size = 200;
  // Sinusoidal positions on decoder embeddings (encoder always gets them).
  bool decoder_abs_pos = true;
  // Adds softmax(ctc_logits) x decoder embedding table to the adaptor output.
  bool adaptor_embed_mix = false;

  bool uses_conformer() const { return variant != Variant::baseline; }
  bool uses_rpe() const { return variant == Variant::conformer_rpe || variant == Variant::sate; }
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Architecture rows used for the ablation ladder (12-layer encoder, 6-layer
// decoder, 256 hidden, 4 heads, 2048 FFN; SATE split 8 + 4).
ModelConfig ladder_config(Variant v);
// Full system: 12 conformer + 6 transformer encoder layers, 6 decoder
// layers, 512 hidden, 8 heads, 2048 FFN.
ModelConfig full_system_config();

// Forward-pass mode: dropout is active only when training.
struct ForwardContext {
  bool training = false;
  RngStream* rng = nullptr;

  Tensor drop(const Tensor& x, double p) const;
};

// Ordered, uniquely named trainable tensors.
class ParameterSet {
 public:
  Tensor create(const std::string& name, Shape shape, std::vector<double> values);
  Tensor xavier(const std::string& name, Shape shape, size_t fan_in, size_t fan_out,
                RngStream& rng);
  Tensor constant(const std::string& name, Shape shape, double value);
  Tensor normal(const std::string& name, Shape shape, double stddev, RngStream& rng);

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  Tensor find(const std::string& name) const;
  void zero_grad();
  size_t count() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, size_t in, size_t out, RngStream& rng);
  Tensor operator()(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }
};

struct LayerNorm {
  Tensor gain, bias;

  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& name, size_t dim);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, 1e-5); }
};

enum class Activation { relu, swish };

struct FeedForward {
  Linear in, out;
  Activation act = Activation::relu;
  double act_dropout = 0.0;

  FeedForward() = default;
  FeedForward(ParameterSet& ps, const std::string& name, size_t hidden, size_t ffn,
              Activation act, double act_dropout, RngStream& rng);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx) const;
};

// Clipped relative offset j - i mapped to an embedding row in [0, 2*max_rel].
size_t relative_index(long i, long j, size_t max_rel);

// Multi-head attention with optional relative position representations on
// keys and values (shared across heads). max_rel == 0 disables them.
struct MultiHeadAttention {
  Linear q, k, v, o;
  size_t heads = 1;
  size_t max_rel = 0;
  Tensor rel_k, rel_v;  // [(2*max_rel+1) x head_dim]
  double attn_dropout = 0.0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& ps, const std::string& name, size_t hidden, size_t heads,
                     size_t max_rel, double attn_dropout, RngStream& rng);
  Tensor operator()(const Tensor& query, const Tensor& memory, bool causal,
                    const ForwardContext& ctx) const;
};

// Attention core on already projected single-head inputs, exposed for tests.
// q [Tq x d], k/v [Tk x d], rel_k/rel_v [(2R+1) x d] or undefined.
Tensor relative_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                          size_t max_rel, const Tensor& rel_k, const Tensor& rel_v,
                          bool causal, double attn_dropout = 0.0,
                          const ForwardContext& ctx = {});

std::vector<double> sinusoidal_table(size_t length, size_t dim);
Tensor add_absolute_positions(const Tensor& x);

class EncoderBlock {
 public:
  virtual ~EncoderBlock() = default;
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) const = 0;
};

// Pre-norm: y = x + Attn(LN(x)); y = y + FFN(LN(y)). Post-norm when
// prenorm is off.
class TransformerEncoderLayer : public EncoderBlock {
 public:
  TransformerEncoderLayer(ParameterSet& ps, const std::string& name, const ModelConfig& cfg,
                          size_t max_rel, RngStream& rng);
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;

  LayerNorm attn_norm, ffn_norm;
  MultiHeadAttention attn;
  FeedForward ffn;
  double dropout;
  bool prenorm;
};

// Pointwise conv (2x) -> GLU -> depthwise conv -> LN -> Swish -> pointwise.
struct ConvModule {
  Linear pointwise_in, pointwise_out;
  Tensor depthwise_weight, depthwise_bias;
  LayerNorm norm;
  size_t kernel = 1;

  ConvModule() = default;
  ConvModule(ParameterSet& ps, const std::string& name, size_t hidden, size_t kernel,
             RngStream& rng);
  Tensor operator()(const Tensor& x, const ForwardContext& ctx, double dropout) const;
};

// s = x + 1/2 FFN1(LN(x)); c = s + Attn(LN(s)); u = c + Conv(LN(c));
// y = LN(u + 1/2 FFN2(LN(u))).
class ConformerBlock : public EncoderBlock {
 public:
  ConformerBlock(ParameterSet& ps, const std::string& name, const ModelConfig& cfg,
                 size_t max_rel, RngStream& rng);
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;

  LayerNorm ffn1_norm, attn_norm, conv_norm, ffn2_norm, final_norm;
  FeedForward ffn1, ffn2;
  MultiHeadAttention attn;
  ConvModule conv;
  double dropout;
  // Skips the closing LN (identity checks only).
  bool bypass_final_norm = false;
};

// y = sum_{k<=row} w[row][k] * LN_k(outputs[k]).
Tensor dlcl_combine(std::span<const Tensor> outputs, const Tensor& weights, size_t row,
                    std::span<const LayerNorm> norms);

// Stack of blocks joined by dynamic linear combination of layers (or plain
// stacking plus a final LN).
class EncoderStack {
 public:
  EncoderStack(ParameterSet& ps, const std::string& name, const ModelConfig& cfg,
               std::vector<std::unique_ptr<EncoderBlock>> blocks, RngStream& rng);
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

  std::vector<std::unique_ptr<EncoderBlock>> blocks;
  bool dlcl;
  Tensor dlcl_weights;  // [(N+1) x (N+1)], lower triangular
  std::vector<LayerNorm> dlcl_norms;
  LayerNorm final_norm;
  bool apply_final_norm;
};

// Two kernel-3 stride-2 convolutions with ReLU: T -> ceil(ceil(T/2)/2).
struct ConvDownsampler {
  Tensor w1, b1, w2, b2;

  ConvDownsampler() = default;
  ConvDownsampler(ParameterSet& ps, const std::string& name, size_t hidden, RngStream& rng);
  Tensor operator()(const Tensor& features) const;
};

size_t downsampled_length(size_t frames);
Tensor feature_tensor(const FeatureMatrix& f);

struct EncoderOutput {
  Tensor memory;      // [T' x hidden]
  Tensor ctc_logits;  // [T' x vocab]
  size_t out_length = 0;
};

struct DecoderLayer {
  LayerNorm self_norm, cross_norm, ffn_norm;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;
};

class SpeechTranslationModel {
 public:
  SpeechTranslationModel(const ModelConfig& cfg, uint64_t seed);
  SpeechTranslationModel(const SpeechTranslationModel&) = delete;
  SpeechTranslationModel& operator=(const SpeechTranslationModel&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  EncoderOutput encode(const FeatureMatrix& f, const ForwardContext& ctx = {}) const;
  // Logits [prefix.size() x vocab]; row t depends only on prefix[0..t].
  Tensor decoder_logits(const Tensor& memory, std::span<const int> prefix,
                        const ForwardContext& ctx = {}) const;
  // Next-token logits after `prefix` (must start with bos), no graph kept.
  std::vector<double> decoder_step(const Tensor& memory, std::span<const int> prefix) const;

  // Sub-modules, exposed for inspection and tests.
  ConvDownsampler downsampler;
  std::unique_ptr<EncoderStack> encoder;    // whole encoder, or acoustic part for sate
  std::unique_ptr<EncoderStack> textual;    // sate only
  Linear ctc_head;
  Linear adaptor_proj;                      // sate only
  LayerNorm adaptor_norm;                   // sate only
  Tensor embed;                             // [vocab x hidden]
  std::vector<DecoderLayer> decoder_layers;
  LayerNorm decoder_final_norm;
  Linear output_proj;

 private:
  ModelConfig cfg_;
  ParameterSet params_;
};

}  // namespace sttk
