#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "sttk/errors.hpp"
#include "sttk/model.hpp"
#include "sttk/text.hpp"

using namespace sttk;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (size_t i = 0; i < t.dim(0); ++i)
    for (size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat affine(const Mat& x, const Mat& w, const std::vector<double>& b) {
  Mat y = mm(x, w);
  for (auto& row : y)
    for (size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return y;
}

Mat ln_rows(const Mat& x) {
  Mat y = x;
  for (auto& row : y) {
    double mean = 0.0, var = 0.0;
    for (double v : row) mean += v / static_cast<double>(row.size());
    for (double v : row) var += (v - mean) * (v - mean) / static_cast<double>(row.size());
    for (double& v : row) v = (v - mean) / std::sqrt(var + 1e-5);
  }
  return y;
}

Mat add_mats(const Mat& a, const Mat& b) {
  Mat c = a;
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
  return c;
}

void set_values(Tensor t, const std::vector<double>& v) {
  ASSERT_EQ(t.size(), v.size());
  std::copy(v.begin(), v.end(), t.mutable_data().begin());
}

void zero_where(ParameterSet& ps, const std::function<bool(const std::string&)>& pred) {
  for (auto [name, t] : ps.entries()) {
    if (!pred(name)) continue;
    for (double& x : t.mutable_data()) x = 0.0;
  }
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

ModelConfig small_config(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.enc_layers = 3;
  c.acoustic_layers = 2;
  c.textual_layers = 1;
  c.dec_layers = 2;
  c.hidden = 16;
  c.heads = 4;
  c.ffn = 32;
  c.dropout = c.attn_dropout = c.act_dropout = 0.0;
  c.rpe_enc_max = 3;
  c.rpe_dec_max = 2;
  c.conv_kernel = 5;
  c.vocab_size = 11;
  return c;
}

FeatureMatrix random_features(size_t frames, uint64_t seed) {
  RngStream rng(seed);
  FeatureMatrix f(frames);
  for (double& x : f.values) x = rng.normal();
  return f;
}

Tensor random_tensor(Shape s, RngStream& rng) {
  std::vector<double> v(numel(s));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(s), std::move(v));
}

void expect_same(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (size_t i = 0; i < a.size(); ++i) {
    if (tol == 0.0) {
      EXPECT_EQ(a.at(i), b.at(i)) << "element " << i;
    } else {
      EXPECT_NEAR(a.at(i), b.at(i), tol) << "element " << i;
    }
  }
}

}  // namespace

TEST(Downsampler, LengthLaw) {
  for (size_t t = 5; t <= 64; ++t) EXPECT_EQ(downsampled_length(t), ((t + 1) / 2 + 1) / 2) << t;
  EXPECT_EQ(downsampled_length(100), 25u);
  EXPECT_EQ(downsampled_length(7), 2u);
}

TEST(Downsampler, ZeroInputAndBiasGiveZeroOutput) {
  ParameterSet ps;
  RngStream rng(1);
  const ConvDownsampler d(ps, "ds", 8, rng);
  const Tensor y = d(Tensor::zeros({9, 80}));
  EXPECT_EQ(y.shape(), (Shape{3, 8}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Positions, SinusoidalClosedForm) {
  const auto table = sinusoidal_table(2, 4);
  EXPECT_EQ(table[0], 0.0);
  EXPECT_EQ(table[1], 1.0);
  EXPECT_DOUBLE_EQ(table[4], std::sin(1.0));
  EXPECT_DOUBLE_EQ(table[5], std::cos(1.0));
  EXPECT_DOUBLE_EQ(table[6], std::sin(1.0 / 100.0));
  EXPECT_DOUBLE_EQ(table[7], std::cos(1.0 / 100.0));
  EXPECT_EQ(sinusoidal_table(5, 6), sinusoidal_table(5, 6));
}

TEST(RelativeAttention, IndexClipping) {
  EXPECT_EQ(relative_index(0, 150, 100), 200u);
  EXPECT_EQ(relative_index(150, 0, 100), 0u);
  EXPECT_EQ(relative_index(7, 7, 100), 100u);
  EXPECT_EQ(relative_index(2, 5, 20), 23u);
}

TEST(RelativeAttention, MatchesElementwiseDefinition) {
  RngStream rng(31);
  for (bool causal : {false, true}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto tq = static_cast<size_t>(rng.uniform_int(1, 7));
      const size_t tk = causal ? tq : static_cast<size_t>(rng.uniform_int(1, 7));
      const size_t d = 3, radius = 2;
      const Tensor q = random_tensor({tq, d}, rng), k = random_tensor({tk, d}, rng),
                   v = random_tensor({tk, d}, rng);
      const Tensor rk = random_tensor({2 * radius + 1, d}, rng), rv = random_tensor({2 * radius + 1, d}, rng);
      const Tensor out = relative_attention(q, k, v, radius, rk, rv, causal);
      for (size_t i = 0; i < tq; ++i) {
        std::vector<double> score(tk, -INFINITY);
        double hi = -INFINITY;
        for (size_t j = 0; j < tk; ++j) {
          if (causal && j > i) continue;
          const size_t r = relative_index(static_cast<long>(i), static_cast<long>(j), radius);
          double s = 0.0;
          for (size_t c = 0; c < d; ++c) s += q.at(i, c) * (k.at(j, c) + rk.at(r, c));
          score[j] = s / std::sqrt(static_cast<double>(d));
          hi = std::max(hi, score[j]);
        }
        double z = 0.0;
        for (double s : score) z += std::exp(s - hi);
        for (size_t c = 0; c < d; ++c) {
          double ref = 0.0;
          for (size_t j = 0; j < tk; ++j) {
            if (causal && j > i) continue;
            const size_t r = relative_index(static_cast<long>(i), static_cast<long>(j), radius);
            ref += std::exp(score[j] - hi) / z * (v.at(j, c) + rv.at(r, c));
          }
          EXPECT_NEAR(out.at(i, c), ref, 1e-12);
        }
      }
    }
  }
}

TEST(RelativeAttention, ZeroEmbeddingsGiveVanillaAttention) {
  RngStream rng(32);
  const Tensor q = random_tensor({4, 3}, rng), k = random_tensor({6, 3}, rng), v = random_tensor({6, 3}, rng);
  const Tensor zeros = Tensor::zeros({5, 3});
  expect_same(relative_attention(q, k, v, 2, zeros, zeros, false),
              relative_attention(q, k, v, 0, {}, {}, false), 1e-14);
}

TEST(RelativeAttention, CausalFirstRowSeesOnlyPositionZero) {
  RngStream rng(33);
  const Tensor q = random_tensor({2, 3}, rng), k = random_tensor({2, 3}, rng), v = random_tensor({2, 3}, rng);
  const Tensor out = relative_attention(q, k, v, 0, {}, {}, true);
  for (size_t c = 0; c < 3; ++c) EXPECT_NEAR(out.at(0, c), v.at(0, c), 1e-15);
}

TEST(TransformerLayer, ZeroSublayersAreIdentity) {
  for (bool rpe : {false, true}) {
    ParameterSet ps;
    RngStream rng(2);
    ModelConfig cfg = small_config(Variant::baseline);
    TransformerEncoderLayer layer(ps, "l", cfg, rpe ? 3 : 0, rng);
    zero_where(ps, [](const std::string& n) { return contains(n, ".o.") || contains(n, ".fc2."); });
    const Tensor x = random_tensor({6, 16}, rng);
    expect_same(layer.forward(x, {}), x, 0.0);
  }
}

TEST(TransformerLayer, ShapePreserved) {
  RngStream rng(3);
  ParameterSet ps;
  TransformerEncoderLayer layer(ps, "l", small_config(Variant::baseline), 0, rng);
  for (size_t t : {1, 4, 9}) EXPECT_EQ(layer.forward(random_tensor({t, 16}, rng), {}).shape(), (Shape{t, 16}));
}

TEST(TransformerLayer, HandSetSingleHeadMatchesStepByStepComposition) {
  ModelConfig cfg = small_config(Variant::baseline);
  cfg.hidden = 2;
  cfg.heads = 1;
  cfg.ffn = 2;
  ParameterSet ps;
  RngStream rng(4);
  TransformerEncoderLayer layer(ps, "l", cfg, 0, rng);
  const Mat wq{{1.0, 0.5}, {-0.5, 1.0}}, wk{{0.3, -0.2}, {0.8, 0.1}}, wv{{1.0, 0.0}, {0.5, -1.0}},
      wo{{0.7, 0.2}, {-0.1, 0.9}}, w1{{1.0, -1.0}, {0.5, 0.5}}, w2{{0.2, 0.4}, {-0.6, 0.3}};
  const std::vector<double> bq{0.1, -0.1}, bk{0.0, 0.2}, bv{0.05, 0.0}, bo{0.0, -0.05}, b1{0.1, -0.3},
      b2{0.02, 0.01};
  auto flat = [](const Mat& m) { return std::vector<double>{m[0][0], m[0][1], m[1][0], m[1][1]}; };
  set_values(layer.attn.q.weight, flat(wq));
  set_values(layer.attn.k.weight, flat(wk));
  set_values(layer.attn.v.weight, flat(wv));
  set_values(layer.attn.o.weight, flat(wo));
  set_values(layer.ffn.in.weight, flat(w1));
  set_values(layer.ffn.out.weight, flat(w2));
  set_values(layer.attn.q.bias, bq);
  set_values(layer.attn.k.bias, bk);
  set_values(layer.attn.v.bias, bv);
  set_values(layer.attn.o.bias, bo);
  set_values(layer.ffn.in.bias, b1);
  set_values(layer.ffn.out.bias, b2);

  const Tensor x = Tensor::from({3, 2}, {1.0, 2.0, -0.5, 0.3, 0.0, -1.2});
  const Mat xm = to_mat(x);
  const Mat n1 = ln_rows(xm);
  const Mat q = affine(n1, wq, bq), k = affine(n1, wk, bk), v = affine(n1, wv, bv);
  Mat attn(3, std::vector<double>(2, 0.0));
  for (size_t i = 0; i < 3; ++i) {
    std::vector<double> s(3);
    double z = 0.0;
    for (size_t j = 0; j < 3; ++j) {
      s[j] = std::exp((q[i][0] * k[j][0] + q[i][1] * k[j][1]) / std::sqrt(2.0));
      z += s[j];
    }
    for (size_t j = 0; j < 3; ++j)
      for (size_t c = 0; c < 2; ++c) attn[i][c] += s[j] / z * v[j][c];
  }
  const Mat h = add_mats(xm, affine(attn, wo, bo));
  Mat f = affine(ln_rows(h), w1, b1);
  for (auto& row : f)
    for (double& val : row) val = std::max(0.0, val);
  const Mat expected = add_mats(h, affine(f, w2, b2));

  const Tensor y = layer.forward(x, {});
  for (size_t i = 0; i < 3; ++i)
    for (size_t c = 0; c < 2; ++c) EXPECT_NEAR(y.at(i, c), expected[i][c], 1e-12);
}

TEST(Conformer, ZeroSublayersAreIdentityWithFinalNormBypassed) {
  RngStream rng(5);
  ParameterSet ps;
  ConformerBlock block(ps, "c", small_config(Variant::conformer), 3, rng);
  block.bypass_final_norm = true;
  zero_where(ps, [](const std::string& n) {
    return contains(n, ".fc2.") || contains(n, ".attn.o.") || contains(n, ".pointwise_out.");
  });
  for (size_t t : {1, 5, 17}) {
    const Tensor x = random_tensor({t, 16}, rng);
    expect_same(block.forward(x, {}), x, 0.0);
  }
}

TEST(Conformer, ShapePreserved) {
  RngStream rng(6);
  ParameterSet ps;
  ConformerBlock block(ps, "c", small_config(Variant::conformer), 3, rng);
  for (size_t t : {1, 5, 17}) EXPECT_EQ(block.forward(random_tensor({t, 16}, rng), {}).shape(), (Shape{t, 16}));
}

TEST(Conformer, FeedForwardResidualsCarryHalfWeight) {
  RngStream rng(7);
  ParameterSet ps;
  ConformerBlock block(ps, "c", small_config(Variant::conformer), 0, rng);
  block.bypass_final_norm = true;
  zero_where(ps, [](const std::string& n) {
    return contains(n, "ffn2.fc2.") || contains(n, ".attn.o.") || contains(n, ".pointwise_out.");
  });
  const Tensor x = random_tensor({6, 16}, rng);
  const Tensor ffn_out = block.ffn1(block.ffn1_norm(x), {});
  const Tensor y = block.forward(x, {});
  for (size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.at(i), x.at(i) + 0.5 * ffn_out.at(i), 1e-13);
}

TEST(Dlcl, InitialWeightsAreUniformLowerTriangular) {
  RngStream rng(8);
  ParameterSet ps;
  std::vector<std::unique_ptr<EncoderBlock>> blocks;
  const ModelConfig cfg = small_config(Variant::baseline);
  for (int l = 0; l < 3; ++l)
    blocks.push_back(std::make_unique<TransformerEncoderLayer>(ps, "s.layer" + std::to_string(l), cfg, 0, rng));
  EncoderStack stack(ps, "s", cfg, std::move(blocks), rng);
  const Tensor& w = stack.dlcl_weights;
  ASSERT_EQ(w.shape(), (Shape{4, 4}));
  for (size_t r = 0; r < 4; ++r)
    for (size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(w.at(r, k), k <= r ? 1.0 / static_cast<double>(r + 1) : 0.0);
}

TEST(Dlcl, OneHotRowSelectsThatLayer) {
  RngStream rng(9);
  ParameterSet ps;
  std::vector<LayerNorm> norms;
  for (int k = 0; k < 3; ++k) norms.emplace_back(ps, "n" + std::to_string(k), 4);
  set_values(norms[1].gain, {1.5, 0.5, 2.0, 1.0});
  const std::vector<Tensor> outs{random_tensor({5, 4}, rng), random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)};
  Tensor w = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 1, 0});
  expect_same(dlcl_combine(outs, w, 2, norms), norms[1](outs[1]), 0.0);
}

TEST(Dlcl, EqualOutputsWithUniformWeightsGiveThatOutput) {
  RngStream rng(10);
  ParameterSet ps;
  std::vector<LayerNorm> norms;
  for (int k = 0; k < 3; ++k) norms.emplace_back(ps, "n" + std::to_string(k), 4);
  const Tensor o = random_tensor({5, 4}, rng);
  const std::vector<Tensor> outs{o, o, o};
  const Tensor w = Tensor::from({3, 3}, {1, 0, 0, 0.5, 0.5, 0, 1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_same(dlcl_combine(outs, w, 2, norms), norms[0](o), 1e-14);
}

TEST(Model, AllVariantsProduceDownsampledMemory) {
  for (Variant v : {Variant::baseline, Variant::conformer, Variant::conformer_rpe, Variant::sate}) {
    const SpeechTranslationModel model(small_config(v), 1);
    const EncoderOutput enc = model.encode(random_features(100, 2));
    EXPECT_EQ(enc.out_length, 25u) << to_string(v);
    EXPECT_EQ(enc.memory.shape(), (Shape{25, 16}));
    EXPECT_EQ(enc.ctc_logits.shape(), (Shape{25, 11}));
  }
}

TEST(Model, CtcHeadPlacementPerVariant) {
  const FeatureMatrix f = random_features(40, 3);
  const SpeechTranslationModel base(small_config(Variant::baseline), 1);
  const EncoderOutput eb = base.encode(f);
  expect_same(eb.ctc_logits, base.ctc_head(eb.memory), 0.0);

  const SpeechTranslationModel sate(small_config(Variant::sate), 1);
  const EncoderOutput es = sate.encode(f);
  const Tensor acoustic = sate.encoder->forward(add_absolute_positions(sate.downsampler(feature_tensor(f))), {});
  expect_same(es.ctc_logits, sate.ctc_head(acoustic), 0.0);
  EXPECT_EQ(sate.encoder->blocks.size(), 2u);
  EXPECT_EQ(sate.textual->blocks.size(), 1u);
  EXPECT_NE(dynamic_cast<const ConformerBlock*>(sate.encoder->blocks[0].get()), nullptr);
  EXPECT_NE(dynamic_cast<const TransformerEncoderLayer*>(sate.textual->blocks[0].get()), nullptr);
}

TEST(Model, SateLayoutMirrorsFullSystemSplit) {
  const ModelConfig full = full_system_config();
  EXPECT_NO_THROW(full.validate());
  EXPECT_EQ(full.acoustic_layers, 12u);
  EXPECT_EQ(full.textual_layers, 6u);
  EXPECT_EQ(full.hidden, 512u);
  EXPECT_EQ(full.heads, 8u);
  EXPECT_EQ(full.ffn, 2048u);
  // Same layer split at a width that fits in a unit test.
  ModelConfig c = full;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 8;
  c.vocab_size = 7;
  const SpeechTranslationModel model(c, 1);
  EXPECT_EQ(model.encoder->blocks.size(), 12u);
  EXPECT_EQ(model.textual->blocks.size(), 6u);
  EXPECT_NO_THROW(model.parameters().find("acoustic.layer11.conv.depthwise.weight"));
  EXPECT_NO_THROW(model.parameters().find("textual.layer5.attn.rel_k"));
  EXPECT_EQ(model.encode(random_features(100, 4)).out_length, 25u);
}

TEST(Model, LadderAndDefaults) {
  const ModelConfig d;
  EXPECT_EQ(d.rpe_enc_max, 100u);
  EXPECT_EQ(d.rpe_dec_max, 20u);
  EXPECT_EQ(d.dropout, 0.1);
  EXPECT_EQ(d.attn_dropout, 0.1);
  EXPECT_EQ(d.act_dropout, 0.1);
  for (Variant v : {Variant::baseline, Variant::conformer, Variant::conformer_rpe, Variant::sate}) {
    const ModelConfig c = ladder_config(v);
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.enc_layers, 12u);
    EXPECT_EQ(c.dec_layers, 6u);
  }
}

TEST(Model, ConfigValidation) {
  ModelConfig c = small_config(Variant::baseline);
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config(Variant::sate);
  c.textual_layers = 2;
  EXPECT_THROW(SpeechTranslationModel(c, 1), ConfigError);
  c = small_config(Variant::conformer);
  c.conv_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("transformer"), ConfigError);
  for (Variant v : {Variant::baseline, Variant::conformer, Variant::conformer_rpe, Variant::sate})
    EXPECT_EQ(parse_variant(to_string(v)), v);
}

TEST(Model, ConfigJsonRoundTrip) {
  ModelConfig c = small_config(Variant::conformer_rpe);
  c.prenorm = false;
  c.adaptor_embed_mix = true;
  const nlohmann::json j = c;
  const ModelConfig r = j.get<ModelConfig>();
  EXPECT_EQ(nlohmann::json(r), j);
}

TEST(Model, ParametersAreUniqueAndSeedDeterministic) {
  const SpeechTranslationModel a(small_config(Variant::sate), 5), b(small_config(Variant::sate), 5),
      c(small_config(Variant::sate), 6);
  std::set<std::string> names;
  for (const auto& [n, t] : a.parameters().entries()) EXPECT_TRUE(names.insert(n).second) << n;
  bool differs = false;
  for (size_t i = 0; i < a.parameters().entries().size(); ++i) {
    const auto& ta = a.parameters().entries()[i].second;
    const auto& tb = b.parameters().entries()[i].second;
    const auto& tc = c.parameters().entries()[i].second;
    for (size_t k = 0; k < ta.size(); ++k) {
      EXPECT_EQ(ta.at(k), tb.at(k));
      differs |= ta.at(k) != tc.at(k);
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ZeroRelativeEmbeddingsReduceRpeToConformer) {
  const SpeechTranslationModel plain(small_config(Variant::conformer), 3);
  SpeechTranslationModel rpe(small_config(Variant::conformer_rpe), 4);
  for (auto [name, t] : rpe.parameters().entries()) {
    auto dst = t.mutable_data();
    if (contains(name, ".rel_k") || contains(name, ".rel_v")) {
      std::fill(dst.begin(), dst.end(), 0.0);
    } else {
      const auto src = plain.parameters().find(name).data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
  }
  const FeatureMatrix f = random_features(30, 5);
  const EncoderOutput a = plain.encode(f), b = rpe.encode(f);
  expect_same(a.memory, b.memory, 0.0);
  expect_same(a.ctc_logits, b.ctc_logits, 0.0);
  const std::vector<int> prefix{kBosId, 6, 7, 8};
  expect_same(plain.decoder_logits(a.memory, prefix), rpe.decoder_logits(b.memory, prefix), 0.0);
}

TEST(Decoder, LogitsAreCausal) {
  for (Variant v : {Variant::baseline, Variant::sate}) {
    const SpeechTranslationModel model(small_config(v), 7);
    const Tensor memory = model.encode(random_features(24, 8)).memory;
    const std::vector<int> a{kBosId, 5, 6, 7, 8}, b{kBosId, 5, 9, 10, 5};
    const Tensor la = model.decoder_logits(memory, a), lb = model.decoder_logits(memory, b);
    for (size_t c = 0; c < 11; ++c) {
      EXPECT_EQ(la.at(0, c), lb.at(0, c));
      EXPECT_EQ(la.at(1, c), lb.at(1, c));
    }
  }
}

TEST(Decoder, FullSequenceEqualsIncrementalSteps) {
  const SpeechTranslationModel model(small_config(Variant::conformer_rpe), 8);
  const Tensor memory = model.encode(random_features(32, 9)).memory;
  const std::vector<int> seq{kBosId, 5, 6, 7, 8, 9, 10};
  const Tensor full = model.decoder_logits(memory, seq);
  for (size_t t = 1; t <= seq.size(); ++t) {
    const auto step = model.decoder_step(memory, std::span<const int>(seq).first(t));
    for (size_t c = 0; c < 11; ++c) EXPECT_NEAR(step[c], full.at(t - 1, c), 1e-10);
  }
}

TEST(Decoder, ZeroOutputLayerGivesUniformDistribution) {
  SpeechTranslationModel model(small_config(Variant::baseline), 9);
  zero_where(model.parameters(), [](const std::string& n) { return n.rfind("decoder.output.", 0) == 0; });
  const Tensor memory = model.encode(random_features(20, 1)).memory;
  const Tensor p = softmax(model.decoder_logits(memory, std::vector<int>{kBosId, 5}), 1);
  for (double x : p.data()) EXPECT_NEAR(x, 1.0 / 11.0, 1e-15);
}

TEST(Decoder, StepRejectsBadPrefix) {
  const SpeechTranslationModel model(small_config(Variant::baseline), 1);
  const Tensor memory = model.encode(random_features(20, 1)).memory;
  EXPECT_THROW(model.decoder_step(memory, std::vector<int>{}), ContractError);
  EXPECT_THROW(model.decoder_step(memory, std::vector<int>{5}), ContractError);
}

TEST(Model, PostNormVariantRuns) {
  ModelConfig c = small_config(Variant::baseline);
  c.prenorm = false;
  c.dlcl = false;
  const SpeechTranslationModel model(c, 2);
  const EncoderOutput enc = model.encode(random_features(20, 2));
  EXPECT_EQ(model.decoder_logits(enc.memory, std::vector<int>{kBosId}).shape(), (Shape{1, 11}));
}

TEST(Model, TooShortInputIsRejected) {
  const SpeechTranslationModel model(small_config(Variant::baseline), 1);
  EXPECT_THROW(model.encode(FeatureMatrix()), InputTooShortError);
}
