#include "sttk/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "sttk/errors.hpp"
#include "sttk/loss.hpp"
#include "sttk/testing/ctc_bruteforce.hpp"
#include "sttk/text.hpp"

namespace sttk {

namespace {

class OpSuite {
 public:
  OpSuite(uint64_t seed, double eps) : rng_(seed), eps_(eps) {}

  size_t dim(size_t lo = 1) { return static_cast<size_t>(rng_.uniform_int(static_cast<int64_t>(lo), 8)); }

  std::vector<double> values(size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = lo + (hi - lo) * rng_.uniform();
    return v;
  }

  // Magnitudes in [0.1, 1] with random sign, away from kinks at zero.
  std::vector<double> away_from_zero(size_t n) {
    std::vector<double> v = values(n, 0.1, 1.0);
    for (double& x : v)
      if (rng_.uniform() < 0.5) x = -x;
    return v;
  }

  Tensor param(const Shape& s, double lo = -1.0, double hi = 1.0) {
    return Tensor::parameter(s, values(numel(s), lo, hi));
  }

  // Contracts the op output with fixed random weights so every output
  // element receives a distinct upstream gradient.
  void check(const std::string& name, std::vector<Tensor> params, const std::function<Tensor()>& op) {
    Tensor probe;
    {
      NoGradGuard guard;
      probe = op();
    }
    const Tensor w = Tensor::from(probe.shape(), values(probe.size()));
    const auto f = [&op, w]() { return sum(mul(op(), w)); };
    results_.push_back({name, grad_check(f, std::move(params), eps_)});
  }

  RngStream& rng() { return rng_; }
  std::vector<NamedGradCheck> take() { return std::move(results_); }

 private:
  RngStream rng_;
  double eps_;
  std::vector<NamedGradCheck> results_;
};

}  // namespace

std::vector<NamedGradCheck> op_gradcheck_suite(uint64_t seed, double eps) {
  OpSuite s(seed, eps);
  auto& rng = s.rng();

  {
    const size_t r = s.dim(), c = s.dim();
    Tensor a = s.param({r, c}), b = s.param({r, c});
    s.check("add", {a, b}, [=] { return add(a, b); });
    s.check("sub", {a, b}, [=] { return sub(a, b); });
    s.check("mul", {a, b}, [=] { return mul(a, b); });
    s.check("scale", {a}, [=] { return scale(a, -1.7); });
    s.check("transpose", {a}, [=] { return transpose(a); });
    s.check("reshape", {a}, [=] { return reshape(a, {r * c}); });
    s.check("sigmoid", {a}, [=] { return sigmoid(a); });
    s.check("swish", {a}, [=] { return swish(a); });
    s.check("exp", {a}, [=] { return exp(a); });
    s.check("log_add_exp", {a, b}, [=] { return log_add_exp(a, b); });
    s.check("softmax_rows", {a}, [=] { return softmax(a, 1); });
    s.check("softmax_cols", {a}, [=] { return softmax(a, 0); });
    s.check("log_softmax_rows", {a}, [=] { return log_softmax(a, 1); });
    s.check("log_softmax_cols", {a}, [=] { return log_softmax(a, 0); });
    s.check("sum", {a}, [=] { return sum(a); });
    s.check("mean", {a}, [=] { return mean(a); });
    const std::vector<double> offsets = s.values(r * c);
    s.check("add_constant", {a}, [=] { return add_constant(a, offsets); });
    std::vector<double> with_inf = s.values(r * c);
    for (size_t i = 0; i < with_inf.size(); i += 2) with_inf[i] = -INFINITY;
    const Tensor b_inf = Tensor::from({r, c}, with_inf);
    s.check("log_add_exp_neg_inf", {a}, [=] { return log_add_exp(a, b_inf); });
  }
  {
    const size_t r = s.dim(), c = s.dim();
    Tensor x = Tensor::parameter({r, c}, s.away_from_zero(r * c));
    s.check("relu", {x}, [=] { return relu(x); });
    Tensor pos = s.param({r, c}, 0.5, 2.0);
    s.check("log", {pos}, [=] { return log(pos); });
  }
  {
    const size_t r = s.dim(), c = s.dim();
    Tensor x = s.param({r, c}), b = s.param({c}), g = s.param({c}, 0.5, 1.5);
    s.check("add_bias", {x, b}, [=] { return add_bias(x, b); });
    s.check("mul_bias", {x, g}, [=] { return mul_bias(x, g); });
    const auto idx = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(c) - 1));
    s.check("scale_by_element", {x, g}, [=] { return scale_by_element(x, g, idx); });
  }
  {
    const size_t r = s.dim(), c = s.dim(2);
    Tensor x = s.param({r, c}), g = s.param({c}, 0.5, 1.5), b = s.param({c});
    s.check("layer_norm", {x, g, b}, [=] { return layer_norm(x, g, b, 1e-5); });
  }
  {
    const size_t r = s.dim(), c = s.dim();
    Tensor x = s.param({r, 2 * c});
    s.check("glu", {x}, [=] { return glu(x); });
  }
  {
    const size_t m = s.dim(), k = s.dim(), n = s.dim();
    Tensor a = s.param({m, k}), b = s.param({k, n});
    s.check("matmul", {a, b}, [=] { return matmul(a, b); });
  }
  {
    const size_t r = s.dim(), c = s.dim(), r2 = s.dim(), c2 = s.dim();
    Tensor x = s.param({r, c}), y = s.param({r2, c}), z = s.param({r, c2});
    const auto r0 = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(r) - 1));
    const auto rn = static_cast<size_t>(rng.uniform_int(1, static_cast<int64_t>(r - r0)));
    const auto c0 = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(c) - 1));
    const auto cn = static_cast<size_t>(rng.uniform_int(1, static_cast<int64_t>(c - c0)));
    s.check("slice_rows", {x}, [=] { return slice_rows(x, r0, rn); });
    s.check("slice_cols", {x}, [=] { return slice_cols(x, c0, cn); });
    s.check("concat_rows", {x, y}, [=] { return concat_rows({x, y}); });
    s.check("concat_cols", {x, z}, [=] { return concat_cols({x, z}); });
  }
  {
    const size_t r = s.dim(), c = s.dim(), n = s.dim(), m = s.dim();
    Tensor x = s.param({r, c});
    std::vector<long> gidx(n);
    for (long& i : gidx) i = rng.uniform_int(-1, static_cast<int64_t>(r * c) - 1);
    s.check("gather", {x}, [=] { return gather(x, gidx, {n}, -0.5); });
    Tensor y = s.param({n});
    std::vector<long> sidx(n);
    for (long& i : sidx) i = rng.uniform_int(-1, static_cast<int64_t>(m) - 1);
    s.check("scatter_add", {y}, [=] { return scatter_add(y, sidx, {m}); });
    Tensor table = s.param({r, c});
    std::vector<int> ids(n);
    for (int& i : ids) i = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(r) - 1));
    s.check("embedding", {table}, [=] { return embedding(table, ids); });
  }
  {
    Conv1dSpec spec{static_cast<size_t>(rng.uniform_int(1, 3)), static_cast<size_t>(rng.uniform_int(1, 2)),
                    static_cast<size_t>(rng.uniform_int(0, 1)), false};
    const size_t t = std::max(spec.kernel, s.dim()), cin = s.dim(), cout = s.dim();
    Tensor x = s.param({t, cin}), w = s.param({spec.kernel, cin, cout}), b = s.param({cout});
    s.check("conv1d", {x, w, b}, [=] { return conv1d(x, w, b, spec); });
    Conv1dSpec dw{3, 1, 1, true};
    const size_t c = s.dim();
    Tensor xd = s.param({t, c}), wd = s.param({3, c}), bd = s.param({c});
    s.check("conv1d_depthwise", {xd, wd, bd}, [=] { return conv1d(xd, wd, bd, dw); });
  }
  {
    const size_t r = s.dim(), c = s.dim();
    Tensor x = s.param({r, c});
    s.check("dropout", {x}, [=] {
      RngStream local(99);
      return dropout(x, 0.3, local, true);
    });
  }
  {
    const size_t tq = s.dim(), tk = s.dim(), d = s.dim(), radius = 2;
    Tensor q = s.param({tq, d}), k = s.param({tk, d}), v = s.param({tk, d});
    Tensor rk = s.param({2 * radius + 1, d}), rv = s.param({2 * radius + 1, d});
    s.check("relative_attention", {q, k, v, rk, rv},
            [=] { return relative_attention(q, k, v, radius, rk, rv, false); });
    Tensor kc = s.param({tq, d}), vc = s.param({tq, d});
    s.check("relative_attention_causal", {q, kc, vc, rk, rv},
            [=] { return relative_attention(q, kc, vc, radius, rk, rv, true); });
    s.check("attention_plain", {q, k, v}, [=] { return relative_attention(q, k, v, 0, {}, {}, false); });
  }
  {
    const size_t vocab = s.dim(3), len = static_cast<size_t>(rng.uniform_int(1, 3));
    std::vector<int> target(len);
    for (int& y : target) y = static_cast<int>(rng.uniform_int(1, static_cast<int64_t>(vocab) - 1));
    const size_t frames = std::max(ctc_min_frames(target), s.dim());
    Tensor x = s.param({frames, vocab}, -2.0, 2.0);
    s.check("ctc_loss", {x}, [=] { return ctc_loss(log_softmax(x, 1), target, 0); });
  }
  {
    const size_t n = s.dim(), vocab = s.dim(2);
    std::vector<int> targets(n);
    for (int& y : targets) y = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(vocab) - 1));
    targets.back() = 1;  // at least one non-pad row
    Tensor x = s.param({n, vocab}, -2.0, 2.0);
    s.check("label_smoothed_ce", {x}, [=] { return label_smoothed_ce(x, targets, 0.1); });
  }
  return s.take();
}

ModelConfig tiny_gradcheck_config() {
  ModelConfig c;
  c.variant = Variant::sate;
  c.enc_layers = 3;
  c.acoustic_layers = 2;
  c.textual_layers = 1;
  c.dec_layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ffn = 16;
  c.dropout = c.attn_dropout = c.act_dropout = 0.0;
  c.rpe_enc_max = 2;
  c.rpe_dec_max = 2;
  c.conv_kernel = 3;
  c.vocab_size = 7;
  c.adaptor_embed_mix = true;
  return c;
}

GradCheckResult tiny_model_gradcheck(uint64_t seed, double eps) {
  const ModelConfig cfg = tiny_gradcheck_config();
  SpeechTranslationModel model(cfg, seed);
  RngStream rng(mix_seed(seed, 12));
  FeatureMatrix feats(12);
  for (double& x : feats.values) x = rng.normal();
  const std::vector<int> dec_in{kBosId, 5, 6, 5};
  const std::vector<int> dec_out{5, 6, 5, kEosId};
  const std::vector<int> ctc_target{6, 5};
  const LossWeights weights;
  const auto f = [&]() {
    const EncoderOutput enc = model.encode(feats);
    const Tensor ce = label_smoothed_ce(model.decoder_logits(enc.memory, dec_in), dec_out,
                                        weights.epsilon_ls);
    const Tensor ctc = ctc_loss(log_softmax(enc.ctc_logits, 1), ctc_target);
    return multitask_loss(ce, ctc, weights);
  };
  return grad_check(f, model.parameters().tensors(), eps);
}

CtcOracleReport ctc_oracle_sweep(size_t trials, uint64_t seed) {
  CtcOracleReport report;
  RngStream rng(seed);
  const int blank = 0;
  for (size_t frames = 1; frames <= 6; ++frames) {
    for (size_t len = 0; len <= 3; ++len) {
      for (size_t vocab = 2; vocab <= 4; ++vocab) {
        for (size_t trial = 0; trial < trials; ++trial) {
          std::vector<int> target(len);
          for (int& y : target) y = static_cast<int>(rng.uniform_int(1, static_cast<int64_t>(vocab) - 1));
          std::vector<double> logits(frames * vocab);
          for (double& x : logits) x = 2.0 * rng.normal();
          Tensor lp;
          {
            NoGradGuard guard;
            lp = log_softmax(Tensor::from({frames, vocab}, logits), 1);
          }
          const double brute = testing::ctc_bruteforce_loss(lp.data(), frames, vocab, target, blank);
          ++report.cases;
          bool dp_feasible = true;
          double dp = 0.0;
          try {
            NoGradGuard guard;
            dp = ctc_loss(lp, target, blank).item();
          } catch (const CtcInfeasibleError&) {
            dp_feasible = false;
          }
          const bool brute_feasible = std::isfinite(brute);
          if (dp_feasible != brute_feasible) {
            ++report.disagreements;
          } else if (!dp_feasible) {
            ++report.infeasible;
          } else {
            report.max_abs_diff = std::max(report.max_abs_diff, std::abs(dp - brute));
          }
        }
      }
    }
  }
  return report;
}

}  // namespace sttk
