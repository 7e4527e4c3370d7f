#include <gtest/gtest.h>

#include <cmath>

#include "sttk/diagnostics.hpp"
#include "sttk/errors.hpp"
#include "sttk/gradcheck.hpp"
#include "sttk/loss.hpp"
#include "sttk/testing/ctc_bruteforce.hpp"

using namespace sttk;

namespace {

// Random per-frame log-distributions [T x V].
Tensor random_log_probs(size_t frames, size_t vocab, RngStream& rng) {
  std::vector<double> v(frames * vocab);
  for (double& x : v) x = 2.0 * rng.normal();
  return log_softmax(Tensor::from({frames, vocab}, std::move(v)), 1);
}

double value(const Tensor& t) { return t.at(0); }

}  // namespace

TEST(Ctc, SingleFrameSinglePath) {
  RngStream rng(1);
  const Tensor lp = random_log_probs(1, 6, rng);
  EXPECT_NEAR(value(ctc_loss(lp, std::vector<int>{5})), -lp.at(0, 5), 1e-14);
}

TEST(Ctc, TwoUniformFramesWorkedExample) {
  const double h = std::log(0.5);
  const Tensor lp = Tensor::from({2, 2}, {h, h, h, h});
  EXPECT_NEAR(value(ctc_loss(lp, std::vector<int>{1}, 0)), -std::log(0.75), 1e-12);
  EXPECT_NEAR(-std::log(0.75), 0.28768, 1e-5);
}

TEST(Ctc, EmptyTargetIsAllBlankPath) {
  RngStream rng(2);
  const Tensor lp = random_log_probs(5, 7, rng);
  double ref = 0.0;
  for (size_t t = 0; t < 5; ++t) ref -= lp.at(t, kBlankId);
  EXPECT_NEAR(value(ctc_loss(lp, std::vector<int>{})), ref, 1e-12);
}

TEST(Ctc, MinimumFramesCountsRepeats) {
  EXPECT_EQ(ctc_min_frames(std::vector<int>{}), 0u);
  EXPECT_EQ(ctc_min_frames(std::vector<int>{5, 6, 7}), 3u);
  EXPECT_EQ(ctc_min_frames(std::vector<int>{5, 5, 6, 6}), 6u);
}

TEST(Ctc, InfeasibleTargetRaises) {
  RngStream rng(3);
  EXPECT_THROW(ctc_loss(random_log_probs(2, 7, rng), std::vector<int>{5, 5}), CtcInfeasibleError);
  EXPECT_THROW(ctc_loss(random_log_probs(2, 7, rng), std::vector<int>{5, 6, 7}), CtcInfeasibleError);
  EXPECT_NO_THROW(ctc_loss(random_log_probs(3, 7, rng), std::vector<int>{5, 5}));
}

TEST(Ctc, MatchesPathEnumeration) {
  RngStream rng(4);
  for (size_t frames = 1; frames <= 6; ++frames) {
    for (size_t vocab = 2; vocab <= 4; ++vocab) {
      for (size_t len = 0; len <= 3; ++len) {
        for (int trial = 0; trial < 20; ++trial) {
          const Tensor lp = random_log_probs(frames, vocab, rng);
          std::vector<int> target(len);
          for (int& y : target) y = static_cast<int>(rng.uniform_int(1, static_cast<int64_t>(vocab) - 1));
          const double brute =
              sttk::testing::ctc_bruteforce_loss(lp.data(), frames, vocab, target, 0);
          if (std::isinf(brute)) {
            EXPECT_THROW(ctc_loss(lp, target, 0), CtcInfeasibleError);
          } else {
            EXPECT_NEAR(value(ctc_loss(lp, target, 0)), brute, 1e-8);
          }
        }
      }
    }
  }
}

TEST(Ctc, OracleSweepAgrees) {
  const CtcOracleReport r = ctc_oracle_sweep(100, 7);
  EXPECT_EQ(r.cases, 6u * 4u * 3u * 100u);
  EXPECT_EQ(r.disagreements, 0u);
  EXPECT_LT(r.max_abs_diff, 1e-8);
}

TEST(Ctc, ReversingTargetChangesLoss) {
  RngStream rng(5);
  const Tensor lp = random_log_probs(6, 8, rng);
  EXPECT_NE(value(ctc_loss(lp, std::vector<int>{5, 6, 7})), value(ctc_loss(lp, std::vector<int>{7, 6, 5})));
}

TEST(Ctc, LikelihoodIsAProbability) {
  RngStream rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto frames = static_cast<size_t>(rng.uniform_int(1, 8));
    const Tensor lp = random_log_probs(frames, 8, rng);
    std::vector<int> target(static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(frames))));
    for (size_t i = 0; i < target.size(); ++i)
      target[i] = 5 + static_cast<int>(i % 2);  // alternating, so no repeats
    const double p = std::exp(-value(ctc_loss(lp, target)));
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  // All mass on a single valid path gives probability one.
  const double neg = -INFINITY;
  const Tensor certain = Tensor::from({2, 2}, {neg, 0.0, 0.0, neg});
  EXPECT_NEAR(value(ctc_loss(certain, std::vector<int>{1}, 0)), 0.0, 1e-15);
}

TEST(Ctc, GradientMatchesFiniteDifferences) {
  RngStream rng(8);
  const Tensor logits = Tensor::parameter({5, 4}, [&] {
    std::vector<double> v(20);
    for (double& x : v) x = rng.normal();
    return v;
  }());
  const auto r = grad_check([&] { return ctc_loss(log_softmax(logits, 1), std::vector<int>{1, 2, 2}, 0); },
                            {logits});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(LabelSmoothedCe, UniformLogitsGiveLogVocab) {
  for (double eps : {0.0, 0.1, 0.5}) {
    const Tensor logits = Tensor::zeros({3, 9});
    EXPECT_NEAR(value(label_smoothed_ce(logits, std::vector<int>{5, 6, 7}, eps)), std::log(9.0), 1e-13);
  }
}

TEST(LabelSmoothedCe, ZeroEpsilonIsNegativeLogLikelihood) {
  RngStream rng(9);
  std::vector<double> v(14);
  for (double& x : v) x = rng.normal();
  const Tensor logits = Tensor::from({2, 7}, v);
  const Tensor lp = log_softmax(logits, 1);
  const double nll = -(lp.at(0, 3) + lp.at(1, 6)) / 2.0;
  EXPECT_NEAR(value(label_smoothed_ce(logits, std::vector<int>{3, 6}, 0.0)), nll, 1e-14);
}

TEST(LabelSmoothedCe, ClosedFormTwoClassExample) {
  // Id 0 is pad, so the favoured class sits at id 1 here.
  const Tensor logits = Tensor::from({1, 2}, {0.0, std::log(3.0)});
  const double expected = -(0.95 * std::log(0.75) + 0.05 * std::log(0.25));
  EXPECT_NEAR(value(label_smoothed_ce(logits, std::vector<int>{1}, 0.1)), expected, 1e-14);
}

TEST(LabelSmoothedCe, PadPositionsExcluded) {
  RngStream rng(10);
  std::vector<double> v(21);
  for (double& x : v) x = rng.normal();
  const Tensor logits = Tensor::from({3, 7}, v);
  const Tensor first_row = Tensor::from({1, 7}, std::vector<double>(v.begin(), v.begin() + 7));
  EXPECT_NEAR(value(label_smoothed_ce(logits, std::vector<int>{5, kPadId, kPadId}, 0.1)),
              value(label_smoothed_ce(first_row, std::vector<int>{5}, 0.1)), 1e-14);
  EXPECT_EQ(count_non_pad(std::vector<int>{5, kPadId, 6}), 2u);
  EXPECT_EQ(value(label_smoothed_ce_sum(logits, std::vector<int>{kPadId, kPadId, kPadId}, 0.1)), 0.0);
}

TEST(LabelSmoothedCe, NeverBelowEntropyOfSmoothedTarget) {
  RngStream rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto vocab = static_cast<size_t>(rng.uniform_int(2, 12));
    std::vector<double> v(vocab);
    for (double& x : v) x = 3.0 * rng.normal();
    const int target = static_cast<int>(rng.uniform_int(1, static_cast<int64_t>(vocab) - 1));
    const double eps = rng.uniform() * 0.9;
    const double loss = value(label_smoothed_ce(Tensor::from({1, vocab}, v), std::vector<int>{target}, eps));
    double entropy = 0.0;
    for (size_t i = 0; i < vocab; ++i) {
      const double q = (static_cast<int>(i) == target ? 1.0 - eps : 0.0) + eps / static_cast<double>(vocab);
      if (q > 0.0) entropy -= q * std::log(q);
    }
    EXPECT_GE(loss, entropy - 1e-12);
  }
}

TEST(LabelSmoothedCe, GradientMatchesFiniteDifferences) {
  RngStream rng(12);
  std::vector<double> v(15);
  for (double& x : v) x = rng.normal();
  const Tensor logits = Tensor::parameter({3, 5}, v);
  const auto r = grad_check([&] { return label_smoothed_ce(logits, std::vector<int>{1, kPadId, 4}, 0.1); },
                            {logits});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Multitask, ConvexCombination) {
  EXPECT_NEAR(multitask_loss(2.0, 4.0, LossWeights{0.3, 0.1}), 2.6, 1e-15);
  EXPECT_EQ(multitask_loss(2.0, 4.0, LossWeights{0.0, 0.1}), 2.0);
  EXPECT_EQ(multitask_loss(2.0, 4.0, LossWeights{1.0, 0.1}), 4.0);
  const Tensor t = multitask_loss(Tensor::scalar(2.0), Tensor::scalar(4.0), LossWeights{});
  EXPECT_NEAR(value(t), 2.6, 1e-15);
}

TEST(Multitask, WeightsValidated) {
  const LossWeights d;
  EXPECT_EQ(d.alpha, 0.3);
  EXPECT_EQ(d.epsilon_ls, 0.1);
  EXPECT_THROW((LossWeights{1.5, 0.1}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{0.3, 1.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-0.1, 0.1}.validate()), ConfigError);
  EXPECT_NO_THROW((LossWeights{1.0, 0.0}.validate()));
}
