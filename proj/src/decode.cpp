#include "sttk/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sttk/errors.hpp"

namespace sttk {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool excluded(int token) { return token == kPadId || token == kBosId || token == kBlankId; }

std::vector<double> combined_row(std::span<const StepFn> models, std::span<const int> prefix) {
  std::vector<std::vector<double>> rows;
  rows.reserve(models.size());
  for (const auto& m : models) rows.push_back(m(prefix));
  return ensemble_log_prob(rows);
}

struct Candidate {
  double score;
  int token;
  size_t parent;
};

}  // namespace

void DecodeConfig::validate() const {
  if (beam < 1) throw ConfigError("decode: beam must be >= 1");
  if (!(max_len_factor > 0.0)) throw ConfigError("decode: max_len_factor must be positive");
  if (!(lennorm_beta >= 0.0)) throw ConfigError("decode: lennorm_beta must be >= 0");
}

size_t DecodeConfig::max_length(size_t source_length) const {
  const auto scaled = static_cast<size_t>(std::floor(max_len_factor * static_cast<double>(source_length)));
  return std::max<size_t>(1, scaled + max_len_extra);
}

std::vector<double> ensemble_log_prob(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ContractError("ensemble_log_prob: no models");
  const size_t v = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != v) {
      throw DimensionError("ensemble_log_prob: vocabulary sizes differ (" + std::to_string(v) +
                           " vs " + std::to_string(r.size()) + ")");
    }
  }
  if (rows.size() == 1) return rows.front();
  const double log_k = std::log(static_cast<double>(rows.size()));
  std::vector<double> out(v);
  for (size_t i = 0; i < v; ++i) {
    double hi = kNegInf;
    for (const auto& r : rows) hi = std::max(hi, r[i]);
    if (hi == kNegInf) {
      out[i] = kNegInf;
      continue;
    }
    double acc = 0.0;
    for (const auto& r : rows) acc += std::exp(r[i] - hi);
    out[i] = hi + std::log(acc) - log_k;
  }
  return out;
}

double length_normalize(double logprob, size_t length, double beta) {
  if (length < 1) throw ContractError("length_normalize: length must be >= 1");
  if (beta == 0.0) return logprob;
  return logprob / std::pow(static_cast<double>(length), beta);
}

BeamResult beam_search(std::span<const StepFn> models, size_t max_len, const DecodeConfig& cfg) {
  cfg.validate();
  if (models.empty()) throw ContractError("beam_search: no models");
  if (max_len < 1) throw ContractError("beam_search: max_len must be >= 1");

  std::vector<Hypothesis> live{Hypothesis{{kBosId}, 0.0, false, 0.0}};
  std::vector<Hypothesis> finished;
  for (size_t step = 0; step < max_len && !live.empty() && finished.size() < cfg.beam; ++step) {
    std::vector<Candidate> cands;
    for (size_t r = 0; r < live.size(); ++r) {
      const auto row = combined_row(models, live[r].tokens);
      for (size_t v = 0; v < row.size(); ++v) {
        if (excluded(static_cast<int>(v)) || row[v] == kNegInf) continue;
        cands.push_back({live[r].logprob + row[v], static_cast<int>(v), r});
      }
    }
    const size_t keep = std::min(cfg.beam - finished.size(), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Hypothesis> next;
    for (size_t i = 0; i < keep; ++i) {
      const Candidate& c = cands[i];
      Hypothesis h = live[c.parent];
      h.tokens.push_back(c.token);
      h.logprob = c.score;
      h.norm_score = length_normalize(h.logprob, h.length(), cfg.lennorm_beta);
      if (c.token == kEosId) {
        h.finished = true;
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
  }

  BeamResult result;
  if (finished.empty()) {
    if (live.empty() || live.front().length() == 0) {
      throw ContractError("beam_search: no token could be proposed");
    }
    result.unfinished = true;
    result.hypotheses = std::move(live);
  } else {
    result.hypotheses = std::move(finished);
  }
  std::stable_sort(result.hypotheses.begin(), result.hypotheses.end(),
                   [](const Hypothesis& a, const Hypothesis& b) { return a.norm_score > b.norm_score; });
  return result;
}

Hypothesis greedy_decode(std::span<const StepFn> models, size_t max_len) {
  if (models.empty()) throw ContractError("greedy_decode: no models");
  Hypothesis h{{kBosId}, 0.0, false, 0.0};
  while (h.length() < max_len) {
    const auto row = combined_row(models, h.tokens);
    int best = -1;
    for (size_t v = 0; v < row.size(); ++v) {
      if (excluded(static_cast<int>(v)) || row[v] == kNegInf) continue;
      if (best < 0 || row[v] > row[static_cast<size_t>(best)]) best = static_cast<int>(v);
    }
    if (best < 0) throw ContractError("greedy_decode: no token could be proposed");
    h.tokens.push_back(best);
    h.logprob += row[static_cast<size_t>(best)];
    if (best == kEosId) {
      h.finished = true;
      break;
    }
  }
  h.norm_score = length_normalize(h.logprob, h.length(), 1.0);
  return h;
}

StepFn model_step_fn(const SpeechTranslationModel& model, const Tensor& memory) {
  return [&model, memory](std::span<const int> prefix) {
    std::vector<double> row = model.decoder_step(memory, prefix);
    const double hi = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double x : row) acc += std::exp(x - hi);
    const double lse = hi + std::log(acc);
    for (double& x : row) x -= lse;
    return row;
  };
}

std::vector<int> ctc_greedy_decode(const Tensor& ctc_logits, int blank) {
  if (ctc_logits.rank() != 2) throw DimensionError("ctc_greedy_decode: expected [T x V] logits");
  const size_t t_len = ctc_logits.dim(0), v = ctc_logits.dim(1);
  std::vector<int> out;
  int prev = -1;
  for (size_t t = 0; t < t_len; ++t) {
    const auto row = ctc_logits.data().subspan(t * v, v);
    const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace sttk
