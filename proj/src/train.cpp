#include "sttk/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "sttk/checkpoint.hpp"
#include "sttk/errors.hpp"

namespace sttk {

void ScheduleConfig::validate() const {
  if (warmup_steps < 1) throw ConfigError("schedule: warmup_steps must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("schedule: base_lr must be positive");
}

double inverse_sqrt_lr(size_t step, const ScheduleConfig& s) {
  if (step < 1) throw ContractError("inverse_sqrt_lr: step must be >= 1");
  const double st = static_cast<double>(step), warm = static_cast<double>(s.warmup_steps);
  if (step <= s.warmup_steps) return s.base_lr * st / warm;
  return s.base_lr * std::sqrt(warm / st);
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, OptimizerState& state,
               double lr, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t.size(), 0.0);
      state.v.emplace_back(t.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam: optimizer state tracks " + std::to_string(state.m.size()) +
                         " tensors, got " + std::to_string(params.size()));
  }
  for (size_t p = 0; p < params.size(); ++p) {
    const auto& [name, t] = params[p];
    if (state.m[p].size() != t.size()) {
      throw DimensionError("adam: state for " + name + " does not match its shape");
    }
    for (double g : t.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradientError("adam: non-finite gradient in " + name);
    }
  }
  ++state.step;
  const double step = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, step);
  const double bc2 = 1.0 - std::pow(cfg.beta2, step);
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    const auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  to_json(j, c.model);
  j["base_lr"] = c.schedule.base_lr;
  j["warmup_steps"] = c.schedule.warmup_steps;
  j["adam_beta1"] = c.adam.beta1;
  j["adam_beta2"] = c.adam.beta2;
  j["adam_eps"] = c.adam.eps;
  j["ctc_weight"] = c.loss.alpha;
  j["label_smoothing"] = c.loss.epsilon_ls;
  j["spec_augment"] = c.use_spec_augment;
  j["freq_masks"] = c.spec_augment.n_freq_masks;
  j["max_freq_width"] = c.spec_augment.max_freq_width;
  j["time_masks"] = c.spec_augment.n_time_masks;
  j["max_time_fraction"] = c.spec_augment.max_time_fraction;
  j["mask_value"] = c.spec_augment.mask_value;
  j["normalize_features"] = c.normalize_features;
  j["epochs"] = c.epochs;
  j["max_steps"] = c.max_steps;
  j["batch_frames"] = c.batch_frames;
  j["seed"] = c.seed;
  j["clip_norm"] = c.clip_norm;
  j["lr_scale"] = c.lr_scale;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  from_json(j, c.model);
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("base_lr", c.schedule.base_lr);
  get("warmup_steps", c.schedule.warmup_steps);
  get("adam_beta1", c.adam.beta1);
  get("adam_beta2", c.adam.beta2);
  get("adam_eps", c.adam.eps);
  get("ctc_weight", c.loss.alpha);
  get("label_smoothing", c.loss.epsilon_ls);
  get("spec_augment", c.use_spec_augment);
  get("freq_masks", c.spec_augment.n_freq_masks);
  get("max_freq_width", c.spec_augment.max_freq_width);
  get("time_masks", c.spec_augment.n_time_masks);
  get("max_time_fraction", c.spec_augment.max_time_fraction);
  get("mask_value", c.spec_augment.mask_value);
  get("normalize_features", c.normalize_features);
  get("epochs", c.epochs);
  get("max_steps", c.max_steps);
  get("batch_frames", c.batch_frames);
  get("seed", c.seed);
  get("clip_norm", c.clip_norm);
  get("lr_scale", c.lr_scale);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": config must be a JSON object");
  TrainConfig cfg;
  try {
    cfg = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return cfg;
}

Dataset load_dataset(const Manifest& manifest, const SubwordModel& subwords,
                     bool normalize_features, bool drop_ctc_infeasible) {
  Dataset data;
  const auto kept = filter_utterances(manifest.entries);
  data.filtered_by_length = manifest.entries.size() - kept.size();
  for (const auto& entry : kept) {
    Example ex;
    ex.id = entry.id;
    ex.features = read_features(manifest.resolve(entry));
    if (ex.features.frames != *entry.n_frames) {
      throw ManifestError("entry '" + entry.id + "' declares " + std::to_string(*entry.n_frames) +
                          " frames but its features have " + std::to_string(ex.features.frames));
    }
    if (normalize_features) normalize_utterance(ex.features);
    ex.transcript = entry.transcript;
    ex.translation = entry.translation;
    ex.target = encode(subwords, entry.translation);
    ex.ctc_target = encode(subwords, normalize_for_ctc(entry.transcript));
    if (drop_ctc_infeasible &&
        downsampled_length(ex.features.frames) < ctc_min_frames(ex.ctc_target)) {
      ++data.ctc_infeasible;
      continue;
    }
    data.examples.push_back(std::move(ex));
  }
  if (data.ctc_infeasible > 0) {
    std::cerr << "warning: dropped " << data.ctc_infeasible
              << " utterance(s) too short for their CTC target\n";
  }
  return data;
}

std::vector<std::vector<size_t>> make_batches(const Dataset& data, size_t frame_budget,
                                              RngStream& rng) {
  std::vector<size_t> order(data.examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i - 1)))]);
  }
  std::stable_sort(order.begin(), order.end(), [&data](size_t a, size_t b) {
    return data.examples[a].features.frames < data.examples[b].features.frames;
  });
  std::vector<std::vector<size_t>> batches;
  std::vector<size_t> current;
  size_t frames = 0;
  for (size_t idx : order) {
    const size_t f = data.examples[idx].features.frames;
    if (!current.empty() && frames + f > frame_budget) {
      batches.push_back(std::move(current));
      current.clear();
      frames = 0;
    }
    current.push_back(idx);
    frames += f;
  }
  if (!current.empty()) batches.push_back(std::move(current));
  for (size_t i = batches.size(); i > 1; --i) {
    std::swap(batches[i - 1], batches[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i - 1)))]);
  }
  return batches;
}

nlohmann::json to_json(const StepMetrics& m) {
  return {{"step", m.step}, {"epoch", m.epoch}, {"lr", m.lr},
          {"ce", m.ce},     {"ctc", m.ctc},     {"total", m.total}};
}

Trainer::Trainer(SpeechTranslationModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  cfg_.schedule.validate();
  cfg_.loss.validate();
  cfg_.spec_augment.validate();
  if (!(cfg_.lr_scale > 0.0)) throw ConfigError("train: lr_scale must be positive");
}

StepMetrics Trainer::train_step(const std::vector<const Example*>& batch, size_t epoch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  model_.parameters().zero_grad();

  size_t ce_tokens = 0, ctc_tokens = 0;
  for (const Example* ex : batch) {
    ce_tokens += ex->target.size() + 1;
    ctc_tokens += ex->ctc_target.size();
  }
  ctc_tokens = std::max<size_t>(ctc_tokens, 1);

  const double alpha = cfg_.loss.alpha;
  const RngStream step_rng(mix_seed(cfg_.seed, opt_.step + 1));
  double ce_sum = 0.0, ctc_sum = 0.0;
  for (size_t k = 0; k < batch.size(); ++k) {
    const Example& ex = *batch[k];
    RngStream rng = step_rng.derive(k);
    ForwardContext ctx{true, &rng};

    const EncoderOutput enc =
        cfg_.use_spec_augment
            ? model_.encode(spec_augment(ex.features, cfg_.spec_augment, rng).features, ctx)
            : model_.encode(ex.features, ctx);

    std::vector<int> dec_in{kBosId};
    dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end());
    std::vector<int> dec_out(ex.target.begin(), ex.target.end());
    dec_out.push_back(kEosId);
    const Tensor logits = model_.decoder_logits(enc.memory, dec_in, ctx);
    const Tensor ce = label_smoothed_ce_sum(logits, dec_out, cfg_.loss.epsilon_ls);
    Tensor loss = scale(ce, (1.0 - alpha) / static_cast<double>(ce_tokens));
    ce_sum += ce.item();

    if (enc.out_length >= ctc_min_frames(ex.ctc_target)) {
      const Tensor ctc = ctc_loss(log_softmax(enc.ctc_logits, 1), ex.ctc_target);
      ctc_sum += ctc.item();
      if (alpha > 0.0) loss = add(loss, scale(ctc, alpha / static_cast<double>(ctc_tokens)));
    } else {
      ++ctc_skipped_;
    }
    loss.backward();
  }

  const auto& params = model_.parameters().entries();
  if (cfg_.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& [name, t] : params)
      for (double g : t.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.clip_norm) {
      const double f = cfg_.clip_norm / norm;
      for (const auto& [name, t] : params) {
        auto* g = &t.node()->ensure_grad();
        for (double& gv : *g) gv *= f;
      }
    }
  }

  StepMetrics m;
  m.lr = inverse_sqrt_lr(opt_.step + 1, cfg_.schedule) * cfg_.lr_scale;
  adam_step(params, opt_, m.lr, cfg_.adam);
  m.step = opt_.step;
  m.epoch = epoch;
  m.ce = ce_sum / static_cast<double>(ce_tokens);
  m.ctc = ctc_sum / static_cast<double>(ctc_tokens);
  m.total = multitask_loss(m.ce, m.ctc, cfg_.loss);
  m.utterances = batch.size();
  return m;
}

TrainResult Trainer::train(const Dataset& data, const TrainOptions& opts) {
  if (data.examples.empty()) throw ContractError("train: dataset is empty after filtering");
  TrainResult result;
  const size_t skipped_before = ctc_skipped_;
  bool done = false;
  for (size_t epoch = opts.start_epoch + 1; epoch <= cfg_.epochs && !done; ++epoch) {
    RngStream rng(mix_seed(cfg_.seed, 0x5EEDULL + epoch));
    for (const auto& batch_idx : make_batches(data, cfg_.batch_frames, rng)) {
      std::vector<const Example*> batch;
      for (size_t i : batch_idx) batch.push_back(&data.examples[i]);
      const StepMetrics m = train_step(batch, epoch);
      result.steps.push_back(m);
      if (opts.metrics_log) *opts.metrics_log << to_json(m).dump() << '\n';
      if (opts.on_step) opts.on_step(m);
      if (cfg_.max_steps > 0 && opt_.step >= cfg_.max_steps) {
        done = true;
        break;
      }
    }
    if (opts.checkpoint_dir) {
      nlohmann::json meta{{"epoch", epoch},
                          {"step", opt_.step},
                          {"normalize_features", cfg_.normalize_features}};
      const auto path = epoch_checkpoint_path(*opts.checkpoint_dir, epoch);
      save_checkpoint(path, snapshot(model_, meta));
      result.checkpoints.push_back(path);
    }
  }
  result.ctc_skipped = ctc_skipped_ - skipped_before;
  if (result.ctc_skipped > 0) {
    std::cerr << "warning: skipped CTC on " << result.ctc_skipped << " utterance(s)\n";
  }
  return result;
}

double teacher_forced_accuracy(const SpeechTranslationModel& model, const Dataset& data) {
  NoGradGuard no_grad;
  size_t correct = 0, total = 0;
  for (const auto& ex : data.examples) {
    const EncoderOutput enc = model.encode(ex.features);
    std::vector<int> dec_in{kBosId};
    dec_in.insert(dec_in.end(), ex.target.begin(), ex.target.end());
    const Tensor logits = model.decoder_logits(enc.memory, dec_in);
    const size_t v = logits.dim(1);
    for (size_t t = 0; t < dec_in.size(); ++t) {
      const int expected = t < ex.target.size() ? ex.target[t] : kEosId;
      const auto row = logits.data().subspan(t * v, v);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == expected ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace sttk
