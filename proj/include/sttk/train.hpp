#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sttk/audio.hpp"
#include "sttk/loss.hpp"
#include "sttk/model.hpp"
#include "sttk/text.hpp"

namespace sttk {

struct ScheduleConfig {
  double base_lr = 2e-3;
  size_t warmup_steps = 400;

  void validate() const;
};

// Linear warmup to base_lr, then base_lr * sqrt(warmup / step).
double inverse_sqrt_lr(size_t step, const ScheduleConfig& s);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct OptimizerState {
  size_t step = 0;
  std::vector<std::vector<double>> m, v;
};

// One bias-corrected Adam update from the parameters' accumulated grads.
// Throws NonFiniteGradientError (naming the parameter) before touching any
// value if a gradient is NaN or infinite.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, OptimizerState& state,
               double lr, const AdamConfig& cfg = {});

struct TrainConfig {
  ModelConfig model;
  ScheduleConfig schedule;
  AdamConfig adam;
  LossWeights loss;
  SpecAugmentPolicy spec_augment;
  bool use_spec_augment = true;
  bool normalize_features = true;
  size_t epochs = 50;
  size_t max_steps = 0;  // 0: no cap
  size_t batch_frames = 4000;
  uint64_t seed = 1;
  double clip_norm = 0.0;  // 0: no clipping
  double lr_scale = 1.0;   // fine-tuning multiplies the schedule by this
};

// Flat key set: every ModelConfig key plus the training keys documented in
// the README.
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
TrainConfig load_train_config(const std::filesystem::path& path);

struct Example {
  std::string id;
  FeatureMatrix features;
  std::vector<int> target;      // translation subwords (no bos/eos)
  std::vector<int> ctc_target;  // normalized transcript subwords
  std::string transcript;
  std::string translation;
};

struct Dataset {
  std::vector<Example> examples;
  size_t filtered_by_length = 0;
  size_t ctc_infeasible = 0;
};

// Loads features, applies the 5..3000 frame filter, tokenizes, and (when
// `drop_ctc_infeasible`) drops utterances whose downsampled length cannot
// carry their CTC target.
Dataset load_dataset(const Manifest& manifest, const SubwordModel& subwords,
                     bool normalize_features, bool drop_ctc_infeasible = true);

// Length-bucketed batches under a frame budget; bucket order is shuffled.
std::vector<std::vector<size_t>> make_batches(const Dataset& data, size_t frame_budget,
                                              RngStream& rng);

struct StepMetrics {
  size_t step = 0;
  size_t epoch = 0;
  double lr = 0.0;
  double ce = 0.0;
  double ctc = 0.0;
  double total = 0.0;
  size_t utterances = 0;
};

nlohmann::json to_json(const StepMetrics& m);

struct TrainResult {
  std::vector<StepMetrics> steps;
  std::vector<std::filesystem::path> checkpoints;
  size_t ctc_skipped = 0;
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::ostream* metrics_log = nullptr;  // one JSON record per step
  size_t start_epoch = 0;               // epochs already completed
  std::function<void(const StepMetrics&)> on_step;
};

class Trainer {
 public:
  Trainer(SpeechTranslationModel& model, TrainConfig cfg);

  // Forward/backward over the batch, then one Adam step.
  StepMetrics train_step(const std::vector<const Example*>& batch, size_t epoch);
  TrainResult train(const Dataset& data, const TrainOptions& opts = {});

  const OptimizerState& optimizer() const { return opt_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  SpeechTranslationModel& model_;
  TrainConfig cfg_;
  OptimizerState opt_;
  size_t ctc_skipped_ = 0;
};

// Teacher-forced next-token accuracy (including eos) over a dataset.
double teacher_forced_accuracy(const SpeechTranslationModel& model, const Dataset& data);

}  // namespace sttk
