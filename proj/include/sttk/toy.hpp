#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sttk/audio.hpp"
#include "sttk/manifest.hpp"

namespace sttk {

// Synthetic speech-translation task: a source sentence is a sequence of
// letter symbols, its "audio" is a fixed random 80-dim pattern per symbol
// held for frames_per_token frames plus Gaussian noise, and its translation
// is the symbol-wise image under a bijection (optionally reversed).
struct ToyTaskConfig {
  size_t n_symbols = 20;
  size_t min_length = 3;
  size_t max_length = 12;
  size_t frames_per_token = 4;
  double noise_std = 0.1;
  // mapping[i] is the target symbol for source symbol i. Empty selects
  // i -> (3i + 7) mod n_symbols.
  std::vector<size_t> mapping;
  bool reverse = false;
  size_t train_size = 2000;
  size_t dev_size = 200;
  size_t test_size = 200;
  uint64_t seed = 1;

  void validate() const;
  std::vector<size_t> resolved_mapping() const;
};

std::string toy_symbol(size_t index);

struct ToySample {
  std::vector<size_t> source;  // symbol indices
  std::string transcript;
  std::string translation;
  FeatureMatrix features;
};

// Deterministic in (cfg, split, index). Consecutive source symbols differ.
ToySample toy_sample(const ToyTaskConfig& cfg, const std::string& split, size_t index);

struct ToyCorpus {
  std::filesystem::path train, dev, test;  // manifest paths
};

// Writes <dir>/{train,dev,test}.tsv and feature files under <dir>/feats.
ToyCorpus toy_generate(const ToyTaskConfig& cfg, const std::filesystem::path& dir);

}  // namespace sttk
