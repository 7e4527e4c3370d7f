#pragma once

#include <cstdint>
#include <random>

namespace sttk {

// Deterministic random stream. Draws are produced from raw mt19937_64 output
// with our own transforms, so sequences match across standard libraries
// (std:: distributions are implementation-defined).
class RngStream {
 public:
  explicit RngStream(uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }
  static constexpr const char* algorithm() { return "mt19937_64"; }

  uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);
  double normal(double mean = 0.0, double stddev = 1.0);

  // Child stream whose seed mixes this stream's seed with `key`; does not
  // advance this stream.
  RngStream derive(uint64_t key) const;

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace sttk
