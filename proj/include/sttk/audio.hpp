#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "sttk/manifest.hpp"
#include "sttk/rng.hpp"

namespace sttk {

inline constexpr size_t kMelChannels = 80;

// frames x 80 log-mel energies, row-major.
struct FeatureMatrix {
  size_t frames = 0;
  std::vector<double> values;

  static constexpr size_t channels = kMelChannels;

  FeatureMatrix() = default;
  explicit FeatureMatrix(size_t n_frames, double fill = 0.0)
      : frames(n_frames), values(n_frames * channels, fill) {}

  double& at(size_t t, size_t c) { return values[t * channels + c]; }
  double at(size_t t, size_t c) const { return values[t * channels + c]; }
};

struct FrontendConfig {
  double sample_rate = 16000.0;
  double frame_length_ms = 25.0;
  double frame_shift_ms = 10.0;
  size_t fft_size = 512;
  double mel_low = 20.0;
  double mel_high = 8000.0;  // Nyquist at 16 kHz
  double log_floor = 1e-10;

  size_t window_samples() const;
  size_t shift_samples() const;
  // Throws ConfigError when the invariants do not hold.
  void validate() const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// 80 x (fft_size/2 + 1) triangular filters, equally spaced on the mel scale.
std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg);
double mel_center_hz(const FrontendConfig& cfg, size_t channel);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& buf);

size_t logmel_frame_count(size_t samples, const FrontendConfig& cfg);
// Hann window -> FFT -> power -> mel filters -> log(max(e, floor)).
FeatureMatrix logmel(std::span<const double> waveform,
                     const FrontendConfig& cfg = {});

// Per-utterance mean/variance normalization of each channel.
void normalize_utterance(FeatureMatrix& f);

struct SpecAugmentPolicy {
  size_t n_freq_masks = 2;
  size_t max_freq_width = 8;
  size_t n_time_masks = 2;
  double max_time_fraction = 0.05;
  double mask_value = 0.0;

  void validate() const;
};

// A masked rectangle: frames [t0, t1) x channels [c0, c1).
struct MaskRect {
  size_t t0, t1, c0, c1;
};

struct SpecAugmentResult {
  FeatureMatrix features;
  std::vector<MaskRect> masks;
};

SpecAugmentResult spec_augment(const FeatureMatrix& f,
                               const SpecAugmentPolicy& policy,
                               RngStream& rng);

inline constexpr size_t kMinUtteranceFrames = 5;
inline constexpr size_t kMaxUtteranceFrames = 3000;

// Keeps entries with 5 <= n_frames <= 3000, preserving order.
std::vector<ManifestEntry> filter_utterances(const std::vector<ManifestEntry>& entries);

// Single-channel 16-bit PCM WAV. Samples are scaled to [-1, 1).
struct Waveform {
  double sample_rate = 16000.0;
  std::vector<double> samples;
};
Waveform read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const Waveform& wav);

// Feature cache: "STFB", u32 version, u32 frames, u32 channels, f32 payload.
inline constexpr uint32_t kFeatureCacheVersion = 1;
void write_features(const std::filesystem::path& path, const FeatureMatrix& f);
FeatureMatrix read_features(const std::filesystem::path& path);

}  // namespace sttk
