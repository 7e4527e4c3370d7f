#include "sttk/audio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "sttk/detail/binary_io.hpp"
#include "sttk/errors.hpp"

namespace sttk {

namespace {

bool is_power_of_two(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

}  // namespace

size_t FrontendConfig::window_samples() const {
  return static_cast<size_t>(std::lround(sample_rate * frame_length_ms / 1000.0));
}

size_t FrontendConfig::shift_samples() const {
  return static_cast<size_t>(std::lround(sample_rate * frame_shift_ms / 1000.0));
}

void FrontendConfig::validate() const {
  if (!is_power_of_two(fft_size)) {
    throw ConfigError("frontend: fft_size " + std::to_string(fft_size) + " is not a power of two");
  }
  if (fft_size < window_samples()) {
    throw ConfigError("frontend: fft_size smaller than the analysis window");
  }
  if (window_samples() == 0 || shift_samples() == 0) {
    throw ConfigError("frontend: frame length and shift must be positive");
  }
  if (!(mel_low >= 0.0 && mel_low < mel_high && mel_high <= sample_rate / 2.0)) {
    throw ConfigError("frontend: need 0 <= mel_low < mel_high <= sample_rate/2");
  }
  if (!(log_floor > 0.0)) throw ConfigError("frontend: log_floor must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

double mel_center_hz(const FrontendConfig& cfg, size_t channel) {
  const double lo = hz_to_mel(cfg.mel_low), hi = hz_to_mel(cfg.mel_high);
  const double step = (hi - lo) / static_cast<double>(kMelChannels + 1);
  return mel_to_hz(lo + step * static_cast<double>(channel + 1));
}

std::vector<std::vector<double>> mel_filterbank(const FrontendConfig& cfg) {
  cfg.validate();
  const size_t bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.mel_low), hi = hz_to_mel(cfg.mel_high);
  const double step = (hi - lo) / static_cast<double>(kMelChannels + 1);
  std::vector<std::vector<double>> bank(kMelChannels, std::vector<double>(bins, 0.0));
  for (size_t j = 0; j < kMelChannels; ++j) {
    const double left = lo + step * static_cast<double>(j);
    const double center = left + step;
    const double right = center + step;
    for (size_t b = 0; b < bins; ++b) {
      const double hz = cfg.sample_rate * static_cast<double>(b) / static_cast<double>(cfg.fft_size);
      const double m = hz_to_mel(hz);
      if (m <= left || m >= right) continue;
      bank[j][b] = m <= center ? (m - left) / step : (right - m) / step;
    }
  }
  return bank;
}

void fft_inplace(std::vector<std::complex<double>>& buf) {
  const size_t n = buf.size();
  if (!is_power_of_two(n)) throw ContractError("fft: size must be a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(buf[i], buf[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(angle), std::sin(angle));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const auto u = buf[i + k];
        const auto v = buf[i + k + len / 2] * w;
        buf[i + k] = u + v;
        buf[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

size_t logmel_frame_count(size_t samples, const FrontendConfig& cfg) {
  const size_t window = cfg.window_samples();
  if (samples < window) return 0;
  return 1 + (samples - window) / cfg.shift_samples();
}

FeatureMatrix logmel(std::span<const double> waveform, const FrontendConfig& cfg) {
  cfg.validate();
  const size_t frames = logmel_frame_count(waveform.size(), cfg);
  if (frames == 0) {
    throw InputTooShortError("logmel: " + std::to_string(waveform.size()) +
                             " samples is shorter than one " +
                             std::to_string(cfg.window_samples()) + "-sample frame");
  }
  const size_t window = cfg.window_samples(), shift = cfg.shift_samples();
  std::vector<double> hann(window);
  for (size_t i = 0; i < window; ++i) {
    hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                   static_cast<double>(window));
  }
  const auto bank = mel_filterbank(cfg);
  const size_t bins = cfg.fft_size / 2 + 1;
  const double log_floor = std::log(cfg.log_floor);

  FeatureMatrix out(frames);
  std::vector<std::complex<double>> buf(cfg.fft_size);
  std::vector<double> power(bins);
  for (size_t t = 0; t < frames; ++t) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (size_t i = 0; i < window; ++i) buf[i] = waveform[t * shift + i] * hann[i];
    fft_inplace(buf);
    for (size_t b = 0; b < bins; ++b) power[b] = std::norm(buf[b]);
    for (size_t j = 0; j < kMelChannels; ++j) {
      double e = 0.0;
      for (size_t b = 0; b < bins; ++b) e += bank[j][b] * power[b];
      out.at(t, j) = e > cfg.log_floor ? std::log(e) : log_floor;
    }
  }
  return out;
}

void normalize_utterance(FeatureMatrix& f) {
  if (f.frames == 0) return;
  const double n = static_cast<double>(f.frames);
  for (size_t c = 0; c < FeatureMatrix::channels; ++c) {
    double mu = 0.0;
    for (size_t t = 0; t < f.frames; ++t) mu += f.at(t, c);
    mu /= n;
    double var = 0.0;
    for (size_t t = 0; t < f.frames; ++t) var += (f.at(t, c) - mu) * (f.at(t, c) - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    for (size_t t = 0; t < f.frames; ++t) f.at(t, c) = (f.at(t, c) - mu) * inv;
  }
}

void SpecAugmentPolicy::validate() const {
  if (max_freq_width > kMelChannels) {
    throw ConfigError("spec_augment: max_freq_width exceeds 80 channels");
  }
  if (!(max_time_fraction >= 0.0 && max_time_fraction <= 1.0)) {
    throw ConfigError("spec_augment: max_time_fraction must lie in [0, 1]");
  }
}

SpecAugmentResult spec_augment(const FeatureMatrix& f, const SpecAugmentPolicy& policy,
                               RngStream& rng) {
  policy.validate();
  SpecAugmentResult result{f, {}};
  FeatureMatrix& out = result.features;
  const size_t channels = FeatureMatrix::channels;

  for (size_t m = 0; m < policy.n_freq_masks; ++m) {
    const auto width = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(policy.max_freq_width)));
    const auto start = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(channels - width)));
    if (width == 0) continue;
    for (size_t t = 0; t < out.frames; ++t)
      for (size_t c = start; c < start + width; ++c) out.at(t, c) = policy.mask_value;
    result.masks.push_back({0, out.frames, start, start + width});
  }

  const auto max_time = static_cast<size_t>(
      std::floor(policy.max_time_fraction * static_cast<double>(out.frames)));
  for (size_t m = 0; m < policy.n_time_masks; ++m) {
    const auto width = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(max_time)));
    const auto start = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(out.frames - width)));
    if (width == 0) continue;
    for (size_t t = start; t < start + width; ++t)
      for (size_t c = 0; c < channels; ++c) out.at(t, c) = policy.mask_value;
    result.masks.push_back({start, start + width, 0, channels});
  }
  return result;
}

std::vector<ManifestEntry> filter_utterances(const std::vector<ManifestEntry>& entries) {
  std::vector<ManifestEntry> kept;
  for (const auto& e : entries) {
    if (!e.n_frames) throw ManifestError("filter: entry '" + e.id + "' has no frame count");
    if (*e.n_frames >= kMinUtteranceFrames && *e.n_frames <= kMaxUtteranceFrames) {
      kept.push_back(e);
    }
  }
  return kept;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open wav " + path.string());
  detail::expect_magic(in, "RIFF");
  detail::read_le<uint32_t>(in, "riff size");
  detail::expect_magic(in, "WAVE");
  Waveform wav;
  bool have_fmt = false;
  while (true) {
    char id[4];
    if (!in.read(id, 4)) throw FormatError(path.string() + ": no data chunk");
    const auto size = detail::read_le<uint32_t>(in, "chunk size");
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      const auto format = detail::read_le<uint16_t>(in, "format");
      const auto channels = detail::read_le<uint16_t>(in, "channels");
      const auto rate = detail::read_le<uint32_t>(in, "sample rate");
      detail::read_le<uint32_t>(in, "byte rate");
      detail::read_le<uint16_t>(in, "block align");
      const auto bits = detail::read_le<uint16_t>(in, "bits");
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(path.string() + ": only mono 16-bit PCM is supported");
      }
      wav.sample_rate = rate;
      in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw FormatError(path.string() + ": data chunk before fmt");
      wav.samples.resize(size / 2);
      for (double& s : wav.samples) s = detail::read_le<int16_t>(in, "sample") / 32768.0;
      return wav;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& wav) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write wav " + path.string());
  const auto data_bytes = static_cast<uint32_t>(wav.samples.size() * 2);
  const auto rate = static_cast<uint32_t>(wav.sample_rate);
  out.write("RIFF", 4);
  detail::write_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  detail::write_le<uint32_t>(out, 16);
  detail::write_le<uint16_t>(out, 1);
  detail::write_le<uint16_t>(out, 1);
  detail::write_le<uint32_t>(out, rate);
  detail::write_le<uint32_t>(out, rate * 2);
  detail::write_le<uint16_t>(out, 2);
  detail::write_le<uint16_t>(out, 16);
  out.write("data", 4);
  detail::write_le<uint32_t>(out, data_bytes);
  for (double s : wav.samples) {
    const double clipped = std::clamp(s, -1.0, 32767.0 / 32768.0);
    detail::write_le<int16_t>(out, static_cast<int16_t>(std::lround(clipped * 32768.0)));
  }
}

void write_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write features " + path.string());
  out.write("STFB", 4);
  detail::write_le<uint32_t>(out, kFeatureCacheVersion);
  detail::write_le<uint32_t>(out, static_cast<uint32_t>(f.frames));
  detail::write_le<uint32_t>(out, static_cast<uint32_t>(FeatureMatrix::channels));
  for (double v : f.values) detail::write_le<float>(out, static_cast<float>(v));
}

FeatureMatrix read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open features " + path.string());
  detail::expect_magic(in, "STFB");
  const auto version = detail::read_le<uint32_t>(in, "version");
  if (version != kFeatureCacheVersion) {
    throw FormatError(path.string() + ": unsupported feature cache version " + std::to_string(version));
  }
  const auto frames = detail::read_le<uint32_t>(in, "frames");
  const auto channels = detail::read_le<uint32_t>(in, "channels");
  if (channels != FeatureMatrix::channels) {
    throw FormatError(path.string() + ": expected 80 channels, found " + std::to_string(channels));
  }
  if (frames == 0) throw FormatError(path.string() + ": zero frames");
  FeatureMatrix f(frames);
  for (double& v : f.values) v = detail::read_le<float>(in, "feature payload");
  return f;
}

}  // namespace sttk
