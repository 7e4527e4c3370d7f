#include "sttk/toy.hpp"

#include <algorithm>
#include <set>

#include "sttk/errors.hpp"
#include "sttk/rng.hpp"

namespace sttk {

namespace {

uint64_t split_key(const std::string& split) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : split) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::vector<double> symbol_pattern(uint64_t seed, size_t symbol) {
  RngStream rng = RngStream(mix_seed(seed, 0x9A77E3ULL)).derive(symbol);
  std::vector<double> p(kMelChannels);
  for (double& x : p) x = rng.normal();
  return p;
}

std::string join_symbols(const std::vector<size_t>& seq) {
  std::string out;
  for (size_t i = 0; i < seq.size(); ++i) {
    if (i) out.push_back(' ');
    out += toy_symbol(seq[i]);
  }
  return out;
}

}  // namespace

void ToyTaskConfig::validate() const {
  if (n_symbols < 2 || n_symbols > 26) throw ConfigError("toy: n_symbols must be in [2, 26]");
  if (min_length < 1 || min_length > max_length) throw ConfigError("toy: need 1 <= min_length <= max_length");
  if (frames_per_token < 1) throw ConfigError("toy: frames_per_token must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("toy: noise_std must be >= 0");
  if (train_size < 1 || dev_size < 1 || test_size < 1) throw ConfigError("toy: split sizes must be >= 1");
  if (!mapping.empty()) {
    if (mapping.size() != n_symbols) throw ConfigError("toy: mapping must cover every symbol");
    const std::set<size_t> image(mapping.begin(), mapping.end());
    if (image.size() != n_symbols || *image.rbegin() >= n_symbols) {
      throw ConfigError("toy: mapping is not a bijection");
    }
  }
}

std::vector<size_t> ToyTaskConfig::resolved_mapping() const {
  if (!mapping.empty()) return mapping;
  std::vector<size_t> m(n_symbols);
  for (size_t i = 0; i < n_symbols; ++i) m[i] = (3 * i + 7) % n_symbols;
  // 3 must be invertible modulo n_symbols for this to be a bijection.
  if (std::set<size_t>(m.begin(), m.end()).size() != n_symbols) {
    for (size_t i = 0; i < n_symbols; ++i) m[i] = (i + 7) % n_symbols;
  }
  return m;
}

std::string toy_symbol(size_t index) { return std::string(1, static_cast<char>('a' + index)); }

ToySample toy_sample(const ToyTaskConfig& cfg, const std::string& split, size_t index) {
  RngStream rng = RngStream(mix_seed(cfg.seed, split_key(split))).derive(index);
  const auto len = static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(cfg.min_length),
                                                       static_cast<int64_t>(cfg.max_length)));
  ToySample s;
  for (size_t i = 0; i < len; ++i) {
    size_t sym;
    do {
      sym = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(cfg.n_symbols) - 1));
    } while (!s.source.empty() && sym == s.source.back());
    s.source.push_back(sym);
  }
  const auto mapping = cfg.resolved_mapping();
  std::vector<size_t> target;
  for (size_t sym : s.source) target.push_back(mapping[sym]);
  if (cfg.reverse) std::reverse(target.begin(), target.end());
  s.transcript = join_symbols(s.source);
  s.translation = join_symbols(target);

  s.features = FeatureMatrix(len * cfg.frames_per_token);
  for (size_t i = 0; i < len; ++i) {
    const auto pattern = symbol_pattern(cfg.seed, s.source[i]);
    for (size_t f = 0; f < cfg.frames_per_token; ++f) {
      const size_t t = i * cfg.frames_per_token + f;
      for (size_t c = 0; c < kMelChannels; ++c) {
        s.features.at(t, c) = pattern[c] + (cfg.noise_std > 0.0 ? rng.normal(0.0, cfg.noise_std) : 0.0);
      }
    }
  }
  return s;
}

ToyCorpus toy_generate(const ToyTaskConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir / "feats");
  auto write_split = [&](const std::string& split, size_t count) {
    std::vector<ManifestEntry> entries;
    for (size_t i = 0; i < count; ++i) {
      ToySample s = toy_sample(cfg, split, i);
      const std::string id = split + "_" + std::to_string(i);
      const std::string rel = "feats/" + id + ".stfb";
      write_features(dir / rel, s.features);
      entries.push_back({id, rel, s.features.frames, s.transcript, s.translation});
    }
    const auto path = dir / (split + ".tsv");
    write_manifest(path, entries);
    return path;
  };
  ToyCorpus out;
  out.train = write_split("train", cfg.train_size);
  out.dev = write_split("dev", cfg.dev_size);
  out.test = write_split("test", cfg.test_size);
  return out;
}

}  // namespace sttk
