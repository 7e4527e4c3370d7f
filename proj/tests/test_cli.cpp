#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sttk/bleu.hpp"
#include "sttk/checkpoint.hpp"
#include "sttk/cli.hpp"
#include "sttk/errors.hpp"
#include "sttk/manifest.hpp"
#include "sttk/model.hpp"
#include "sttk/toy.hpp"

using namespace sttk;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sttk_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sttk");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_tab(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
  return fields;
}

}  // namespace

TEST(Bleu, WorkedShortHypothesisExample) {
  const BleuStats s = corpus_bleu_stats({"a b c d"}, {"a b c d e"});
  for (double p : s.precisions) EXPECT_DOUBLE_EQ(p, 1.0);
  EXPECT_NEAR(s.brevity_penalty, std::exp(1.0 - 5.0 / 4.0), 1e-15);
  EXPECT_NEAR(s.bleu, 77.88, 0.01);
  EXPECT_EQ(s.hyp_length, 4u);
  EXPECT_EQ(s.ref_length, 5u);
}

TEST(Bleu, PerfectMatchIsExactlyHundred) {
  EXPECT_EQ(corpus_bleu({"a b c d e"}, {"a b c d e"}), 100.0);
  EXPECT_EQ(corpus_bleu({"x", "hello there world", "a b"}, {"x", "hello there world", "a b"}), 100.0);
  RngStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> corpus;
    const auto n = rng.uniform_int(1, 6);
    for (int i = 0; i < n; ++i) {
      std::string s;
      const auto words = rng.uniform_int(1, 9);
      for (int w = 0; w < words; ++w) s += (w ? " " : "") + std::string(1, static_cast<char>('a' + rng.uniform_int(0, 5)));
      corpus.push_back(s);
    }
    EXPECT_EQ(corpus_bleu(corpus, corpus), 100.0);
  }
}

TEST(Bleu, EmptyHypothesesScoreZero) {
  EXPECT_EQ(corpus_bleu({"", ""}, {"a b", "c d e"}), 0.0);
}

TEST(Bleu, CaseSensitiveAndSmoothed) {
  EXPECT_LT(corpus_bleu({"A b c d"}, {"a b c d"}), 100.0);
  // No 4-gram match in a 3-token corpus still yields a positive score.
  const BleuStats s = corpus_bleu_stats({"a b c"}, {"a b c"});
  EXPECT_GT(s.bleu, 0.0);
  EXPECT_DOUBLE_EQ(s.precisions[3], 1.0);
}

TEST(Bleu, InvariantToPairPermutation) {
  const std::vector<std::string> hyp{"the cat sat", "a dog ran off", "on the mat", "x y"};
  const std::vector<std::string> ref{"the cat sat down", "the dog ran", "on a mat", "x y z"};
  const double base = corpus_bleu(hyp, ref);
  const std::vector<size_t> perm{2, 0, 3, 1};
  std::vector<std::string> h2, r2;
  for (size_t i : perm) {
    h2.push_back(hyp[i]);
    r2.push_back(ref[i]);
  }
  EXPECT_DOUBLE_EQ(corpus_bleu(h2, r2), base);
}

TEST(Bleu, CountMismatchAndEmptyCorpus) {
  EXPECT_THROW(corpus_bleu({"a"}, {"a", "b"}), DimensionError);
  EXPECT_THROW(corpus_bleu({}, {}), ContractError);
}

TEST(EditAccuracy, Examples) {
  EXPECT_EQ(edit_distance({1, 2, 3}, {1, 3}), 1u);
  EXPECT_EQ(edit_distance({}, {4, 5}), 2u);
  EXPECT_DOUBLE_EQ(edit_accuracy({1, 2, 3}, {1, 2, 3}), 1.0);
  EXPECT_DOUBLE_EQ(edit_accuracy({1, 3}, {1, 2, 3, 4}), 0.5);
  EXPECT_DOUBLE_EQ(edit_accuracy({9, 9, 9, 9, 9, 9}, {1}), 0.0);
}

TEST(Toy, DeterministicUnderSeed) {
  ToyTaskConfig cfg;
  cfg.noise_std = 0.0;
  for (size_t i = 0; i < 10; ++i) {
    const ToySample a = toy_sample(cfg, "train", i), b = toy_sample(cfg, "train", i);
    EXPECT_EQ(a.source, b.source);
    EXPECT_EQ(a.features.values, b.features.values);
  }
  const fs::path d1 = temp_dir("toy1"), d2 = temp_dir("toy2");
  cfg.train_size = cfg.dev_size = cfg.test_size = 3;
  toy_generate(cfg, d1);
  toy_generate(cfg, d2);
  for (const char* split : {"train.tsv", "dev.tsv", "test.tsv"}) EXPECT_EQ(read_lines(d1 / split), read_lines(d2 / split));
  const Manifest m1 = read_manifest(d1 / "train.tsv"), m2 = read_manifest(d2 / "train.tsv");
  for (size_t i = 0; i < m1.entries.size(); ++i)
    EXPECT_EQ(read_features(m1.resolve(m1.entries[i])).values, read_features(m2.resolve(m2.entries[i])).values);
}

TEST(Toy, FramesFollowTokenCount) {
  ToyTaskConfig cfg;
  cfg.min_length = cfg.max_length = 5;
  const ToySample s = toy_sample(cfg, "dev", 0);
  ASSERT_EQ(s.source.size(), 5u);
  EXPECT_EQ(s.features.frames, 20u);
  EXPECT_EQ(downsampled_length(s.features.frames), 5u);
}

TEST(Toy, SourcesAvoidAdjacentRepeatsAndRespectLengths) {
  const ToyTaskConfig cfg;
  for (size_t i = 0; i < 300; ++i) {
    const ToySample s = toy_sample(cfg, "train", i);
    EXPECT_GE(s.source.size(), 3u);
    EXPECT_LE(s.source.size(), 12u);
    for (size_t k = 1; k < s.source.size(); ++k) EXPECT_NE(s.source[k], s.source[k - 1]);
  }
}

TEST(Toy, MappingAndReversal) {
  ToyTaskConfig cfg;
  const auto mapping = cfg.resolved_mapping();
  for (size_t i = 0; i < 20; ++i) EXPECT_EQ(mapping[i], (3 * i + 7) % 20);
  const ToySample s = toy_sample(cfg, "train", 4);
  std::string expected;
  for (size_t k = 0; k < s.source.size(); ++k) expected += (k ? " " : "") + toy_symbol(mapping[s.source[k]]);
  EXPECT_EQ(s.translation, expected);

  cfg.mapping.resize(20);
  for (size_t i = 0; i < 20; ++i) cfg.mapping[i] = i;
  for (size_t i = 0; i < 20; ++i) {
    const ToySample t = toy_sample(cfg, "test", i);
    EXPECT_EQ(t.transcript, t.translation);
  }
  cfg.reverse = true;
  const ToySample r = toy_sample(cfg, "test", 0);
  std::string reversed;
  for (size_t k = r.source.size(); k-- > 0;) reversed += (k + 1 < r.source.size() ? " " : "") + toy_symbol(r.source[k]);
  EXPECT_EQ(r.translation, reversed);
}

TEST(Toy, InvalidConfigsRejected) {
  ToyTaskConfig cfg;
  cfg.mapping = std::vector<size_t>(20, 0);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.train_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.min_length = 5;
  cfg.max_length = 4;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Manifest, RoundTripAndResolution) {
  const fs::path dir = temp_dir("manifest");
  const std::vector<ManifestEntry> entries{{"u1", "feats/u1.stfb", 12, "Hello, world", "hallo welt"},
                                           {"u2", "/abs/u2.stfb", std::nullopt, "x", "y"}};
  write_manifest(dir / "m.tsv", entries);
  const Manifest m = read_manifest(dir / "m.tsv");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].id, "u1");
  EXPECT_EQ(m.entries[0].n_frames, 12u);
  EXPECT_EQ(m.entries[0].transcript, "Hello, world");
  EXPECT_FALSE(m.entries[1].n_frames.has_value());
  EXPECT_EQ(m.resolve(m.entries[0]), dir / "feats/u1.stfb");
  EXPECT_EQ(m.resolve(m.entries[1]), fs::path("/abs/u2.stfb"));
}

TEST(Manifest, MalformedFilesRejected) {
  const fs::path dir = temp_dir("manifest_bad");
  std::ofstream(dir / "noheader.tsv") << "u1\tf\t10\ta\tb\n";
  EXPECT_THROW(read_manifest(dir / "noheader.tsv"), ManifestError);
  std::ofstream(dir / "fields.tsv") << "id\tfeatures\tn_frames\ttranscript\ttranslation\nu1\tf\t10\n";
  EXPECT_THROW(read_manifest(dir / "fields.tsv"), ManifestError);
  std::ofstream(dir / "frames.tsv") << "id\tfeatures\tn_frames\ttranscript\ttranslation\nu1\tf\t1x\ta\tb\n";
  EXPECT_THROW(read_manifest(dir / "frames.tsv"), ManifestError);
  EXPECT_THROW(read_manifest(dir / "missing.tsv"), ManifestError);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"bleu", "--no-such-flag"}).code, 2);
  EXPECT_EQ(cli({"decode"}).code, 2);  // required options missing
  const CliRun r = cli({"toy-gen", "--bogus", "1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("usage"), std::string::npos);
}

TEST(Cli, HelpExitsZero) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"decode", "--help"}).code, 0);
}

TEST(Cli, RuntimeFailuresExitOneWithDiagnostic) {
  const CliRun r = cli({"bleu", "--hyp", "/nonexistent/h.txt", "--ref", "/nonexistent/r.txt"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST(Cli, BleuFromFiles) {
  const fs::path dir = temp_dir("bleu");
  std::ofstream(dir / "h.txt") << "a b c d\n";
  std::ofstream(dir / "r.txt") << "a b c d e\n";
  const CliRun r = cli({"bleu", "--hyp", (dir / "h.txt").string(), "--ref", (dir / "r.txt").string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out.rfind("BLEU = 77.88", 0), 0u) << r.out;
}

TEST(Cli, GradcheckAndCtcOracleSubcommands) {
  const CliRun g = cli({"gradcheck"});
  EXPECT_EQ(g.code, 0) << g.err;
  EXPECT_NE(g.out.find("tiny_model"), std::string::npos);
  const CliRun c = cli({"ctc-oracle", "--trials", "5"});
  EXPECT_EQ(c.code, 0) << c.err;
  EXPECT_NE(c.out.find("disagreements 0"), std::string::npos);
}

// Runs every data-handling subcommand end to end on a small toy corpus.
TEST(Cli, EndToEndToyPipeline) {
  const fs::path dir = temp_dir("pipeline");
  const std::string toy = (dir / "toy").string(), prep = (dir / "prep").string(),
                    prep_test = (dir / "prep_test").string(), run = (dir / "run").string(),
                    ft = (dir / "ft").string();

  CliRun r = cli({"toy-gen", "--out", toy, "--train", "16", "--dev", "2", "--test", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli({"prepare", "--manifest", toy + "/train.tsv", "--out", prep});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(prep + "/vocab.txt"));
  EXPECT_TRUE(fs::exists(prep + "/merges.txt"));
  r = cli({"prepare", "--manifest", toy + "/test.tsv", "--out", prep_test, "--subwords", prep});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_manifest(prep_test + "/manifest.tsv").entries.size(), 3u);

  {
    std::ofstream cfg(dir / "cfg.json");
    cfg << R"({"variant": "sate", "enc_layers": 2, "acoustic_layers": 1, "textual_layers": 1,
               "dec_layers": 1, "hidden": 16, "heads": 2, "ffn": 32, "epochs": 2,
               "batch_frames": 200, "warmup_steps": 5, "normalize_features": false})";
  }
  r = cli({"train", "--config", (dir / "cfg.json").string(), "--manifest", prep + "/manifest.tsv", "--subwords",
           prep, "--out", run, "--log-every", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  const fs::path ck1 = epoch_checkpoint_path(run, 1), ck2 = epoch_checkpoint_path(run, 2);
  ASSERT_TRUE(fs::exists(ck2));
  EXPECT_TRUE(fs::exists(fs::path(run) / "train_config.json"));
  const auto metrics = read_lines(fs::path(run) / "metrics.jsonl");
  ASSERT_FALSE(metrics.empty());
  for (const char* key : {"\"step\"", "\"lr\"", "\"ce\"", "\"ctc\"", "\"total\""})
    EXPECT_NE(metrics[0].find(key), std::string::npos) << key;

  r = cli({"finetune", "--checkpoint", ck2.string(), "--manifest", prep + "/manifest.tsv", "--subwords", prep,
           "--out", ft, "--epochs", "1", "--log-every", "0"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(epoch_checkpoint_path(ft, 1)));

  const std::string avg = (dir / "avg.stck").string();
  r = cli({"average", "--dir", run, "--out", avg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_checkpoint(avg).metadata.at("averaged_count"), 2);
  r = cli({"average", "--inputs", ck1.string(), ck2.string(), "--out", (dir / "avg2.stck").string()});
  ASSERT_EQ(r.code, 0) << r.err;

  const std::string decoded = (dir / "decoded.tsv").string();
  r = cli({"decode", "--checkpoint", avg, "--manifest", prep_test + "/manifest.tsv", "--subwords", prep,
           "--beam", "3", "--output", decoded});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto single = read_lines(decoded);
  ASSERT_EQ(single.size(), 3u);
  for (const auto& line : single) EXPECT_EQ(split_tab(line).size(), 3u) << line;

  std::vector<std::string> ens{"ensemble-decode", "--checkpoints"};
  for (int k = 0; k < 6; ++k) ens.push_back(avg);
  ens.insert(ens.end(), {"--manifest", prep_test + "/manifest.tsv", "--subwords", prep, "--beam", "3"});
  r = cli(ens);
  ASSERT_EQ(r.code, 0) << r.err;
  std::string single_text;
  for (const auto& line : single) single_text += line + "\n";
  std::istringstream ens_lines(r.out);
  size_t i = 0;
  for (std::string line; std::getline(ens_lines, line); ++i) {
    ASSERT_LT(i, single.size());
    EXPECT_EQ(split_tab(line)[1], split_tab(single[i])[1]);
  }
  EXPECT_EQ(i, single.size());

  r = cli({"ctc-decode", "--checkpoint", avg, "--manifest", prep_test + "/manifest.tsv", "--subwords", prep});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("ctc token accuracy"), std::string::npos);

  r = cli({"bleu", "--decoded", decoded, "--manifest", prep_test + "/manifest.tsv"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("BLEU = ", 0), 0u);

  r = cli({"decode", "--checkpoint", (dir / "missing.stck").string(), "--manifest", prep_test + "/manifest.tsv",
           "--subwords", prep});
  EXPECT_EQ(r.code, 1);
}
