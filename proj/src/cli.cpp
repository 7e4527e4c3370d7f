#include "sttk/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "sttk/bleu.hpp"
#include "sttk/checkpoint.hpp"
#include "sttk/decode.hpp"
#include "sttk/diagnostics.hpp"
#include "sttk/errors.hpp"
#include "sttk/toy.hpp"
#include "sttk/train.hpp"

namespace sttk {

namespace fs = std::filesystem;

namespace {

SubwordModel load_subwords(const fs::path& dir) {
  return SubwordModel::load(dir / "vocab.txt", dir / "merges.txt");
}

std::string format_score(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::unique_ptr<std::ostream> open_output(const std::string& path, std::ostream& fallback,
                                          std::ostream*& target) {
  if (path.empty()) {
    target = &fallback;
    return nullptr;
  }
  auto file = std::make_unique<std::ofstream>(path);
  if (!*file) throw FormatError("cannot write " + path);
  target = file.get();
  return file;
}

struct LoadedModel {
  std::unique_ptr<SpeechTranslationModel> model;
  bool normalize_features = true;
};

LoadedModel load_model(const fs::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  LoadedModel m;
  m.model = model_from_checkpoint(ckpt);
  m.normalize_features = ckpt.metadata.value("normalize_features", true);
  return m;
}

// Examples for inference: every manifest entry that passes the frame
// filter, CTC feasibility not required.
Dataset load_eval_set(const fs::path& manifest, const SubwordModel& sw, bool normalize) {
  return load_dataset(read_manifest(manifest), sw, normalize, false);
}

void check_vocab(const SpeechTranslationModel& model, const SubwordModel& sw, const std::string& what) {
  if (model.config().vocab_size != sw.vocab.size()) {
    throw IncompatibleCheckpointsError(what + " has vocab_size " +
                                       std::to_string(model.config().vocab_size) +
                                       " but the subword vocabulary has " +
                                       std::to_string(sw.vocab.size()) + " entries");
  }
}

struct DecodeArgs {
  std::string manifest, subwords, output;
  DecodeConfig cfg;
};

void add_decode_options(CLI::App* cmd, DecodeArgs& a) {
  cmd->add_option("--manifest", a.manifest, "Manifest to decode")->required();
  cmd->add_option("--subwords", a.subwords, "Directory with vocab.txt and merges.txt")->required();
  cmd->add_option("--beam", a.cfg.beam, "Beam size")->capture_default_str();
  cmd->add_option("--lennorm", a.cfg.lennorm_beta, "Length normalization exponent")->capture_default_str();
  cmd->add_option("--max-len-factor", a.cfg.max_len_factor,
                  "Output cap as a multiple of the downsampled source length (plus 10)")
      ->capture_default_str();
  cmd->add_option("--output", a.output, "Output file (default stdout)");
}

void run_decode(const std::vector<std::string>& checkpoints, const DecodeArgs& a, std::ostream& out) {
  a.cfg.validate();
  const SubwordModel sw = load_subwords(a.subwords);
  std::vector<LoadedModel> models;
  for (const auto& p : checkpoints) {
    models.push_back(load_model(p));
    check_vocab(*models.back().model, sw, p);
  }
  const Manifest manifest = read_manifest(a.manifest);
  const auto kept = filter_utterances(manifest.entries);
  std::ostream* sink = nullptr;
  auto file = open_output(a.output, out, sink);
  NoGradGuard no_grad;
  for (const auto& entry : kept) {
    const FeatureMatrix raw = read_features(manifest.resolve(entry));
    std::vector<Tensor> memories;
    std::vector<StepFn> steps;
    size_t src_len = 0;
    for (const auto& m : models) {
      FeatureMatrix f = raw;
      if (m.normalize_features) normalize_utterance(f);
      const EncoderOutput enc = m.model->encode(f);
      src_len = enc.out_length;
      steps.push_back(model_step_fn(*m.model, enc.memory));
    }
    const BeamResult res = beam_search(steps, a.cfg.max_length(src_len), a.cfg);
    const Hypothesis& best = res.best();
    *sink << entry.id << '\t' << decode(sw, best.tokens) << '\t' << format_score(best.norm_score) << '\n';
  }
}

TrainConfig load_config_or_default(const std::string& path) {
  return path.empty() ? TrainConfig{} : load_train_config(path);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct TrainArgs {
  std::string config, manifest, subwords, out_dir;
  size_t epochs = 0, max_steps = 0, batch_frames = 0, log_every = 50;
  uint64_t seed = 0;
  std::string variant;
  double lr = 0.0;
  CLI::Option *epochs_opt, *max_steps_opt, *batch_opt, *seed_opt, *variant_opt, *lr_opt;
};

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->add_option("--config", a.config, "Flat JSON training config");
  cmd->add_option("--manifest", a.manifest, "Training manifest")->required();
  cmd->add_option("--subwords", a.subwords, "Directory with vocab.txt and merges.txt")->required();
  cmd->add_option("--out", a.out_dir, "Output directory for checkpoints and logs")->required();
  a.epochs_opt = cmd->add_option("--epochs", a.epochs, "Override epoch count");
  a.max_steps_opt = cmd->add_option("--max-steps", a.max_steps, "Stop after this many updates");
  a.batch_opt = cmd->add_option("--batch-frames", a.batch_frames, "Frame budget per batch");
  a.seed_opt = cmd->add_option("--seed", a.seed, "Random seed");
  a.variant_opt = cmd->add_option("--variant", a.variant, "baseline | conformer | conformer_rpe | sate");
  a.lr_opt = cmd->add_option("--lr", a.lr, "Peak learning rate");
  cmd->add_option("--log-every", a.log_every, "Progress line interval in steps (0 disables)")
      ->capture_default_str();
}

void apply_overrides(const TrainArgs& a, TrainConfig& cfg) {
  if (a.epochs_opt->count()) cfg.epochs = a.epochs;
  if (a.max_steps_opt->count()) cfg.max_steps = a.max_steps;
  if (a.batch_opt->count()) cfg.batch_frames = a.batch_frames;
  if (a.seed_opt->count()) cfg.seed = a.seed;
  if (a.variant_opt->count()) cfg.model.variant = parse_variant(a.variant);
  if (a.lr_opt->count()) cfg.schedule.base_lr = a.lr;
}

void run_training(SpeechTranslationModel& model, const TrainConfig& cfg, const TrainArgs& a,
                  const SubwordModel& sw, size_t start_epoch, std::ostream& out) {
  const Dataset data = load_dataset(read_manifest(a.manifest), sw, cfg.normalize_features);
  fs::create_directories(a.out_dir);
  write_json(fs::path(a.out_dir) / "train_config.json", nlohmann::json(cfg));
  std::ofstream log(fs::path(a.out_dir) / "metrics.jsonl");
  if (!log) throw FormatError("cannot write metrics log in " + a.out_dir);
  Trainer trainer(model, cfg);
  TrainOptions opts;
  opts.checkpoint_dir = a.out_dir;
  opts.metrics_log = &log;
  opts.start_epoch = start_epoch;
  if (a.log_every > 0) {
    opts.on_step = [&out, every = a.log_every](const StepMetrics& m) {
      if (m.step % every == 0) {
        out << "epoch " << m.epoch << " step " << m.step << " lr " << m.lr << " ce " << m.ce << " ctc "
            << m.ctc << " total " << m.total << '\n';
      }
    };
  }
  const TrainResult res = trainer.train(data, opts);
  out << "trained " << res.steps.size() << " steps on " << data.examples.size() << " utterances ("
      << data.filtered_by_length << " filtered by length, " << data.ctc_infeasible
      << " dropped as CTC-infeasible); " << res.checkpoints.size() << " checkpoint(s) in " << a.out_dir
      << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Speech translation toolkit"};
  app.name("sttk");
  app.require_subcommand(1);

  // toy-gen
  ToyTaskConfig toy;
  std::string toy_out;
  bool toy_identity = false;
  auto* toy_cmd = app.add_subcommand("toy-gen", "Generate the synthetic toy corpus");
  toy_cmd->add_option("--out", toy_out, "Output directory")->required();
  toy_cmd->add_option("--seed", toy.seed)->capture_default_str();
  toy_cmd->add_option("--train", toy.train_size)->capture_default_str();
  toy_cmd->add_option("--dev", toy.dev_size)->capture_default_str();
  toy_cmd->add_option("--test", toy.test_size)->capture_default_str();
  toy_cmd->add_option("--noise", toy.noise_std)->capture_default_str();
  toy_cmd->add_option("--frames-per-token", toy.frames_per_token)->capture_default_str();
  toy_cmd->add_option("--min-length", toy.min_length)->capture_default_str();
  toy_cmd->add_option("--max-length", toy.max_length)->capture_default_str();
  toy_cmd->add_flag("--reverse", toy.reverse, "Reverse the translation");
  toy_cmd->add_flag("--identity", toy_identity, "Identity symbol mapping");

  // prepare
  std::string prep_manifest, prep_out, prep_subwords;
  size_t prep_vocab = 200;
  auto* prep_cmd = app.add_subcommand("prepare", "Compute features, filter by length, learn subwords");
  prep_cmd->add_option("--manifest", prep_manifest, "Input manifest (.wav or .stfb features)")->required();
  prep_cmd->add_option("--out", prep_out, "Output directory")->required();
  prep_cmd->add_option("--vocab-size", prep_vocab, "Subword vocabulary size")->capture_default_str();
  prep_cmd->add_option("--subwords", prep_subwords, "Reuse an existing subword model instead of learning one");

  // train / finetune
  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
  add_train_options(train_cmd, train_args);

  TrainArgs ft_args;
  std::string ft_checkpoint;
  double ft_lr_scale = 0.1;
  auto* ft_cmd = app.add_subcommand("finetune", "Continue training a checkpoint with a reduced learning rate");
  add_train_options(ft_cmd, ft_args);
  ft_cmd->add_option("--checkpoint", ft_checkpoint, "Checkpoint to resume from")->required();
  ft_cmd->add_option("--lr-scale", ft_lr_scale, "Multiplier on the learning-rate schedule")->capture_default_str();

  // average
  std::string avg_dir, avg_out;
  size_t avg_last = kDefaultAverageWindow;
  std::vector<std::string> avg_inputs;
  auto* avg_cmd = app.add_subcommand("average", "Average checkpoints");
  auto* avg_dir_opt = avg_cmd->add_option("--dir", avg_dir, "Directory of per-epoch checkpoints");
  avg_cmd->add_option("--last", avg_last, "Number of final epochs to average")->capture_default_str();
  auto* avg_inputs_opt = avg_cmd->add_option("--inputs", avg_inputs, "Explicit checkpoint list");
  avg_dir_opt->excludes(avg_inputs_opt);
  avg_cmd->add_option("--out", avg_out, "Output checkpoint")->required();

  // decode / ensemble-decode
  DecodeArgs dec_args;
  std::string dec_checkpoint;
  auto* dec_cmd = app.add_subcommand("decode", "Beam-search decode with one model");
  dec_cmd->add_option("--checkpoint", dec_checkpoint)->required();
  add_decode_options(dec_cmd, dec_args);

  DecodeArgs ens_args;
  std::vector<std::string> ens_checkpoints;
  auto* ens_cmd = app.add_subcommand("ensemble-decode", "Beam-search decode with an ensemble of models");
  ens_cmd->add_option("--checkpoints", ens_checkpoints, "Checkpoint paths")->required();
  add_decode_options(ens_cmd, ens_args);

  // ctc-decode
  std::string ctc_checkpoint, ctc_manifest, ctc_subwords, ctc_output;
  auto* ctc_cmd = app.add_subcommand("ctc-decode", "Greedy CTC decode of the encoder's CTC head");
  ctc_cmd->add_option("--checkpoint", ctc_checkpoint)->required();
  ctc_cmd->add_option("--manifest", ctc_manifest)->required();
  ctc_cmd->add_option("--subwords", ctc_subwords)->required();
  ctc_cmd->add_option("--output", ctc_output, "Output file (default stdout)");

  // bleu
  std::string bleu_hyp, bleu_ref, bleu_decoded, bleu_manifest;
  auto* bleu_cmd = app.add_subcommand("bleu", "Corpus BLEU");
  auto* hyp_opt = bleu_cmd->add_option("--hyp", bleu_hyp, "Hypotheses, one per line");
  auto* ref_opt = bleu_cmd->add_option("--ref", bleu_ref, "References, one per line");
  auto* decoded_opt = bleu_cmd->add_option("--decoded", bleu_decoded, "Output of decode (id, text, score)");
  auto* bm_opt = bleu_cmd->add_option("--manifest", bleu_manifest, "Manifest with reference translations");
  hyp_opt->needs(ref_opt);
  ref_opt->needs(hyp_opt);
  decoded_opt->needs(bm_opt);
  bm_opt->needs(decoded_opt);
  decoded_opt->excludes(hyp_opt);

  // gradcheck
  double gc_eps = 1e-5, gc_threshold = 1e-4;
  uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and the tiny model");
  gc_cmd->add_option("--eps", gc_eps)->capture_default_str();
  gc_cmd->add_option("--threshold", gc_threshold)->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed)->capture_default_str();

  // ctc-oracle
  size_t co_trials = 100;
  uint64_t co_seed = 1;
  double co_tol = 1e-8;
  auto* co_cmd = app.add_subcommand("ctc-oracle", "Compare CTC loss with brute-force alignment enumeration");
  co_cmd->add_option("--trials", co_trials)->capture_default_str();
  co_cmd->add_option("--seed", co_seed)->capture_default_str();
  co_cmd->add_option("--tolerance", co_tol)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    err << "usage: sttk <subcommand> [options]; subcommands: toy-gen prepare train finetune average "
           "decode ensemble-decode ctc-decode bleu gradcheck ctc-oracle (use --help for details)\n";
    return 2;
  }

  try {
    if (*toy_cmd) {
      if (toy_identity) {
        toy.mapping.resize(toy.n_symbols);
        for (size_t i = 0; i < toy.n_symbols; ++i) toy.mapping[i] = i;
      }
      const ToyCorpus c = toy_generate(toy, toy_out);
      out << "wrote " << c.train.string() << ", " << c.dev.string() << ", " << c.test.string() << '\n';
    } else if (*prep_cmd) {
      const Manifest manifest = read_manifest(prep_manifest);
      const fs::path out_dir = prep_out;
      fs::create_directories(out_dir / "feats");
      std::vector<ManifestEntry> prepared;
      for (ManifestEntry e : manifest.entries) {
        const fs::path src = manifest.resolve(e);
        if (src.extension() == ".wav") {
          const Waveform wav = read_wav(src);
          FrontendConfig fc;
          fc.sample_rate = wav.sample_rate;
          fc.mel_high = wav.sample_rate / 2.0;
          const FeatureMatrix f = logmel(wav.samples, fc);
          const std::string rel = "feats/" + e.id + ".stfb";
          write_features(out_dir / rel, f);
          e.features = rel;
          e.n_frames = f.frames;
        } else {
          const FeatureMatrix f = read_features(src);
          if (e.n_frames && *e.n_frames != f.frames) {
            throw ManifestError("entry '" + e.id + "' declares " + std::to_string(*e.n_frames) +
                                " frames but " + src.string() + " has " + std::to_string(f.frames));
          }
          e.n_frames = f.frames;
          e.features = fs::absolute(src).string();
        }
        prepared.push_back(std::move(e));
      }
      const auto kept = filter_utterances(prepared);
      write_manifest(out_dir / "manifest.tsv", kept);
      SubwordModel sw;
      if (prep_subwords.empty()) {
        std::vector<std::string> corpus;
        for (const auto& e : kept) {
          corpus.push_back(normalize_for_ctc(e.transcript));
          corpus.push_back(e.translation);
        }
        sw = train_subwords(corpus, prep_vocab);
      } else {
        sw = load_subwords(prep_subwords);
      }
      sw.save(out_dir / "vocab.txt", out_dir / "merges.txt");
      out << "kept " << kept.size() << " of " << prepared.size() << " utterances; vocabulary "
          << sw.vocab.size() << " entries, " << sw.merges.size() << " merges\n";
    } else if (*train_cmd) {
      TrainConfig cfg = load_config_or_default(train_args.config);
      apply_overrides(train_args, cfg);
      const SubwordModel sw = load_subwords(train_args.subwords);
      cfg.model.vocab_size = sw.vocab.size();
      SpeechTranslationModel model(cfg.model, cfg.seed);
      run_training(model, cfg, train_args, sw, 0, out);
    } else if (*ft_cmd) {
      TrainConfig cfg = load_config_or_default(ft_args.config);
      apply_overrides(ft_args, cfg);
      cfg.lr_scale = ft_lr_scale;
      const Checkpoint ckpt = load_checkpoint(ft_checkpoint);
      auto model = model_from_checkpoint(ckpt);
      cfg.model = model->config();
      cfg.normalize_features = ckpt.metadata.value("normalize_features", cfg.normalize_features);
      const SubwordModel sw = load_subwords(ft_args.subwords);
      check_vocab(*model, sw, ft_checkpoint);
      run_training(*model, cfg, ft_args, sw, 0, out);
    } else if (*avg_cmd) {
      std::vector<fs::path> paths;
      if (!avg_inputs.empty()) {
        paths.assign(avg_inputs.begin(), avg_inputs.end());
      } else if (!avg_dir.empty()) {
        paths = last_epoch_checkpoints(avg_dir, avg_last);
      } else {
        throw ConfigError("average: give --dir or --inputs");
      }
      save_checkpoint(avg_out, average_checkpoints(paths));
      out << "averaged " << paths.size() << " checkpoint(s) into " << avg_out << '\n';
    } else if (*dec_cmd) {
      run_decode({dec_checkpoint}, dec_args, out);
    } else if (*ens_cmd) {
      run_decode(ens_checkpoints, ens_args, out);
    } else if (*ctc_cmd) {
      const SubwordModel sw = load_subwords(ctc_subwords);
      const LoadedModel m = load_model(ctc_checkpoint);
      check_vocab(*m.model, sw, ctc_checkpoint);
      const Dataset data = load_eval_set(ctc_manifest, sw, m.normalize_features);
      std::ostream* sink = nullptr;
      auto file = open_output(ctc_output, out, sink);
      NoGradGuard no_grad;
      size_t errors = 0, ref_tokens = 0;
      for (const auto& ex : data.examples) {
        const auto ids = ctc_greedy_decode(m.model->encode(ex.features).ctc_logits);
        errors += edit_distance(ids, ex.ctc_target);
        ref_tokens += ex.ctc_target.size();
        *sink << ex.id << '\t' << decode(sw, ids) << '\n';
      }
      if (ref_tokens > 0) {
        err << "ctc token accuracy "
            << std::max(0.0, 1.0 - static_cast<double>(errors) / static_cast<double>(ref_tokens)) << '\n';
      }
    } else if (*bleu_cmd) {
      std::vector<std::string> hyps, refs;
      if (!bleu_decoded.empty()) {
        const Manifest manifest = read_manifest(bleu_manifest);
        std::map<std::string, std::string> ref_by_id;
        for (const auto& e : manifest.entries) ref_by_id[e.id] = e.translation;
        for (const auto& line : read_lines(bleu_decoded)) {
          if (line.empty()) continue;
          const auto t1 = line.find('\t');
          const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
          if (t1 == std::string::npos || t2 == std::string::npos) {
            throw FormatError(bleu_decoded + ": expected id<TAB>hypothesis<TAB>score, got '" + line + "'");
          }
          const std::string id = line.substr(0, t1);
          auto it = ref_by_id.find(id);
          if (it == ref_by_id.end()) throw ManifestError("no reference for decoded id '" + id + "'");
          hyps.push_back(line.substr(t1 + 1, t2 - t1 - 1));
          refs.push_back(it->second);
        }
      } else if (!bleu_hyp.empty()) {
        hyps = read_lines(bleu_hyp);
        refs = read_lines(bleu_ref);
      } else {
        throw ConfigError("bleu: give --hyp/--ref or --decoded/--manifest");
      }
      const BleuStats st = corpus_bleu_stats(hyps, refs);
      char buf[256];
      std::snprintf(buf, sizeof buf, "BLEU = %.2f %.1f/%.1f/%.1f/%.1f (BP = %.3f hyp_len = %zu ref_len = %zu)",
                    st.bleu, 100 * st.precisions[0], 100 * st.precisions[1], 100 * st.precisions[2],
                    100 * st.precisions[3], st.brevity_penalty, st.hyp_length, st.ref_length);
      out << buf << '\n';
    } else if (*gc_cmd) {
      double worst = 0.0;
      for (const auto& r : op_gradcheck_suite(gc_seed, gc_eps)) {
        out << r.name << " max_rel_error " << r.result.max_rel_error << '\n';
        worst = std::max(worst, r.result.max_rel_error);
      }
      const GradCheckResult model = tiny_model_gradcheck(gc_seed, gc_eps);
      out << "tiny_model (" << model.coordinates << " coordinates) max_rel_error " << model.max_rel_error
          << '\n';
      worst = std::max(worst, model.max_rel_error);
      if (!(worst < gc_threshold)) {
        err << "gradcheck failed: worst relative error " << worst << " >= " << gc_threshold << '\n';
        return 1;
      }
    } else if (*co_cmd) {
      const CtcOracleReport r = ctc_oracle_sweep(co_trials, co_seed);
      out << "cases " << r.cases << " infeasible " << r.infeasible << " disagreements " << r.disagreements
          << " max_abs_diff " << r.max_abs_diff << '\n';
      if (r.disagreements > 0 || !(r.max_abs_diff < co_tol)) {
        err << "ctc-oracle failed: max difference " << r.max_abs_diff << ", " << r.disagreements
            << " feasibility disagreements\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace sttk
