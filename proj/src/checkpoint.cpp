#include "sttk/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>

#include "sttk/detail/binary_io.hpp"
#include "sttk/errors.hpp"

namespace sttk {

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write("STCK", 4);
  detail::write_le<uint32_t>(out, ckpt.format_version);
  detail::write_le<uint32_t>(out, static_cast<uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (e.name.size() > UINT16_MAX) throw FormatError("checkpoint entry name too long: " + e.name);
    if (e.shape.size() > UINT8_MAX) throw FormatError("checkpoint entry rank too large: " + e.name);
    if (numel(e.shape) != e.values.size()) {
      throw FormatError("checkpoint entry " + e.name + " has inconsistent shape");
    }
    detail::write_le<uint16_t>(out, static_cast<uint16_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<uint8_t>(out, static_cast<uint8_t>(e.shape.size()));
    for (size_t d : e.shape) detail::write_le<uint32_t>(out, static_cast<uint32_t>(d));
    out.write(reinterpret_cast<const char*>(e.values.data()),
              static_cast<std::streamsize>(e.values.size() * sizeof(float)));
  }
  const std::string meta = ckpt.metadata.dump();
  detail::write_le<uint32_t>(out, static_cast<uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  detail::expect_magic(in, "STCK");
  Checkpoint ckpt;
  ckpt.format_version = detail::read_le<uint32_t>(in, "version");
  if (ckpt.format_version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " +
                      std::to_string(ckpt.format_version));
  }
  const auto count = detail::read_le<uint32_t>(in, "entry count");
  for (uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = detail::read_le<uint16_t>(in, "name length");
    e.name.resize(name_len);
    if (!in.read(e.name.data(), name_len)) throw FormatError(path.string() + ": truncated name");
    const auto rank = detail::read_le<uint8_t>(in, "rank");
    for (uint8_t r = 0; r < rank; ++r) e.shape.push_back(detail::read_le<uint32_t>(in, "dim"));
    e.values.resize(numel(e.shape));
    if (!in.read(reinterpret_cast<char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(float)))) {
      throw FormatError(path.string() + ": truncated payload for " + e.name);
    }
    if (ckpt.find(e.name)) throw FormatError(path.string() + ": duplicate entry " + e.name);
    ckpt.entries.push_back(std::move(e));
  }
  const auto meta_len = detail::read_le<uint32_t>(in, "metadata length");
  std::string meta(meta_len, '\0');
  if (!in.read(meta.data(), meta_len)) throw FormatError(path.string() + ": truncated metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad metadata: " + e.what());
  }
  return ckpt;
}

std::string config_digest(const std::string& text) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Checkpoint snapshot(const SpeechTranslationModel& model, nlohmann::json metadata) {
  Checkpoint ckpt;
  for (const auto& [name, t] : model.parameters().entries()) {
    CheckpointEntry e{name, t.shape(), {}};
    e.values.reserve(t.size());
    for (double v : t.data()) e.values.push_back(static_cast<float>(v));
    ckpt.entries.push_back(std::move(e));
  }
  const nlohmann::json cfg = model.config();
  metadata["model_config"] = cfg;
  metadata["config_digest"] = config_digest(cfg.dump());
  ckpt.metadata = std::move(metadata);
  return ckpt;
}

void restore(SpeechTranslationModel& model, const Checkpoint& ckpt) {
  const auto& params = model.parameters().entries();
  std::vector<std::string> problems;
  if (params.size() != ckpt.entries.size()) {
    problems.push_back("entry count " + std::to_string(ckpt.entries.size()) + " vs model " +
                       std::to_string(params.size()));
  }
  for (const auto& [name, t] : params) {
    const CheckpointEntry* e = ckpt.find(name);
    if (!e) {
      problems.push_back("missing " + name);
    } else if (e->shape != t.shape()) {
      problems.push_back(name + " " + shape_str(e->shape) + " vs " + shape_str(t.shape()));
    }
  }
  if (!problems.empty()) {
    std::string msg = "checkpoint does not fit model:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw IncompatibleCheckpointsError(msg);
  }
  for (const auto& [name, t] : params) {
    const CheckpointEntry* e = ckpt.find(name);
    Tensor target = t;
    auto dst = target.mutable_data();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] = e->values[i];
  }
}

std::unique_ptr<SpeechTranslationModel> model_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("model_config")) {
    throw FormatError("checkpoint metadata has no model_config");
  }
  const ModelConfig cfg = ckpt.metadata.at("model_config").get<ModelConfig>();
  auto model = std::make_unique<SpeechTranslationModel>(cfg, 0);
  restore(*model, ckpt);
  return model;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts,
                               const std::vector<std::string>& sources) {
  if (ckpts.empty()) throw IncompatibleCheckpointsError("average: no checkpoints given");
  const Checkpoint& ref = ckpts.front();
  std::vector<std::string> problems;
  for (size_t c = 1; c < ckpts.size(); ++c) {
    const std::string label = c < sources.size() ? sources[c] : "#" + std::to_string(c);
    if (ckpts[c].entries.size() != ref.entries.size()) {
      problems.push_back(label + ": entry count " + std::to_string(ckpts[c].entries.size()) +
                         " vs " + std::to_string(ref.entries.size()));
    }
    for (const auto& e : ref.entries) {
      const CheckpointEntry* other = ckpts[c].find(e.name);
      if (!other) {
        problems.push_back(label + ": missing " + e.name);
      } else if (other->shape != e.shape) {
        problems.push_back(label + ": " + e.name + " " + shape_str(other->shape) + " vs " +
                           shape_str(e.shape));
      }
    }
    for (const auto& e : ckpts[c].entries) {
      if (!ref.find(e.name)) problems.push_back(label + ": unexpected " + e.name);
    }
  }
  if (!problems.empty()) {
    std::string msg = "incompatible checkpoints:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw IncompatibleCheckpointsError(msg);
  }

  Checkpoint avg;
  avg.metadata = ref.metadata;
  avg.metadata["averaged_from"] = sources;
  avg.metadata["averaged_count"] = ckpts.size();
  std::vector<const CheckpointEntry*> column(ckpts.size());
  std::vector<double> values(ckpts.size());
  for (const auto& e : ref.entries) {
    for (size_t c = 0; c < ckpts.size(); ++c) column[c] = ckpts[c].find(e.name);
    CheckpointEntry out{e.name, e.shape, std::vector<float>(e.values.size())};
    for (size_t i = 0; i < e.values.size(); ++i) {
      for (size_t c = 0; c < ckpts.size(); ++c) values[c] = column[c]->values[i];
      std::sort(values.begin(), values.end());
      double total = 0.0;
      for (double v : values) total += v;
      out.values[i] = static_cast<float>(total / static_cast<double>(ckpts.size()));
    }
    avg.entries.push_back(std::move(out));
  }
  return avg;
}

Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths) {
  std::vector<Checkpoint> ckpts;
  std::vector<std::string> sources;
  for (const auto& p : paths) {
    ckpts.push_back(load_checkpoint(p));
    sources.push_back(p.string());
  }
  return average_checkpoints(ckpts, sources);
}

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, size_t epoch) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "checkpoint_epoch%04zu.stck", epoch);
  return dir / buf;
}

std::vector<std::filesystem::path> last_epoch_checkpoints(const std::filesystem::path& dir,
                                                          size_t count) {
  static const std::regex pattern(R"(checkpoint_epoch(\d+)\.stck)");
  std::map<size_t, std::filesystem::path> by_epoch;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) by_epoch[std::stoul(m[1].str())] = entry.path();
  }
  std::vector<std::filesystem::path> out;
  for (const auto& [epoch, path] : by_epoch) out.push_back(path);
  if (out.size() > count) out.erase(out.begin(), out.end() - static_cast<long>(count));
  return out;
}

}  // namespace sttk
