#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "sttk/model.hpp"

namespace sttk {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// Named parameters stored at 32-bit precision plus a JSON metadata block
// (step, epoch, config digest, model config, source list for averages).
struct Checkpoint {
  uint32_t format_version = kCheckpointVersion;
  std::vector<CheckpointEntry> entries;
  nlohmann::json metadata = nlohmann::json::object();

  const CheckpointEntry* find(const std::string& name) const;
};

// Binary layout (little-endian): "STCK", u32 version, u32 entry count; per
// entry u16 name length, name bytes, u8 rank, u32 dims[rank], f32 payload;
// then u32 metadata length and the metadata JSON text.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a of a string, printed as hex in metadata.
std::string config_digest(const std::string& text);

Checkpoint snapshot(const SpeechTranslationModel& model, nlohmann::json metadata = nlohmann::json::object());
// Copies every entry into the model's parameters; names and shapes must
// match exactly.
void restore(SpeechTranslationModel& model, const Checkpoint& ckpt);
// Rebuilds a model from the config stored in the checkpoint metadata.
std::unique_ptr<SpeechTranslationModel> model_from_checkpoint(const Checkpoint& ckpt);

// Elementwise arithmetic mean. Per element the inputs are summed in sorted
// order, so the result does not depend on the order of `ckpts`.
Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts,
                               const std::vector<std::string>& sources = {});
Checkpoint average_checkpoints(const std::vector<std::filesystem::path>& paths);

inline constexpr size_t kDefaultAverageWindow = 10;

std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, size_t epoch);
// The last `count` per-epoch checkpoints in `dir`, ordered by epoch.
std::vector<std::filesystem::path> last_epoch_checkpoints(const std::filesystem::path& dir,
                                                          size_t count = kDefaultAverageWindow);

}  // namespace sttk
