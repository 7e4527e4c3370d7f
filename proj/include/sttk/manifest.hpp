#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sttk {

// One utterance of a dataset manifest (UTF-8 TSV with header
// `id features n_frames transcript translation`).
struct ManifestEntry {
  std::string id;
  std::string features;  // path, relative to the manifest directory unless absolute
  std::optional<size_t> n_frames;
  std::string transcript;
  std::string translation;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries);

}  // namespace sttk
